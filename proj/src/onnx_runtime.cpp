#include "periscope/onnx_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <unordered_map>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "onnx.pb.h"
#include "periscope/errors.hpp"

namespace periscope::onnx {

namespace fs = std::filesystem;
using Shape = std::vector<std::int64_t>;
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) {
    if (d < 0) throw ExtractionError("negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  return fmt::format("[{}]", fmt::join(s, ","));
}

}  // namespace

Tensor Tensor::floats(std::vector<std::int64_t> shape, std::vector<float> data) {
  if (numel(shape) != data.size()) throw ExtractionError("tensor data does not match shape " + shape_str(shape));
  Tensor t;
  t.dtype = DType::Float;
  t.shape = std::move(shape);
  t.f = std::move(data);
  return t;
}

Tensor Tensor::ints(std::vector<std::int64_t> shape, std::vector<std::int64_t> data) {
  if (numel(shape) != data.size()) throw ExtractionError("tensor data does not match shape " + shape_str(shape));
  Tensor t;
  t.dtype = DType::Int64;
  t.shape = std::move(shape);
  t.i = std::move(data);
  return t;
}

std::size_t Tensor::size() const { return numel(shape); }

namespace {

// ---------------------------------------------------------------------------
// Graph representation

struct Attribute {
  std::int64_t i = 0;
  float f = 0.0f;
  std::string s;
  std::vector<std::int64_t> ints;
  std::vector<float> floats;
  std::shared_ptr<const Tensor> t;
};

struct Node {
  std::string op;
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, Attribute> attrs;

  bool has(const std::string& key) const { return attrs.count(key) != 0; }
  std::int64_t attr_i(const std::string& key, std::int64_t def) const {
    const auto it = attrs.find(key);
    return it == attrs.end() ? def : it->second.i;
  }
  float attr_f(const std::string& key, float def) const {
    const auto it = attrs.find(key);
    return it == attrs.end() ? def : it->second.f;
  }
  std::string attr_s(const std::string& key, const std::string& def) const {
    const auto it = attrs.find(key);
    return it == attrs.end() ? def : it->second.s;
  }
  std::vector<std::int64_t> attr_ints(const std::string& key, std::vector<std::int64_t> def = {}) const {
    const auto it = attrs.find(key);
    return it == attrs.end() ? def : it->second.ints;
  }
};

struct Context {
  std::int64_t opset = 13;
};

using Inputs = std::vector<const Tensor*>;

// ---------------------------------------------------------------------------
// TensorProto decoding

template <typename T>
std::vector<T> unpack_raw(const std::string& raw, std::size_t n) {
  if (raw.size() != n * sizeof(T)) {
    throw FormatError(fmt::format("tensor raw data holds {} bytes, expected {}", raw.size(), n * sizeof(T)));
  }
  std::vector<T> out(n);
  if (n) std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::string read_external(const ::onnx::TensorProto& p, const fs::path& base_dir, std::size_t fallback_len) {
  std::string location;
  std::int64_t offset = 0, length = -1;
  for (const auto& kv : p.external_data()) {
    if (kv.key() == "location") location = kv.value();
    else if (kv.key() == "offset") offset = std::stoll(kv.value());
    else if (kv.key() == "length") length = std::stoll(kv.value());
  }
  if (location.empty()) throw FormatError("external tensor '" + p.name() + "' has no location");
  const fs::path path = base_dir / location;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open external tensor data: " + path.string());
  const std::size_t len = length < 0 ? fallback_len : static_cast<std::size_t>(length);
  std::string buf(len, '\0');
  in.seekg(offset);
  in.read(buf.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len) throw TruncationError("external tensor data truncated: " + path.string());
  return buf;
}

std::size_t element_size(int data_type) {
  switch (data_type) {
    case ::onnx::TensorProto::FLOAT:
    case ::onnx::TensorProto::INT32:
    case ::onnx::TensorProto::UINT32:
      return 4;
    case ::onnx::TensorProto::DOUBLE:
    case ::onnx::TensorProto::INT64:
    case ::onnx::TensorProto::UINT64:
      return 8;
    case ::onnx::TensorProto::INT16:
    case ::onnx::TensorProto::UINT16:
      return 2;
    case ::onnx::TensorProto::INT8:
    case ::onnx::TensorProto::UINT8:
    case ::onnx::TensorProto::BOOL:
      return 1;
    default:
      throw ExtractionError(fmt::format("unsupported tensor element type {}", data_type));
  }
}

template <typename Src>
std::vector<std::int64_t> widen(const std::vector<Src>& v) {
  return std::vector<std::int64_t>(v.begin(), v.end());
}

Tensor from_proto(const ::onnx::TensorProto& p, const fs::path& base_dir) {
  Shape shape(p.dims().begin(), p.dims().end());
  const std::size_t n = numel(shape);
  const int type = p.data_type();
  std::string raw;
  bool has_raw = false;
  if (p.data_location() == ::onnx::TensorProto::EXTERNAL) {
    raw = read_external(p, base_dir, n * element_size(type));
    has_raw = true;
  } else if (p.has_raw_data()) {
    raw = p.raw_data();
    has_raw = true;
  }
  switch (type) {
    case ::onnx::TensorProto::FLOAT:
      if (has_raw) return Tensor::floats(shape, unpack_raw<float>(raw, n));
      return Tensor::floats(shape, std::vector<float>(p.float_data().begin(), p.float_data().end()));
    case ::onnx::TensorProto::DOUBLE: {
      const auto d = has_raw ? unpack_raw<double>(raw, n)
                             : std::vector<double>(p.double_data().begin(), p.double_data().end());
      return Tensor::floats(shape, std::vector<float>(d.begin(), d.end()));
    }
    case ::onnx::TensorProto::INT64:
      if (has_raw) return Tensor::ints(shape, unpack_raw<std::int64_t>(raw, n));
      return Tensor::ints(shape, std::vector<std::int64_t>(p.int64_data().begin(), p.int64_data().end()));
    case ::onnx::TensorProto::UINT64:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::uint64_t>(raw, n)));
      return Tensor::ints(shape, std::vector<std::int64_t>(p.uint64_data().begin(), p.uint64_data().end()));
    case ::onnx::TensorProto::INT32:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::int32_t>(raw, n)));
      break;
    case ::onnx::TensorProto::UINT32:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::uint32_t>(raw, n)));
      break;
    case ::onnx::TensorProto::INT16:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::int16_t>(raw, n)));
      break;
    case ::onnx::TensorProto::UINT16:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::uint16_t>(raw, n)));
      break;
    case ::onnx::TensorProto::INT8:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::int8_t>(raw, n)));
      break;
    case ::onnx::TensorProto::UINT8:
    case ::onnx::TensorProto::BOOL:
      if (has_raw) return Tensor::ints(shape, widen(unpack_raw<std::uint8_t>(raw, n)));
      break;
    default:
      throw ExtractionError(fmt::format("tensor '{}' has unsupported element type {}", p.name(), type));
  }
  // small integer types without raw data live in int32_data
  return Tensor::ints(shape, std::vector<std::int64_t>(p.int32_data().begin(), p.int32_data().end()));
}

Node from_proto(const ::onnx::NodeProto& p, const fs::path& base_dir) {
  Node node;
  node.op = p.op_type();
  node.name = p.name();
  node.inputs.assign(p.input().begin(), p.input().end());
  node.outputs.assign(p.output().begin(), p.output().end());
  if (!p.domain().empty() && p.domain() != "ai.onnx") {
    throw ExtractionError(fmt::format("node '{}': unsupported operator domain '{}'", p.name(), p.domain()));
  }
  for (const auto& a : p.attribute()) {
    Attribute attr;
    attr.i = a.i();
    attr.f = a.f();
    attr.s = a.s();
    attr.ints.assign(a.ints().begin(), a.ints().end());
    attr.floats.assign(a.floats().begin(), a.floats().end());
    if (a.has_t()) attr.t = std::make_shared<const Tensor>(from_proto(a.t(), base_dir));
    node.attrs.emplace(a.name(), std::move(attr));
  }
  return node;
}

// ---------------------------------------------------------------------------
// Helpers

template <typename T>
std::vector<T>& storage(Tensor& t);
template <>
std::vector<float>& storage<float>(Tensor& t) {
  return t.f;
}
template <>
std::vector<std::int64_t>& storage<std::int64_t>(Tensor& t) {
  return t.i;
}
template <typename T>
const std::vector<T>& storage(const Tensor& t) {
  return storage<T>(const_cast<Tensor&>(t));
}

template <typename Fn>
decltype(auto) dispatch(Tensor::DType d, Fn&& fn) {
  if (d == Tensor::DType::Float) return fn(float{});
  return fn(std::int64_t{});
}

template <typename T>
Tensor make(Shape shape, std::vector<T> data) {
  if constexpr (std::is_same_v<T, float>) {
    return Tensor::floats(std::move(shape), std::move(data));
  } else {
    return Tensor::ints(std::move(shape), std::move(data));
  }
}

const Tensor& in(const Inputs& inputs, std::size_t k) {
  if (k >= inputs.size() || !inputs[k]) throw ExtractionError(fmt::format("missing input {}", k));
  return *inputs[k];
}

const Tensor* opt_in(const Inputs& inputs, std::size_t k) { return k < inputs.size() ? inputs[k] : nullptr; }

const Tensor& float_in(const Inputs& inputs, std::size_t k) {
  const Tensor& t = in(inputs, k);
  if (t.dtype != Tensor::DType::Float) throw ExtractionError(fmt::format("input {} must be float", k));
  return t;
}

std::vector<std::int64_t> as_ints(const Tensor& t) {
  if (t.dtype == Tensor::DType::Int64) return t.i;
  std::vector<std::int64_t> out;
  for (float v : t.f) out.push_back(static_cast<std::int64_t>(v));
  return out;
}

std::vector<float> as_floats(const Tensor& t) {
  if (t.dtype == Tensor::DType::Float) return t.f;
  return std::vector<float>(t.i.begin(), t.i.end());
}

std::size_t norm_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ExtractionError(fmt::format("axis {} out of range for rank {}", axis, rank));
  return static_cast<std::size_t>(axis);
}

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

Shape broadcast_shape(const std::vector<const Shape*>& shapes) {
  std::size_t rank = 0;
  for (const auto* s : shapes) rank = std::max(rank, s->size());
  Shape out(rank, 1);
  for (const auto* s : shapes) {
    const std::size_t off = rank - s->size();
    for (std::size_t d = 0; d < s->size(); ++d) {
      const auto v = (*s)[d];
      auto& o = out[off + d];
      if (v == o || v == 1) continue;
      if (o == 1) {
        o = v;
        continue;
      }
      throw ExtractionError("shapes are not broadcastable");
    }
  }
  return out;
}

// Strides of `in` laid over `out`, zero along broadcast dimensions.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto st = contiguous_strides(in);
  std::vector<std::int64_t> res(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t d = 0; d < in.size(); ++d) res[off + d] = in[d] == 1 ? 0 : st[d];
  return res;
}

// Calls fn(element, offsets) for every element of `out`, where offsets[k]
// walks `strides[k]`. `base` seeds the offsets.
template <typename Fn>
void for_each_index(const Shape& out, const std::vector<std::vector<std::int64_t>>& strides, Fn&& fn,
                    std::vector<std::int64_t> base = {}) {
  const std::size_t n = numel(out);
  const std::size_t k = strides.size();
  std::vector<std::int64_t> off = base.empty() ? std::vector<std::int64_t>(k, 0) : std::move(base);
  std::vector<std::int64_t> idx(out.size(), 0);
  for (std::size_t e = 0; e < n; ++e) {
    fn(e, off);
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) {
        for (std::size_t j = 0; j < k; ++j) off[j] += strides[j][d];
        break;
      }
      for (std::size_t j = 0; j < k; ++j) off[j] -= strides[j][d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

template <typename T, typename Op>
std::vector<T> broadcast_apply(const std::vector<T>& a, const Shape& sa, const std::vector<T>& b, const Shape& sb,
                               const Shape& out, Op op) {
  std::vector<T> res(numel(out));
  if (sa == sb) {
    for (std::size_t e = 0; e < res.size(); ++e) res[e] = op(a[e], b[e]);
  } else if (b.size() == 1 && sa == out) {
    for (std::size_t e = 0; e < res.size(); ++e) res[e] = op(a[e], b[0]);
  } else if (a.size() == 1 && sb == out) {
    for (std::size_t e = 0; e < res.size(); ++e) res[e] = op(a[0], b[e]);
  } else {
    for_each_index(out, {broadcast_strides(sa, out), broadcast_strides(sb, out)},
                   [&](std::size_t e, const std::vector<std::int64_t>& off) { res[e] = op(a[off[0]], b[off[1]]); });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Op>
std::vector<Tensor> unary(const Inputs& inputs, Op op) {
  const Tensor& x = float_in(inputs, 0);
  Tensor y = x;
  for (auto& v : y.f) v = op(v);
  return {std::move(y)};
}

enum class Arith { Add, Sub, Mul, Div, Pow };

std::vector<Tensor> arith(const Inputs& inputs, Arith kind) {
  const Tensor& a = in(inputs, 0);
  const Tensor& b = in(inputs, 1);
  const Shape out = broadcast_shape({&a.shape, &b.shape});
  if (a.dtype == Tensor::DType::Int64 && b.dtype == Tensor::DType::Int64 && kind != Arith::Pow) {
    auto op = [kind](std::int64_t x, std::int64_t y) -> std::int64_t {
      switch (kind) {
        case Arith::Add: return x + y;
        case Arith::Sub: return x - y;
        case Arith::Mul: return x * y;
        default:
          if (y == 0) throw ExtractionError("integer division by zero");
          return x / y;
      }
    };
    return {Tensor::ints(out, broadcast_apply(a.i, a.shape, b.i, b.shape, out, op))};
  }
  const auto fa = as_floats(a);
  const auto fb = as_floats(b);
  auto op = [kind](float x, float y) -> float {
    switch (kind) {
      case Arith::Add: return x + y;
      case Arith::Sub: return x - y;
      case Arith::Mul: return x * y;
      case Arith::Div: return x / y;
      default: return y == 2.0f ? x * x : std::pow(x, y);
    }
  };
  return {Tensor::floats(out, broadcast_apply(fa, a.shape, fb, b.shape, out, op))};
}

enum class Compare { Equal, Less, Greater };

std::vector<Tensor> compare(const Inputs& inputs, Compare kind) {
  const Tensor& a = in(inputs, 0);
  const Tensor& b = in(inputs, 1);
  const Shape out = broadcast_shape({&a.shape, &b.shape});
  auto cmp = [kind](auto x, auto y) -> std::int64_t {
    switch (kind) {
      case Compare::Equal: return x == y;
      case Compare::Less: return x < y;
      default: return x > y;
    }
  };
  std::vector<std::int64_t> res(numel(out));
  auto run = [&](const auto& va, const auto& vb) {
    for_each_index(out, {broadcast_strides(a.shape, out), broadcast_strides(b.shape, out)},
                   [&](std::size_t e, const std::vector<std::int64_t>& off) { res[e] = cmp(va[off[0]], vb[off[1]]); });
  };
  if (a.dtype == Tensor::DType::Int64 && b.dtype == Tensor::DType::Int64) {
    run(a.i, b.i);
  } else {
    run(as_floats(a), as_floats(b));
  }
  return {Tensor::ints(out, std::move(res))};
}

std::vector<Tensor> op_where(const Inputs& inputs) {
  const Tensor& c = in(inputs, 0);
  const Tensor& x = in(inputs, 1);
  const Tensor& y = in(inputs, 2);
  if (x.dtype != y.dtype) throw ExtractionError("Where branches differ in type");
  const Shape out = broadcast_shape({&c.shape, &x.shape, &y.shape});
  const auto cond = as_ints(c);
  return {dispatch(x.dtype, [&]<typename T>(T) {
    const auto& vx = storage<T>(x);
    const auto& vy = storage<T>(y);
    std::vector<T> res(numel(out));
    for_each_index(out,
                   {broadcast_strides(c.shape, out), broadcast_strides(x.shape, out), broadcast_strides(y.shape, out)},
                   [&](std::size_t e, const std::vector<std::int64_t>& off) {
                     res[e] = cond[off[0]] ? vx[off[1]] : vy[off[2]];
                   });
    return make<T>(out, std::move(res));
  })};
}

std::vector<Tensor> op_cast(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const auto to = node.attr_i("to", ::onnx::TensorProto::FLOAT);
  if (to == ::onnx::TensorProto::FLOAT || to == ::onnx::TensorProto::DOUBLE) {
    return {Tensor::floats(x.shape, as_floats(x))};
  }
  if (to == ::onnx::TensorProto::BOOL) {
    std::vector<std::int64_t> res(x.size());
    for (std::size_t e = 0; e < res.size(); ++e) {
      res[e] = x.dtype == Tensor::DType::Float ? x.f[e] != 0.0f : x.i[e] != 0;
    }
    return {Tensor::ints(x.shape, std::move(res))};
  }
  element_size(static_cast<int>(to));  // rejects unsupported targets
  return {Tensor::ints(x.shape, as_ints(x))};
}

// ---------------------------------------------------------------------------
// Linear algebra

std::vector<Tensor> op_matmul(const Inputs& inputs) {
  const Tensor& a = float_in(inputs, 0);
  const Tensor& b = float_in(inputs, 1);
  Shape sa = a.shape, sb = b.shape;
  const bool a_vec = sa.size() == 1, b_vec = sb.size() == 1;
  if (a_vec) sa.insert(sa.begin(), 1);
  if (b_vec) sb.push_back(1);
  if (sa.size() < 2 || sb.size() < 2) throw ExtractionError("MatMul needs inputs of rank >= 1");
  const auto m = sa[sa.size() - 2], k = sa.back(), k2 = sb[sb.size() - 2], n = sb.back();
  if (k != k2) throw ExtractionError(fmt::format("MatMul inner dims differ: {} vs {}", shape_str(a.shape), shape_str(b.shape)));
  const Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  const Shape batch = broadcast_shape({&ba, &bb});
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  std::vector<float> res(numel(out));
  const auto mk = m * k, kn = k * n, mn = m * n;
  for_each_index(batch, {broadcast_strides(ba, batch), broadcast_strides(bb, batch)},
                 [&](std::size_t e, const std::vector<std::int64_t>& off) {
                   Eigen::Map<const RowMat> ma(a.f.data() + off[0] * mk, m, k);
                   Eigen::Map<const RowMat> mb(b.f.data() + off[1] * kn, k, n);
                   Eigen::Map<RowMat> mo(res.data() + static_cast<std::int64_t>(e) * mn, m, n);
                   mo.noalias() = ma * mb;
                 });
  if (a_vec) out.erase(out.end() - 2);
  if (b_vec) out.pop_back();
  return {Tensor::floats(out, std::move(res))};
}

std::vector<Tensor> op_gemm(const Node& node, const Inputs& inputs) {
  const Tensor& a = float_in(inputs, 0);
  const Tensor& b = float_in(inputs, 1);
  if (a.rank() != 2 || b.rank() != 2) throw ExtractionError("Gemm needs 2-D inputs");
  const bool ta = node.attr_i("transA", 0) != 0, tb = node.attr_i("transB", 0) != 0;
  const float alpha = node.attr_f("alpha", 1.0f), beta = node.attr_f("beta", 1.0f);
  Eigen::Map<const RowMat> ma(a.f.data(), a.shape[0], a.shape[1]);
  Eigen::Map<const RowMat> mb(b.f.data(), b.shape[0], b.shape[1]);
  RowMat res = ta ? (tb ? RowMat(ma.transpose() * mb.transpose()) : RowMat(ma.transpose() * mb))
                  : (tb ? RowMat(ma * mb.transpose()) : RowMat(ma * mb));
  if (alpha != 1.0f) res *= alpha;
  const Shape out{res.rows(), res.cols()};
  std::vector<float> data(res.data(), res.data() + res.size());
  if (const Tensor* c = opt_in(inputs, 2)) {
    const auto fc = as_floats(*c);
    data = broadcast_apply(data, out, fc, c->shape, out, [beta](float x, float y) { return x + beta * y; });
  }
  return {Tensor::floats(out, std::move(data))};
}

// ---------------------------------------------------------------------------
// Convolution and pooling

struct Window2d {
  std::int64_t kh, kw, sh, sw, dh, dw, pt, pl, pb, pr, oh, ow;
};

Window2d window(const Node& node, std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw, bool pooling) {
  Window2d g{};
  g.kh = kh;
  g.kw = kw;
  const auto strides = node.attr_ints("strides", {1, 1});
  const auto dil = node.attr_ints("dilations", {1, 1});
  auto pads = node.attr_ints("pads", {0, 0, 0, 0});
  if (strides.size() != 2 || dil.size() != 2 || pads.size() != 4) throw ExtractionError("only 2-D windows are supported");
  g.sh = strides[0];
  g.sw = strides[1];
  g.dh = dil[0];
  g.dw = dil[1];
  const auto ekh = g.dh * (kh - 1) + 1, ekw = g.dw * (kw - 1) + 1;
  const auto auto_pad = node.attr_s("auto_pad", "NOTSET");
  if (auto_pad == "VALID") {
    pads = {0, 0, 0, 0};
  } else if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
    const auto th = std::max<std::int64_t>(0, ((h + g.sh - 1) / g.sh - 1) * g.sh + ekh - h);
    const auto tw = std::max<std::int64_t>(0, ((w + g.sw - 1) / g.sw - 1) * g.sw + ekw - w);
    const bool upper = auto_pad == "SAME_UPPER";
    pads = {upper ? th / 2 : th - th / 2, upper ? tw / 2 : tw - tw / 2, upper ? th - th / 2 : th / 2,
            upper ? tw - tw / 2 : tw / 2};
  } else if (auto_pad != "NOTSET") {
    throw ExtractionError("unsupported auto_pad " + auto_pad);
  }
  g.pt = pads[0];
  g.pl = pads[1];
  g.pb = pads[2];
  g.pr = pads[3];
  const bool ceil_mode = pooling && node.attr_i("ceil_mode", 0) != 0;
  auto extent = [&](std::int64_t size, std::int64_t p0, std::int64_t p1, std::int64_t ek, std::int64_t s) {
    const auto span = size + p0 + p1 - ek;
    if (span < 0) throw ExtractionError("window larger than padded input");
    auto o = (ceil_mode ? (span + s - 1) / s : span / s) + 1;
    // the last window must start inside the input or the leading pad
    if (ceil_mode && (o - 1) * s >= size + p0) --o;
    return o;
  };
  g.oh = extent(h, g.pt, g.pb, ekh, g.sh);
  g.ow = extent(w, g.pl, g.pr, ekw, g.sw);
  return g;
}

std::vector<Tensor> op_conv(const Node& node, const Inputs& inputs) {
  const Tensor& x = float_in(inputs, 0);
  const Tensor& wt = float_in(inputs, 1);
  const Tensor* bias = opt_in(inputs, 2);
  if (x.rank() != 4 || wt.rank() != 4) throw ExtractionError("only 2-D convolution is supported");
  const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const auto m = wt.shape[0], cg = wt.shape[1], kh = wt.shape[2], kw = wt.shape[3];
  const auto groups = node.attr_i("group", 1);
  if (groups < 1 || c != cg * groups || m % groups != 0) {
    throw ExtractionError(fmt::format("Conv channel mismatch: input {}, weights {}", shape_str(x.shape), shape_str(wt.shape)));
  }
  const Window2d g = window(node, h, w, kh, kw, false);
  const auto mg = m / groups, rows = cg * kh * kw, cols = g.oh * g.ow;
  std::vector<float> out(static_cast<std::size_t>(n * m * cols));
  const bool pointwise = kh == 1 && kw == 1 && g.sh == 1 && g.sw == 1 && g.pt == 0 && g.pl == 0 && g.pb == 0 && g.pr == 0;
  RowMat col;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const float* src = x.f.data() + (b * c + gi * cg) * h * w;
      Eigen::Map<const RowMat> wmat(wt.f.data() + gi * mg * rows, mg, rows);
      Eigen::Map<RowMat> dst(out.data() + (b * m + gi * mg) * cols, mg, cols);
      if (pointwise) {
        dst.noalias() = wmat * Eigen::Map<const RowMat>(src, cg, cols);
        continue;
      }
      col.setZero(rows, cols);
      for (std::int64_t ch = 0; ch < cg; ++ch) {
        for (std::int64_t ki = 0; ki < kh; ++ki) {
          for (std::int64_t kj = 0; kj < kw; ++kj) {
            float* row = col.data() + ((ch * kh + ki) * kw + kj) * cols;
            for (std::int64_t oy = 0; oy < g.oh; ++oy) {
              const auto iy = oy * g.sh - g.pt + ki * g.dh;
              if (iy < 0 || iy >= h) continue;
              const float* line = src + (ch * h + iy) * w;
              for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                const auto ix = ox * g.sw - g.pl + kj * g.dw;
                if (ix >= 0 && ix < w) row[oy * g.ow + ox] = line[ix];
              }
            }
          }
        }
      }
      dst.noalias() = wmat * col;
    }
    if (bias) {
      if (bias->size() != static_cast<std::size_t>(m)) throw ExtractionError("Conv bias length mismatch");
      for (std::int64_t oc = 0; oc < m; ++oc) {
        float* p = out.data() + (b * m + oc) * cols;
        const float v = bias->f[static_cast<std::size_t>(oc)];
        for (std::int64_t e = 0; e < cols; ++e) p[e] += v;
      }
    }
  }
  return {Tensor::floats({n, m, g.oh, g.ow}, std::move(out))};
}

std::vector<Tensor> op_pool(const Node& node, const Inputs& inputs, bool max_pool) {
  const Tensor& x = float_in(inputs, 0);
  if (x.rank() != 4) throw ExtractionError("only 2-D pooling is supported");
  const auto ks = node.attr_ints("kernel_shape");
  if (ks.size() != 2) throw ExtractionError("pooling needs a 2-D kernel_shape");
  const auto planes = x.shape[0] * x.shape[1], h = x.shape[2], w = x.shape[3];
  const Window2d g = window(node, h, w, ks[0], ks[1], true);
  const bool include_pad = node.attr_i("count_include_pad", 0) != 0;
  std::vector<float> out(static_cast<std::size_t>(planes * g.oh * g.ow));
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = x.f.data() + p * h * w;
    float* dst = out.data() + p * g.oh * g.ow;
    for (std::int64_t oy = 0; oy < g.oh; ++oy) {
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        double acc = max_pool ? -std::numeric_limits<double>::infinity() : 0.0;
        std::int64_t valid = 0, padded = 0;
        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
          const auto iy = oy * g.sh - g.pt + ki * g.dh;
          for (std::int64_t kj = 0; kj < g.kw; ++kj) {
            const auto ix = ox * g.sw - g.pl + kj * g.dw;
            if (iy >= -g.pt && iy < h + g.pb && ix >= -g.pl && ix < w + g.pr) ++padded;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            const float v = src[iy * w + ix];
            acc = max_pool ? std::max(acc, static_cast<double>(v)) : acc + v;
            ++valid;
          }
        }
        if (!max_pool) acc /= static_cast<double>(std::max<std::int64_t>(1, include_pad ? padded : valid));
        dst[oy * g.ow + ox] = static_cast<float>(acc);
      }
    }
  }
  return {Tensor::floats({x.shape[0], x.shape[1], g.oh, g.ow}, std::move(out))};
}

std::vector<Tensor> op_global_pool(const Inputs& inputs, bool max_pool) {
  const Tensor& x = float_in(inputs, 0);
  if (x.rank() < 3) throw ExtractionError("global pooling needs rank >= 3");
  const auto planes = x.shape[0] * x.shape[1];
  const auto area = static_cast<std::int64_t>(x.size()) / std::max<std::int64_t>(1, planes);
  std::vector<float> out(static_cast<std::size_t>(planes));
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = x.f.data() + p * area;
    double acc = max_pool ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::int64_t e = 0; e < area; ++e) acc = max_pool ? std::max(acc, static_cast<double>(src[e])) : acc + src[e];
    out[static_cast<std::size_t>(p)] = static_cast<float>(max_pool ? acc : acc / static_cast<double>(area));
  }
  Shape shape(x.rank(), 1);
  shape[0] = x.shape[0];
  shape[1] = x.shape[1];
  return {Tensor::floats(shape, std::move(out))};
}

std::vector<Tensor> op_batchnorm(const Node& node, const Inputs& inputs) {
  const Tensor& x = float_in(inputs, 0);
  const Tensor& scale = float_in(inputs, 1);
  const Tensor& shift = float_in(inputs, 2);
  const Tensor& mean = float_in(inputs, 3);
  const Tensor& var = float_in(inputs, 4);
  if (x.rank() < 2) throw ExtractionError("BatchNormalization needs rank >= 2");
  const auto c = x.shape[1];
  const auto inner = static_cast<std::int64_t>(x.size()) / std::max<std::int64_t>(1, x.shape[0] * c);
  const float eps = node.attr_f("epsilon", 1e-5f);
  Tensor y = x;
  for (std::int64_t b = 0; b < x.shape[0]; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const float a = scale.f[k] / std::sqrt(var.f[k] + eps);
      const float o = shift.f[k] - a * mean.f[k];
      float* p = y.f.data() + (b * c + ch) * inner;
      for (std::int64_t e = 0; e < inner; ++e) p[e] = a * p[e] + o;
    }
  }
  return {std::move(y)};
}

std::vector<Tensor> op_layernorm(const Node& node, const Inputs& inputs) {
  const Tensor& x = float_in(inputs, 0);
  const Tensor& scale = float_in(inputs, 1);
  const Tensor* bias = opt_in(inputs, 2);
  for (std::size_t k = 1; k < node.outputs.size(); ++k) {
    if (!node.outputs[k].empty()) throw ExtractionError("LayerNormalization statistics outputs are not supported");
  }
  const std::size_t axis = norm_axis(node.attr_i("axis", -1), x.rank());
  const float eps = node.attr_f("epsilon", 1e-5f);
  std::size_t inner = 1;
  for (std::size_t d = axis; d < x.rank(); ++d) inner *= static_cast<std::size_t>(x.shape[d]);
  const std::size_t outer = x.size() / std::max<std::size_t>(1, inner);
  const Shape norm_shape(x.shape.begin() + static_cast<std::ptrdiff_t>(axis), x.shape.end());
  const auto sc = broadcast_apply(std::vector<float>(inner, 0.0f), norm_shape, scale.f, scale.shape, norm_shape,
                                  [](float, float s) { return s; });
  std::vector<float> bs(inner, 0.0f);
  if (bias) bs = broadcast_apply(bs, norm_shape, bias->f, bias->shape, norm_shape, [](float, float s) { return s; });
  Tensor y = x;
  for (std::size_t o = 0; o < outer; ++o) {
    float* p = y.f.data() + o * inner;
    double mean = 0.0;
    for (std::size_t e = 0; e < inner; ++e) mean += p[e];
    mean /= static_cast<double>(inner);
    double var = 0.0;
    for (std::size_t e = 0; e < inner; ++e) var += (p[e] - mean) * (p[e] - mean);
    var /= static_cast<double>(inner);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t e = 0; e < inner; ++e) p[e] = static_cast<float>((p[e] - mean) * inv) * sc[e] + bs[e];
  }
  return {std::move(y)};
}

std::vector<Tensor> op_softmax(const Node& node, const Context& ctx, const Inputs& inputs) {
  const Tensor& x = float_in(inputs, 0);
  const bool legacy = ctx.opset < 13;
  const std::size_t axis = norm_axis(node.attr_i("axis", legacy ? 1 : -1), x.rank());
  std::size_t outer = 1, len = 1, inner = 1;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    const auto v = static_cast<std::size_t>(x.shape[d]);
    if (d < axis) outer *= v;
    else if (d == axis || legacy) len *= v;
    else inner *= v;
  }
  Tensor y = x;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in_ = 0; in_ < inner; ++in_) {
      float* base = y.f.data() + o * len * inner + in_;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t e = 0; e < len; ++e) mx = std::max(mx, base[e * inner]);
      double sum = 0.0;
      for (std::size_t e = 0; e < len; ++e) {
        base[e * inner] = std::exp(base[e * inner] - mx);
        sum += base[e * inner];
      }
      for (std::size_t e = 0; e < len; ++e) base[e * inner] = static_cast<float>(base[e * inner] / sum);
    }
  }
  return {std::move(y)};
}

enum class Reduce { Mean, Sum, Max };

std::vector<Tensor> op_reduce(const Node& node, const Context& ctx, const Inputs& inputs, Reduce kind) {
  const Tensor& x = float_in(inputs, 0);
  const bool axes_as_input = kind == Reduce::Sum ? ctx.opset >= 13 : ctx.opset >= 18;
  std::vector<std::int64_t> axes;
  if (axes_as_input) {
    if (const Tensor* a = opt_in(inputs, 1)) axes = as_ints(*a);
  } else {
    axes = node.attr_ints("axes");
  }
  const bool keep = node.attr_i("keepdims", 1) != 0;
  if (axes.empty()) {
    if (node.attr_i("noop_with_empty_axes", 0) != 0) return {x};
    for (std::size_t d = 0; d < x.rank(); ++d) axes.push_back(static_cast<std::int64_t>(d));
  }
  std::vector<bool> reduced(x.rank(), false);
  for (auto a : axes) reduced[norm_axis(a, x.rank())] = true;
  Shape kept_shape;
  for (std::size_t d = 0; d < x.rank(); ++d) kept_shape.push_back(reduced[d] ? 1 : x.shape[d]);
  const auto out_strides = broadcast_strides(kept_shape, x.shape);
  const std::size_t out_n = numel(kept_shape);
  std::vector<double> acc(out_n, kind == Reduce::Max ? -std::numeric_limits<double>::infinity() : 0.0);
  for_each_index(x.shape, {out_strides}, [&](std::size_t e, const std::vector<std::int64_t>& off) {
    auto& a = acc[static_cast<std::size_t>(off[0])];
    a = kind == Reduce::Max ? std::max(a, static_cast<double>(x.f[e])) : a + x.f[e];
  });
  const double count = static_cast<double>(x.size()) / static_cast<double>(std::max<std::size_t>(1, out_n));
  std::vector<float> res(out_n);
  for (std::size_t e = 0; e < out_n; ++e) res[e] = static_cast<float>(kind == Reduce::Mean ? acc[e] / count : acc[e]);
  Shape out;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    if (!reduced[d]) out.push_back(x.shape[d]);
    else if (keep) out.push_back(1);
  }
  return {Tensor::floats(out, std::move(res))};
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshaped(const Tensor& x, Shape shape) {
  Tensor y = x;
  if (numel(shape) != x.size()) {
    throw ExtractionError(fmt::format("cannot reshape {} to {}", shape_str(x.shape), shape_str(shape)));
  }
  y.shape = std::move(shape);
  return y;
}

std::vector<Tensor> op_reshape(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  auto shape = as_ints(in(inputs, 1));
  const bool allow_zero = node.attr_i("allowzero", 0) != 0;
  std::int64_t known = 1;
  std::optional<std::size_t> infer;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == 0 && !allow_zero) {
      if (d >= x.rank()) throw ExtractionError("Reshape copies a dimension the input does not have");
      shape[d] = x.shape[d];
    }
    if (shape[d] == -1) {
      if (infer) throw ExtractionError("Reshape has more than one -1");
      infer = d;
    } else {
      known *= shape[d];
    }
  }
  if (infer) {
    if (known == 0) throw ExtractionError("Reshape cannot infer a dimension next to a zero");
    shape[*infer] = static_cast<std::int64_t>(x.size()) / known;
  }
  return {reshaped(x, shape)};
}

std::vector<Tensor> op_flatten(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  auto axis = node.attr_i("axis", 1);
  if (axis < 0) axis += static_cast<std::int64_t>(x.rank());
  if (axis < 0 || axis > static_cast<std::int64_t>(x.rank())) throw ExtractionError("Flatten axis out of range");
  std::int64_t lead = 1;
  for (std::int64_t d = 0; d < axis; ++d) lead *= x.shape[static_cast<std::size_t>(d)];
  return {reshaped(x, {lead, lead ? static_cast<std::int64_t>(x.size()) / lead : 0})};
}

std::vector<Tensor> op_transpose(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  std::vector<std::int64_t> perm = node.attr_ints("perm");
  if (perm.empty()) {
    for (std::size_t d = x.rank(); d-- > 0;) perm.push_back(static_cast<std::int64_t>(d));
  }
  if (perm.size() != x.rank()) throw ExtractionError("Transpose perm does not match rank");
  const auto st = contiguous_strides(x.shape);
  Shape out(x.rank());
  std::vector<std::int64_t> src_strides(x.rank());
  for (std::size_t d = 0; d < x.rank(); ++d) {
    const auto p = norm_axis(perm[d], x.rank());
    out[d] = x.shape[p];
    src_strides[d] = st[p];
  }
  return {dispatch(x.dtype, [&]<typename T>(T) {
    const auto& src = storage<T>(x);
    std::vector<T> res(src.size());
    for_each_index(out, {src_strides},
                   [&](std::size_t e, const std::vector<std::int64_t>& off) { res[e] = src[off[0]]; });
    return make<T>(out, std::move(res));
  })};
}

std::vector<Tensor> op_concat(const Node& node, const Inputs& inputs) {
  std::vector<const Tensor*> parts;
  for (const auto* t : inputs) {
    if (t) parts.push_back(t);
  }
  if (parts.empty()) throw ExtractionError("Concat has no inputs");
  const Tensor& first = *parts[0];
  const std::size_t axis = norm_axis(node.attr_i("axis", 0), first.rank());
  Shape out = first.shape;
  out[axis] = 0;
  for (const auto* t : parts) {
    if (t->rank() != first.rank() || t->dtype != first.dtype) throw ExtractionError("Concat inputs differ in rank or type");
    for (std::size_t d = 0; d < t->rank(); ++d) {
      if (d != axis && t->shape[d] != first.shape[d]) throw ExtractionError("Concat inputs differ in shape");
    }
    out[axis] += t->shape[axis];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(out[d]);
  return {dispatch(first.dtype, [&]<typename T>(T) {
    std::vector<T> res;
    res.reserve(numel(out));
    for (std::size_t o = 0; o < outer; ++o) {
      for (const auto* t : parts) {
        const auto& src = storage<T>(*t);
        const std::size_t chunk = outer ? src.size() / outer : 0;
        res.insert(res.end(), src.begin() + static_cast<std::ptrdiff_t>(o * chunk),
                   src.begin() + static_cast<std::ptrdiff_t>((o + 1) * chunk));
      }
    }
    return make<T>(out, std::move(res));
  })};
}

std::vector<Tensor> op_shape(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const auto r = static_cast<std::int64_t>(x.rank());
  auto start = node.attr_i("start", 0), end = node.attr_i("end", r);
  if (start < 0) start += r;
  if (end < 0) end += r;
  start = std::clamp<std::int64_t>(start, 0, r);
  end = std::clamp<std::int64_t>(end, start, r);
  std::vector<std::int64_t> dims(x.shape.begin() + start, x.shape.begin() + end);
  const auto n = static_cast<std::int64_t>(dims.size());
  return {Tensor::ints({n}, std::move(dims))};
}

std::vector<Tensor> op_gather(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const Tensor& idx = in(inputs, 1);
  const std::size_t axis = norm_axis(node.attr_i("axis", 0), x.rank());
  auto indices = as_ints(idx);
  const auto dim = x.shape[axis];
  for (auto& v : indices) {
    if (v < 0) v += dim;
    if (v < 0 || v >= dim) throw ExtractionError("Gather index out of range");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(x.shape[d]);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= static_cast<std::size_t>(x.shape[d]);
  Shape out(x.shape.begin(), x.shape.begin() + static_cast<std::ptrdiff_t>(axis));
  out.insert(out.end(), idx.shape.begin(), idx.shape.end());
  out.insert(out.end(), x.shape.begin() + static_cast<std::ptrdiff_t>(axis) + 1, x.shape.end());
  return {dispatch(x.dtype, [&]<typename T>(T) {
    const auto& src = storage<T>(x);
    std::vector<T> res;
    res.reserve(numel(out));
    for (std::size_t o = 0; o < outer; ++o) {
      for (auto v : indices) {
        const auto begin = src.begin() + static_cast<std::ptrdiff_t>((o * static_cast<std::size_t>(dim) + static_cast<std::size_t>(v)) * inner);
        res.insert(res.end(), begin, begin + static_cast<std::ptrdiff_t>(inner));
      }
    }
    return make<T>(out, std::move(res));
  })};
}

std::vector<std::int64_t> axes_of(const Node& node, const Context& ctx, const Inputs& inputs) {
  if (ctx.opset >= 13) {
    if (const Tensor* a = opt_in(inputs, 1)) return as_ints(*a);
    return {};
  }
  return node.attr_ints("axes");
}

std::vector<Tensor> op_unsqueeze(const Node& node, const Context& ctx, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const auto axes = axes_of(node, ctx, inputs);
  const std::size_t rank = x.rank() + axes.size();
  std::vector<bool> inserted(rank, false);
  for (auto a : axes) {
    const auto k = norm_axis(a, rank);
    if (inserted[k]) throw ExtractionError("Unsqueeze repeats an axis");
    inserted[k] = true;
  }
  Shape out;
  std::size_t src = 0;
  for (std::size_t d = 0; d < rank; ++d) out.push_back(inserted[d] ? 1 : x.shape[src++]);
  return {reshaped(x, out)};
}

std::vector<Tensor> op_squeeze(const Node& node, const Context& ctx, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const auto axes = axes_of(node, ctx, inputs);
  std::vector<bool> drop(x.rank(), false);
  if (axes.empty()) {
    for (std::size_t d = 0; d < x.rank(); ++d) drop[d] = x.shape[d] == 1;
  } else {
    for (auto a : axes) {
      const auto k = norm_axis(a, x.rank());
      if (x.shape[k] != 1) throw ExtractionError("Squeeze on a dimension that is not 1");
      drop[k] = true;
    }
  }
  Shape out;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    if (!drop[d]) out.push_back(x.shape[d]);
  }
  return {reshaped(x, out)};
}

std::vector<Tensor> op_slice(const Node& node, const Context& ctx, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  std::vector<std::int64_t> starts, ends, axes, steps;
  if (ctx.opset >= 10) {
    starts = as_ints(in(inputs, 1));
    ends = as_ints(in(inputs, 2));
    if (const Tensor* a = opt_in(inputs, 3)) axes = as_ints(*a);
    if (const Tensor* s = opt_in(inputs, 4)) steps = as_ints(*s);
  } else {
    starts = node.attr_ints("starts");
    ends = node.attr_ints("ends");
    axes = node.attr_ints("axes");
  }
  if (starts.size() != ends.size()) throw ExtractionError("Slice starts and ends differ in length");
  if (axes.empty()) {
    for (std::size_t d = 0; d < starts.size(); ++d) axes.push_back(static_cast<std::int64_t>(d));
  }
  if (steps.empty()) steps.assign(starts.size(), 1);
  if (axes.size() != starts.size() || steps.size() != starts.size()) throw ExtractionError("Slice argument lengths differ");

  const auto st = contiguous_strides(x.shape);
  Shape out = x.shape;
  std::vector<std::int64_t> strides = st;
  std::int64_t base = 0;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    const std::size_t d = norm_axis(axes[k], x.rank());
    const auto dim = x.shape[d];
    const auto step = steps[k];
    if (step == 0) throw ExtractionError("Slice step is zero");
    auto s = starts[k], e = ends[k];
    if (s < 0) s += dim;
    if (e < 0) e += dim;
    if (step > 0) {
      s = std::clamp<std::int64_t>(s, 0, dim);
      e = std::clamp<std::int64_t>(e, 0, dim);
      out[d] = e > s ? (e - s + step - 1) / step : 0;
    } else {
      s = std::clamp<std::int64_t>(s, 0, dim - 1);
      e = std::clamp<std::int64_t>(e, -1, dim - 1);
      out[d] = s > e ? (s - e - step - 1) / (-step) : 0;
    }
    base += s * st[d];
    strides[d] = st[d] * step;
  }
  return {dispatch(x.dtype, [&]<typename T>(T) {
    const auto& src = storage<T>(x);
    std::vector<T> res(numel(out));
    for_each_index(
        out, {strides}, [&](std::size_t e, const std::vector<std::int64_t>& off) { res[e] = src[off[0]]; }, {base});
    return make<T>(out, std::move(res));
  })};
}

std::vector<Tensor> op_expand(const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const Shape target = as_ints(in(inputs, 1));
  const Shape out = broadcast_shape({&x.shape, &target});
  return {dispatch(x.dtype, [&]<typename T>(T) {
    const auto& src = storage<T>(x);
    std::vector<T> res(numel(out));
    for_each_index(out, {broadcast_strides(x.shape, out)},
                   [&](std::size_t e, const std::vector<std::int64_t>& off) { res[e] = src[off[0]]; });
    return make<T>(out, std::move(res));
  })};
}

std::vector<Tensor> op_split(const Node& node, const Context& ctx, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  const std::size_t axis = norm_axis(node.attr_i("axis", 0), x.rank());
  std::vector<std::int64_t> sizes;
  if (ctx.opset >= 13) {
    if (const Tensor* s = opt_in(inputs, 1)) sizes = as_ints(*s);
  } else {
    sizes = node.attr_ints("split");
  }
  const auto dim = x.shape[axis];
  const auto parts = static_cast<std::int64_t>(node.outputs.size());
  if (sizes.empty()) {
    const auto chunk = (dim + parts - 1) / parts;
    for (std::int64_t p = 0; p < parts; ++p) sizes.push_back(std::min(chunk, dim - p * chunk));
  }
  if (static_cast<std::int64_t>(sizes.size()) != parts || std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}) != dim) {
    throw ExtractionError("Split sizes do not cover the axis");
  }
  std::vector<Tensor> res;
  std::int64_t offset = 0;
  for (auto size : sizes) {
    const Tensor s = Tensor::ints({1}, {offset});
    const Tensor e = Tensor::ints({1}, {offset + size});
    const Tensor a = Tensor::ints({1}, {static_cast<std::int64_t>(axis)});
    Context slice_ctx{std::max<std::int64_t>(ctx.opset, 10)};
    res.push_back(op_slice(node, slice_ctx, {&x, &s, &e, &a})[0]);
    offset += size;
  }
  return res;
}

std::vector<Tensor> op_constant(const Node& node) {
  if (node.has("value")) return {*node.attrs.at("value").t};
  if (node.has("value_float")) return {Tensor::floats({}, {node.attr_f("value_float", 0.0f)})};
  if (node.has("value_floats")) {
    const auto& v = node.attrs.at("value_floats").floats;
    return {Tensor::floats({static_cast<std::int64_t>(v.size())}, v)};
  }
  if (node.has("value_int")) return {Tensor::ints({}, {node.attr_i("value_int", 0)})};
  if (node.has("value_ints")) {
    const auto v = node.attr_ints("value_ints");
    return {Tensor::ints({static_cast<std::int64_t>(v.size())}, v)};
  }
  throw ExtractionError("Constant without a supported value attribute");
}

std::vector<Tensor> op_constant_of_shape(const Node& node, const Inputs& inputs) {
  const Shape shape = as_ints(in(inputs, 0));
  const std::size_t n = numel(shape);
  if (node.has("value")) {
    const Tensor& v = *node.attrs.at("value").t;
    if (v.size() != 1) throw ExtractionError("ConstantOfShape value must hold one element");
    if (v.dtype == Tensor::DType::Int64) return {Tensor::ints(shape, std::vector<std::int64_t>(n, v.i[0]))};
    return {Tensor::floats(shape, std::vector<float>(n, v.f[0]))};
  }
  return {Tensor::floats(shape, std::vector<float>(n, 0.0f))};
}

std::vector<Tensor> op_range(const Inputs& inputs) {
  const Tensor& start = in(inputs, 0);
  const Tensor& limit = in(inputs, 1);
  const Tensor& delta = in(inputs, 2);
  if (start.dtype == Tensor::DType::Int64) {
    const auto s = start.i.at(0), l = limit.i.at(0), d = delta.i.at(0);
    if (d == 0) throw ExtractionError("Range delta is zero");
    std::vector<std::int64_t> v;
    for (auto x = s; d > 0 ? x < l : x > l; x += d) v.push_back(x);
    const auto n = static_cast<std::int64_t>(v.size());
    return {Tensor::ints({n}, std::move(v))};
  }
  const double s = start.f.at(0), l = limit.f.at(0), d = delta.f.at(0);
  if (d == 0.0) throw ExtractionError("Range delta is zero");
  const auto n = static_cast<std::int64_t>(std::max(0.0, std::ceil((l - s) / d)));
  std::vector<float> v(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) v[static_cast<std::size_t>(k)] = static_cast<float>(s + static_cast<double>(k) * d);
  return {Tensor::floats({n}, std::move(v))};
}

std::vector<Tensor> op_gelu(const Node& node, const Inputs& inputs) {
  if (node.attr_s("approximate", "none") == "tanh") {
    return unary(inputs, [](float x) {
      const double k = std::sqrt(2.0 / 3.14159265358979323846);
      return static_cast<float>(0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))));
    });
  }
  return unary(inputs, [](float x) { return static_cast<float>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)))); });
}

std::vector<Tensor> op_dropout(const Node& node, const Inputs& inputs) {
  const Tensor& x = in(inputs, 0);
  std::vector<Tensor> res{x};
  if (node.outputs.size() > 1 && !node.outputs[1].empty()) {
    res.push_back(Tensor::ints(x.shape, std::vector<std::int64_t>(x.size(), 1)));
  }
  return res;
}

std::vector<Tensor> evaluate(const Node& node, const Context& ctx, const Inputs& inputs) {
  const std::string& op = node.op;
  if (op == "Conv") return op_conv(node, inputs);
  if (op == "BatchNormalization") return op_batchnorm(node, inputs);
  if (op == "Relu") return unary(inputs, [](float x) { return x > 0.0f ? x : 0.0f; });
  if (op == "Sigmoid") return unary(inputs, [](float x) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); });
  if (op == "Tanh") return unary(inputs, [](float x) { return std::tanh(x); });
  if (op == "Erf") return unary(inputs, [](float x) { return std::erf(x); });
  if (op == "Sqrt") return unary(inputs, [](float x) { return std::sqrt(x); });
  if (op == "Exp") return unary(inputs, [](float x) { return std::exp(x); });
  if (op == "Log") return unary(inputs, [](float x) { return std::log(x); });
  if (op == "Neg") return unary(inputs, [](float x) { return -x; });
  if (op == "Abs") return unary(inputs, [](float x) { return std::abs(x); });
  if (op == "Reciprocal") return unary(inputs, [](float x) { return 1.0f / x; });
  if (op == "Gelu") return op_gelu(node, inputs);
  if (op == "Add") return arith(inputs, Arith::Add);
  if (op == "Sub") return arith(inputs, Arith::Sub);
  if (op == "Mul") return arith(inputs, Arith::Mul);
  if (op == "Div") return arith(inputs, Arith::Div);
  if (op == "Pow") return arith(inputs, Arith::Pow);
  if (op == "Equal") return compare(inputs, Compare::Equal);
  if (op == "Less") return compare(inputs, Compare::Less);
  if (op == "Greater") return compare(inputs, Compare::Greater);
  if (op == "Where") return op_where(inputs);
  if (op == "Cast") return op_cast(node, inputs);
  if (op == "MatMul") return op_matmul(inputs);
  if (op == "Gemm") return op_gemm(node, inputs);
  if (op == "MaxPool") return op_pool(node, inputs, true);
  if (op == "AveragePool") return op_pool(node, inputs, false);
  if (op == "GlobalAveragePool") return op_global_pool(inputs, false);
  if (op == "GlobalMaxPool") return op_global_pool(inputs, true);
  if (op == "LayerNormalization") return op_layernorm(node, inputs);
  if (op == "Softmax") return op_softmax(node, ctx, inputs);
  if (op == "ReduceMean") return op_reduce(node, ctx, inputs, Reduce::Mean);
  if (op == "ReduceSum") return op_reduce(node, ctx, inputs, Reduce::Sum);
  if (op == "ReduceMax") return op_reduce(node, ctx, inputs, Reduce::Max);
  if (op == "Reshape") return op_reshape(node, inputs);
  if (op == "Flatten") return op_flatten(node, inputs);
  if (op == "Transpose") return op_transpose(node, inputs);
  if (op == "Concat") return op_concat(node, inputs);
  if (op == "Shape") return op_shape(node, inputs);
  if (op == "Gather") return op_gather(node, inputs);
  if (op == "Unsqueeze") return op_unsqueeze(node, ctx, inputs);
  if (op == "Squeeze") return op_squeeze(node, ctx, inputs);
  if (op == "Slice") return op_slice(node, ctx, inputs);
  if (op == "Expand") return op_expand(inputs);
  if (op == "Split") return op_split(node, ctx, inputs);
  if (op == "Constant") return op_constant(node);
  if (op == "ConstantOfShape") return op_constant_of_shape(node, inputs);
  if (op == "Range") return op_range(inputs);
  if (op == "Identity") return {in(inputs, 0)};
  if (op == "Dropout") return op_dropout(node, inputs);
  throw ExtractionError("unsupported operator " + op);
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

struct Graph::Impl {
  std::vector<Node> nodes;
  std::unordered_map<std::string, std::shared_ptr<const Tensor>> initializers;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::unordered_map<std::string, std::size_t> producer;
  Context ctx;
};

Graph::Graph() : impl_(std::make_unique<Impl>()) {}
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;
Graph::~Graph() = default;

Graph Graph::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model graph: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return from_bytes(bytes, path.parent_path());
  } catch (const Error& e) {
    throw ExtractionError(path.string() + ": " + e.what());
  }
}

Graph Graph::from_bytes(const std::string& bytes, const fs::path& base_dir) {
  ::onnx::ModelProto model;
  if (!model.ParseFromString(bytes)) throw FormatError("not a valid ONNX model");
  Graph g;
  Impl& impl = *g.impl_;
  for (const auto& op : model.opset_import()) {
    if (op.domain().empty() || op.domain() == "ai.onnx") impl.ctx.opset = op.version();
  }
  const auto& graph = model.graph();
  for (const auto& t : graph.initializer()) {
    impl.initializers.emplace(t.name(), std::make_shared<const Tensor>(from_proto(t, base_dir)));
  }
  for (const auto& v : graph.input()) {
    if (!impl.initializers.count(v.name())) impl.inputs.push_back(v.name());
  }
  for (const auto& v : graph.output()) impl.outputs.push_back(v.name());
  for (const auto& n : graph.node()) {
    impl.nodes.push_back(from_proto(n, base_dir));
    for (const auto& out : impl.nodes.back().outputs) {
      if (!out.empty()) impl.producer[out] = impl.nodes.size() - 1;
    }
  }
  return g;
}

std::vector<std::string> Graph::input_names() const { return impl_->inputs; }
std::vector<std::string> Graph::output_names() const { return impl_->outputs; }
std::int64_t Graph::opset() const { return impl_->ctx.opset; }

bool Graph::has_value(const std::string& name) const {
  return impl_->producer.count(name) || impl_->initializers.count(name) ||
         std::find(impl_->inputs.begin(), impl_->inputs.end(), name) != impl_->inputs.end();
}

std::map<std::string, Tensor> Graph::run(const std::map<std::string, Tensor>& feeds,
                                         const std::vector<std::string>& outputs) const {
  const Impl& impl = *impl_;
  for (const auto& [name, t] : feeds) {
    if (std::find(impl.inputs.begin(), impl.inputs.end(), name) == impl.inputs.end()) {
      throw ExtractionError("unknown graph input '" + name + "'");
    }
    if (t.size() != (t.dtype == Tensor::DType::Float ? t.f.size() : t.i.size())) {
      throw ExtractionError("feed '" + name + "' does not match its shape");
    }
  }

  // mark the nodes the requested outputs depend on
  std::vector<bool> needed(impl.nodes.size(), false);
  std::vector<std::string> stack(outputs.begin(), outputs.end());
  std::set<std::string> seen;
  while (!stack.empty()) {
    const std::string name = stack.back();
    stack.pop_back();
    if (name.empty() || !seen.insert(name).second) continue;
    if (feeds.count(name) || impl.initializers.count(name)) continue;
    const auto it = impl.producer.find(name);
    if (it == impl.producer.end()) {
      if (std::find(impl.inputs.begin(), impl.inputs.end(), name) != impl.inputs.end()) {
        throw ExtractionError("graph input '" + name + "' was not fed");
      }
      throw ExtractionError("graph has no value named '" + name + "'");
    }
    if (needed[it->second]) continue;
    needed[it->second] = true;
    for (const auto& i : impl.nodes[it->second].inputs) stack.push_back(i);
  }

  std::unordered_map<std::string, int> uses;
  for (std::size_t k = 0; k < impl.nodes.size(); ++k) {
    if (!needed[k]) continue;
    for (const auto& i : impl.nodes[k].inputs) {
      if (!i.empty()) ++uses[i];
    }
  }
  for (const auto& o : outputs) ++uses[o];

  std::unordered_map<std::string, std::shared_ptr<const Tensor>> values;
  for (const auto& [name, t] : feeds) {
    if (uses.count(name)) values.emplace(name, std::make_shared<const Tensor>(t));
  }
  auto lookup = [&](const std::string& name) -> const Tensor* {
    if (const auto it = values.find(name); it != values.end()) return it->second.get();
    if (const auto it = impl.initializers.find(name); it != impl.initializers.end()) return it->second.get();
    return nullptr;
  };

  for (std::size_t k = 0; k < impl.nodes.size(); ++k) {
    if (!needed[k]) continue;
    const Node& node = impl.nodes[k];
    Inputs args;
    for (const auto& i : node.inputs) {
      if (i.empty()) {
        args.push_back(nullptr);
        continue;
      }
      const Tensor* t = lookup(i);
      if (!t) throw ExtractionError(fmt::format("node '{}' ({}): input '{}' is not available", node.name, node.op, i));
      args.push_back(t);
    }
    std::vector<Tensor> produced;
    try {
      produced = evaluate(node, impl.ctx, args);
    } catch (const std::exception& e) {
      throw ExtractionError(fmt::format("node '{}' ({}): {}", node.name, node.op, e.what()));
    }
    if (produced.size() > node.outputs.size()) produced.resize(node.outputs.size());
    for (std::size_t o = 0; o < produced.size(); ++o) {
      const auto& name = node.outputs[o];
      if (name.empty() || !uses.count(name)) continue;
      values[name] = std::make_shared<const Tensor>(std::move(produced[o]));
    }
    for (const auto& i : node.inputs) {
      if (i.empty()) continue;
      if (const auto it = uses.find(i); it != uses.end() && --it->second == 0) values.erase(i);
    }
  }

  std::map<std::string, Tensor> result;
  for (const auto& o : outputs) {
    const Tensor* t = lookup(o);
    if (!t) throw ExtractionError("output '" + o + "' was not produced");
    result.emplace(o, *t);
  }
  return result;
}

}  // namespace periscope::onnx
