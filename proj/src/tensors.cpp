#include "periscope/tensors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "periscope/errors.hpp"

namespace periscope {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'T', 'D', '1'};

void check_finite(std::span<const float> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw DataError(fmt::format("non-finite activation at index {}", i));
    }
  }
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

}  // namespace

ActivationTensor::ActivationTensor(TensorKind kind, std::uint32_t lead, std::size_t patches,
                                   std::size_t channels, std::vector<float> data)
    : kind_(kind), lead_(lead), patches_(patches), channels_(channels), data_(std::move(data)) {
  if (patches_ == 0 || channels_ == 0) throw DataError("activation tensor dimensions must be >= 1");
  if (data_.size() != patches_ * channels_) {
    throw DataError(fmt::format("activation data length {} does not match shape ({} x {})",
                                data_.size(), patches_, channels_));
  }
  check_finite(data_);
}

ActivationTensor ActivationTensor::cnn(std::uint32_t side, std::uint32_t channels,
                                       std::vector<float> data) {
  return ActivationTensor(TensorKind::CnnVolume, side,
                          static_cast<std::size_t>(side) * side, channels, std::move(data));
}

ActivationTensor ActivationTensor::vit(std::uint32_t tokens, std::uint32_t embed,
                                       std::vector<float> data) {
  return ActivationTensor(TensorKind::VitTokens, tokens, tokens, embed, std::move(data));
}

std::vector<std::uint32_t> ActivationTensor::dims() const {
  const auto c = static_cast<std::uint32_t>(channels_);
  if (kind_ == TensorKind::CnnVolume) return {lead_, lead_, c};
  return {lead_, c};
}

std::vector<std::uint8_t> encode_activation_dump(const ActivationTensor& t) {
  const auto dims = t.dims();
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * dims.size() + 4 * t.data().size());
  for (auto b : kMagic) out.push_back(static_cast<std::uint8_t>(b));
  out.push_back(static_cast<std::uint8_t>(t.kind()));
  out.push_back(0);
  put_u16(out, static_cast<std::uint16_t>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ActivationTensor decode_activation_dump(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("missing ATD1 magic");
  }
  const std::uint8_t kind = bytes[4];
  if (kind > 1) throw FormatError(fmt::format("unknown tensor kind {}", kind));
  if (bytes[5] != 0) throw FormatError("reserved header byte must be zero");
  const std::size_t ndim = bytes[6] | (bytes[7] << 8);
  if (ndim != 2 && ndim != 3) throw FormatError(fmt::format("dim count must be 2 or 3, got {}", ndim));
  if (bytes.size() < 8 + 4 * ndim) throw FormatError("header shorter than declared dim count");

  std::vector<std::uint32_t> dims(ndim);
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    dims[i] = get_u32(bytes, 8 + 4 * i);
    if (dims[i] == 0) throw FormatError("zero-length dimension");
    count *= dims[i];
  }
  if (kind == 0 && (ndim != 3 || dims[0] != dims[1])) {
    throw FormatError("CNN volume requires shape (S, S, C)");
  }
  if (kind == 1 && ndim != 2) throw FormatError("ViT tokens require shape (P, E)");

  const std::size_t offset = 8 + 4 * ndim;
  const std::size_t payload = bytes.size() - offset;
  if (payload != 4 * count) {
    throw TruncationError(
        fmt::format("payload holds {} bytes, shape needs {}", payload, 4 * count));
  }
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
  }
  if (kind == 0) return ActivationTensor::cnn(dims[0], dims[2], std::move(data));
  return ActivationTensor::vit(dims[0], dims[1], std::move(data));
}

void write_activation_dump(const std::filesystem::path& path, const ActivationTensor& t) {
  const auto bytes = encode_activation_dump(t);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

ActivationTensor read_activation_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open activation dump: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_activation_dump(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const TruncationError& e) {
    throw TruncationError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Catalog

std::size_t NetworkCatalogEntry::index_of(std::string_view layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == layer) return i;
  }
  throw LookupError(fmt::format("layer '{}' not in catalog of {}", layer, name));
}

void NetworkCatalogEntry::validate() const {
  if (layers.empty()) throw CatalogError(name + ": catalog has no layers");
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].cum_learnables < layers[i - 1].cum_learnables) {
      throw CatalogError(fmt::format("{}: cumulative learnables decrease at layer '{}'", name,
                                     layers[i].name));
    }
  }
  if (layers.back().cum_learnables != total_params) {
    throw CatalogError(fmt::format("{}: final cumulative learnables {} != total_params {}", name,
                                   layers.back().cum_learnables, total_params));
  }
  for (const auto& l : layers) {
    const auto want = family == NetworkFamily::Cnn ? 3u : 2u;
    if (!l.shape.empty() && l.shape.size() != want) {
      throw CatalogError(fmt::format("{}: layer '{}' has shape rank {}, expected {}", name, l.name,
                                     l.shape.size(), want));
    }
  }
}

NetworkCatalogEntry parse_catalog(std::string_view json_text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("catalog JSON: ") + e.what());
  }
  NetworkCatalogEntry entry;
  try {
    entry.name = j.at("name").get<std::string>();
    entry.total_params = j.at("total_params").get<std::uint64_t>();
    if (j.contains("input_side")) entry.input_side = j.at("input_side").get<std::uint32_t>();
    for (const auto& l : j.at("layers")) {
      CatalogLayer layer;
      layer.name = l.at("name").get<std::string>();
      layer.cum_learnables = l.at("cum_learnables").get<std::uint64_t>();
      if (l.contains("shape")) layer.shape = l.at("shape").get<std::vector<std::uint32_t>>();
      entry.layers.push_back(std::move(layer));
    }
    if (j.contains("family")) {
      const auto f = j.at("family").get<std::string>();
      if (f == "cnn") {
        entry.family = NetworkFamily::Cnn;
      } else if (f == "vit") {
        entry.family = NetworkFamily::Vit;
      } else {
        throw FormatError("catalog family must be 'cnn' or 'vit'");
      }
    } else {
      const bool any3 = std::any_of(entry.layers.begin(), entry.layers.end(),
                                    [](const CatalogLayer& l) { return l.shape.size() == 3; });
      entry.family = any3 ? NetworkFamily::Cnn : NetworkFamily::Vit;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("catalog JSON: ") + e.what());
  }
  entry.validate();
  return entry;
}

NetworkCatalogEntry load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_catalog(text);
}

std::string dump_catalog(const NetworkCatalogEntry& entry) {
  nlohmann::ordered_json j;
  j["name"] = entry.name;
  j["family"] = entry.family == NetworkFamily::Cnn ? "cnn" : "vit";
  j["total_params"] = entry.total_params;
  if (entry.input_side) j["input_side"] = *entry.input_side;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : entry.layers) {
    nlohmann::ordered_json lj;
    lj["name"] = l.name;
    lj["cum_learnables"] = l.cum_learnables;
    lj["shape"] = l.shape;
    layers.push_back(std::move(lj));
  }
  return j.dump(2);
}

std::uint64_t learnables_up_to(const NetworkCatalogEntry& entry, std::string_view layer) {
  return entry.layers[entry.index_of(layer)].cum_learnables;
}

// ---------------------------------------------------------------------------
// Reference geometry

std::uint32_t NetworkGeometry::expected_tokens() const {
  if (family != NetworkFamily::Vit || patch_side == 0) return 0;
  const auto grid = input_side / patch_side;
  return grid * grid + 1;
}

const std::vector<NetworkGeometry>& reference_networks() {
  static const std::vector<NetworkGeometry> kNetworks = {
      {"R18", NetworkFamily::Cnn, 18, 44.0, 11'700'000, 224, 0, {112, 56, 28, 14, 7}, {64, 128, 256, 512}, 0},
      {"R50", NetworkFamily::Cnn, 50, 96.0, 25'600'000, 224, 0, {112, 56, 28, 14, 7},
       {64, 128, 256, 512, 1024, 2048}, 0},
      {"R101", NetworkFamily::Cnn, 101, 167.0, 44'600'000, 224, 0, {112, 56, 28, 14, 7},
       {64, 128, 256, 512, 1024, 2048}, 0},
      {"ViT-tiny", NetworkFamily::Vit, 12, 20.6, 5'700'000, 384, 16, {}, {192, 768}, 577},
      {"ViT-small", NetworkFamily::Vit, 12, 78.8, 22'100'000, 384, 16, {}, {384, 1536}, 577},
      {"ViT-base", NetworkFamily::Vit, 12, 308.0, 86'800'000, 384, 16, {}, {768, 3072}, 577},
  };
  return kNetworks;
}

const NetworkGeometry& reference_network(std::string_view name) {
  for (const auto& n : reference_networks()) {
    if (n.name == name) return n;
  }
  throw LookupError(fmt::format("unknown reference network '{}'", name));
}

}  // namespace periscope
