#include "periscope/normalize.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "periscope/errors.hpp"

namespace periscope {

namespace {

// In-place L2 normalization of one slice; zero slices stay zero.
void l2_inplace(std::span<float> v) {
  double ss = 0.0;
  for (float x : v) ss += static_cast<double>(x) * x;
  if (ss == 0.0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (float& x : v) x = static_cast<float>(x * inv);
}

}  // namespace

std::string_view to_string(NormStrategy s) {
  switch (s) {
    case NormStrategy::PerPatch: return "per-patch";
    case NormStrategy::PerChannel: return "per-channel";
    case NormStrategy::WholeVector: return "whole";
    case NormStrategy::MeanPerChannel: return "mean-per-channel";
    case NormStrategy::MeanPerPatch: return "mean-per-patch";
  }
  return "?";
}

NormStrategy parse_strategy(std::string_view token) {
  for (auto s : kAllStrategies) {
    if (to_string(s) == token) return s;
  }
  throw LookupError(fmt::format("unknown normalization strategy '{}'", token));
}

FeatureVector::FeatureVector(NormStrategy strategy, std::size_t slices, std::size_t slice_len,
                             std::vector<float> data)
    : strategy_(strategy), slices_(slices), slice_len_(slice_len), data_(std::move(data)) {
  if (data_.size() != slices_ * slice_len_) throw DataError("feature vector size mismatch");
}

FeatureVector normalize(const ActivationTensor& t, NormStrategy s) {
  const std::size_t np = t.patches();
  const std::size_t nc = t.channels();
  const auto src = t.data();

  switch (s) {
    case NormStrategy::PerPatch: {
      std::vector<float> out(src.begin(), src.end());
      for (std::size_t p = 0; p < np; ++p) l2_inplace(std::span<float>(out).subspan(p * nc, nc));
      return FeatureVector(s, np, nc, std::move(out));
    }
    case NormStrategy::PerChannel: {
      // transpose to channel-major so each channel is contiguous
      std::vector<float> out(src.size());
      for (std::size_t p = 0; p < np; ++p)
        for (std::size_t c = 0; c < nc; ++c) out[c * np + p] = src[p * nc + c];
      for (std::size_t c = 0; c < nc; ++c) l2_inplace(std::span<float>(out).subspan(c * np, np));
      return FeatureVector(s, nc, np, std::move(out));
    }
    case NormStrategy::WholeVector: {
      std::vector<float> out(src.begin(), src.end());
      l2_inplace(out);
      const std::size_t n = out.size();
      return FeatureVector(s, 1, n, std::move(out));
    }
    case NormStrategy::MeanPerChannel: {
      std::vector<double> acc(nc, 0.0);
      for (std::size_t p = 0; p < np; ++p)
        for (std::size_t c = 0; c < nc; ++c) acc[c] += src[p * nc + c];
      std::vector<float> out(nc);
      for (std::size_t c = 0; c < nc; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(np));
      l2_inplace(out);
      return FeatureVector(s, 1, nc, std::move(out));
    }
    case NormStrategy::MeanPerPatch: {
      std::vector<float> out(np);
      for (std::size_t p = 0; p < np; ++p) {
        double acc = 0.0;
        for (std::size_t c = 0; c < nc; ++c) acc += src[p * nc + c];
        out[p] = static_cast<float>(acc / static_cast<double>(nc));
      }
      l2_inplace(out);
      return FeatureVector(s, 1, np, std::move(out));
    }
  }
  throw LookupError("unhandled normalization strategy");
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double score(const FeatureVector& a, const FeatureVector& b) {
  if (a.strategy() != b.strategy()) {
    throw ComparatorError(fmt::format("strategy mismatch: {} vs {}", to_string(a.strategy()),
                                      to_string(b.strategy())));
  }
  if (a.slices() != b.slices() || a.slice_len() != b.slice_len()) {
    throw ComparatorError(fmt::format("shape mismatch: {}x{} vs {}x{}", a.slices(), a.slice_len(),
                                      b.slices(), b.slice_len()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.slices(); ++i) total += cosine(a.slice(i), b.slice(i));
  return std::clamp(total / static_cast<double>(a.slices()), -1.0, 1.0);
}

}  // namespace periscope
