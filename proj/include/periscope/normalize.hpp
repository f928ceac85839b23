#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "periscope/tensors.hpp"

namespace periscope {

enum class NormStrategy {
  PerPatch,        // L2 per patch (S*S or P slices of length C or E)
  PerChannel,      // L2 per channel (C or E slices of length S*S or P)
  WholeVector,     // one global L2
  MeanPerChannel,  // average over patches -> 1 x C, then L2 (global average pooling)
  MeanPerPatch,    // average over channels -> S*S or P, then L2
};

inline constexpr NormStrategy kAllStrategies[] = {
    NormStrategy::PerPatch, NormStrategy::PerChannel, NormStrategy::WholeVector,
    NormStrategy::MeanPerChannel, NormStrategy::MeanPerPatch};

/// per-patch | per-channel | whole | mean-per-channel | mean-per-patch
std::string_view to_string(NormStrategy s);
/// Throws LookupError on an unknown token.
NormStrategy parse_strategy(std::string_view token);

// Normalized descriptor, stored slice-major: `slices` rows of `slice_len`
// values, each row being the unit of normalization and of cosine scoring.
// Single-vector strategies have exactly one slice.
class FeatureVector {
 public:
  FeatureVector(NormStrategy strategy, std::size_t slices, std::size_t slice_len,
                std::vector<float> data);

  NormStrategy strategy() const { return strategy_; }
  std::size_t slices() const { return slices_; }
  std::size_t slice_len() const { return slice_len_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> slice(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * slice_len_, slice_len_);
  }

 private:
  NormStrategy strategy_;
  std::size_t slices_;
  std::size_t slice_len_;
  std::vector<float> data_;
};

FeatureVector normalize(const ActivationTensor& t, NormStrategy s);

/// Mean over slices of the per-slice cosine. Zero slices contribute 0.
/// Throws ComparatorError on strategy or shape mismatch.
double score(const FeatureVector& a, const FeatureVector& b);

/// Plain cosine similarity of two equally sized vectors; 0 if either is zero.
double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace periscope
