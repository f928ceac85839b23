#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace periscope {

// Activation volume of a CNN layer or token matrix of a ViT block for a
// single image. Values are stored patch-major: every channel of patch 0,
// then every channel of patch 1, and so on.
enum class TensorKind : std::uint8_t { CnnVolume = 0, VitTokens = 1 };

class ActivationTensor {
 public:
  ActivationTensor() = default;

  /// S x S x C volume. Throws DataError on a bad shape or non-finite value.
  static ActivationTensor cnn(std::uint32_t side, std::uint32_t channels, std::vector<float> data);
  /// P x E token matrix. Throws DataError on a bad shape or non-finite value.
  static ActivationTensor vit(std::uint32_t tokens, std::uint32_t embed, std::vector<float> data);

  TensorKind kind() const { return kind_; }
  /// S*S for a volume, P for tokens.
  std::size_t patches() const { return patches_; }
  /// C for a volume, E for tokens.
  std::size_t channels() const { return channels_; }
  /// (S, S, C) or (P, E).
  std::vector<std::uint32_t> dims() const;

  std::span<const float> data() const { return data_; }
  std::span<const float> patch(std::size_t p) const {
    return std::span<const float>(data_).subspan(p * channels_, channels_);
  }
  float at(std::size_t p, std::size_t c) const { return data_[p * channels_ + c]; }

  friend bool operator==(const ActivationTensor&, const ActivationTensor&) = default;

 private:
  ActivationTensor(TensorKind kind, std::uint32_t side_or_tokens, std::size_t patches,
                   std::size_t channels, std::vector<float> data);

  TensorKind kind_ = TensorKind::VitTokens;
  std::uint32_t lead_ = 0;  // S or P
  std::size_t patches_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

// ATD container: "ATD1", kind byte, reserved byte, u16 dim count, u32 dims,
// little-endian float32 payload.
std::vector<std::uint8_t> encode_activation_dump(const ActivationTensor& t);
ActivationTensor decode_activation_dump(std::span<const std::uint8_t> bytes);

void write_activation_dump(const std::filesystem::path& path, const ActivationTensor& t);
ActivationTensor read_activation_dump(const std::filesystem::path& path);

enum class NetworkFamily { Cnn, Vit };

struct CatalogLayer {
  std::string name;
  std::uint64_t cum_learnables = 0;
  std::vector<std::uint32_t> shape;  // (S, S, C) or (P, E); may be empty if unknown
};

// Layer list of one exported network with cumulative trainable-parameter
// counts. Populated from the JSON sidecar written by the export tooling.
struct NetworkCatalogEntry {
  std::string name;
  NetworkFamily family = NetworkFamily::Cnn;
  std::uint64_t total_params = 0;
  std::optional<std::uint32_t> input_side;
  std::vector<CatalogLayer> layers;

  /// Position of `layer` in the layer list. Throws LookupError.
  std::size_t index_of(std::string_view layer) const;
  /// Checks the ordering and total invariants. Throws CatalogError.
  void validate() const;
};

NetworkCatalogEntry parse_catalog(std::string_view json_text);
NetworkCatalogEntry load_catalog(const std::filesystem::path& path);
std::string dump_catalog(const NetworkCatalogEntry& entry);

/// Cumulative learnables of every layer up to and including `layer`.
std::uint64_t learnables_up_to(const NetworkCatalogEntry& entry, std::string_view layer);

// Published geometry of the six reference networks.
struct NetworkGeometry {
  std::string_view name;
  NetworkFamily family;
  int depth;                // conv layers (CNN) or transformer blocks (ViT)
  double size_mb;
  std::uint64_t total_params;
  std::uint32_t input_side;
  std::uint32_t patch_side;  // ViT only
  std::vector<std::uint32_t> spatial_sizes;  // CNN S values
  std::vector<std::uint32_t> channels;       // CNN C values or ViT E values (embed, mlp)
  std::uint32_t tokens;                      // ViT P

  std::uint32_t expected_tokens() const;
};

const std::vector<NetworkGeometry>& reference_networks();
/// Throws LookupError for names other than R18, R50, R101, ViT-tiny, ViT-small, ViT-base.
const NetworkGeometry& reference_network(std::string_view name);

}  // namespace periscope
