#include "periscope/feature_store.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "periscope/errors.hpp"
#include "periscope/parallel.hpp"

namespace periscope {

namespace fs = std::filesystem;

std::string sanitize_component(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char ch : name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '.' || ch == '_' || ch == '-';
    out.push_back(ok ? ch : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

FeatureStore::FeatureStore(fs::path root) : root_(std::move(root)) {}

FeatureStore FeatureStore::from_environment(const fs::path& fallback) {
  if (const char* env = std::getenv("PERISCOPE_CACHE"); env && *env) return FeatureStore(env);
  return FeatureStore(fallback);
}

fs::path FeatureStore::activation_path(const std::string& network, const std::string& layer,
                                       const std::string& image) const {
  return root_ / "activations" / sanitize_component(network) / sanitize_component(layer) /
         (sanitize_component(image) + ".atd");
}

fs::path FeatureStore::descriptor_path(HistogramKind kind, const std::string& image) const {
  return root_ / "handcrafted" / std::string(to_string(kind)) / (sanitize_component(image) + ".atd");
}

fs::path FeatureStore::keypoint_sidecar_path(const std::string& image) const {
  return root_ / "handcrafted" / "sift" / (sanitize_component(image) + ".json");
}

fs::path FeatureStore::keypoint_descriptor_path(const std::string& image) const {
  return root_ / "handcrafted" / "sift" / (sanitize_component(image) + ".atd");
}

void FeatureStore::write_activation(const std::string& network, const std::string& layer,
                                    const std::string& image, const ActivationTensor& t) const {
  write_activation_dump(activation_path(network, layer, image), t);
}

std::optional<ActivationTensor> FeatureStore::read_activation(const std::string& network,
                                                              const std::string& layer,
                                                              const std::string& image) const {
  const auto path = activation_path(network, layer, image);
  if (!fs::exists(path)) return std::nullopt;
  return read_activation_dump(path);
}

void FeatureStore::write_descriptor(const std::string& image, const BlockHistogramDescriptor& d) const {
  write_activation_dump(descriptor_path(d.kind, image),
                        ActivationTensor::vit(1, static_cast<std::uint32_t>(d.data.size()), d.data));
}

std::optional<BlockHistogramDescriptor> FeatureStore::read_descriptor(HistogramKind kind,
                                                                      const std::string& image) const {
  const auto path = descriptor_path(kind, image);
  if (!fs::exists(path)) return std::nullopt;
  const auto t = read_activation_dump(path);
  if (t.patches() != 1) throw FormatError(path.string() + ": descriptor must be a 1 x N tensor");
  const auto data = t.data();
  return BlockHistogramDescriptor{kind, 1, 1, static_cast<int>(data.size()),
                                  std::vector<float>(data.begin(), data.end())};
}

void FeatureStore::write_keypoints(const std::string& image, const KeypointSet& k) const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  std::vector<float> desc;
  desc.reserve(k.size() * kSiftDescriptorSize);
  for (const auto& p : k.points) {
    nlohmann::ordered_json e;
    e["x"] = p.x;
    e["y"] = p.y;
    e["scale"] = p.scale;
    e["orientation"] = p.orientation;
    j.push_back(std::move(e));
    desc.insert(desc.end(), p.descriptor.begin(), p.descriptor.end());
  }
  const auto sidecar = keypoint_sidecar_path(image);
  fs::create_directories(sidecar.parent_path());
  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw IoError("cannot write keypoints: " + sidecar.string());
  out << j.dump() << '\n';
  const auto atd = keypoint_descriptor_path(image);
  if (k.empty()) {
    fs::remove(atd);
  } else {
    write_activation_dump(atd, ActivationTensor::vit(static_cast<std::uint32_t>(k.size()), kSiftDescriptorSize,
                                                     std::move(desc)));
  }
}

std::optional<KeypointSet> FeatureStore::read_keypoints(const std::string& image) const {
  const auto sidecar = keypoint_sidecar_path(image);
  if (!fs::exists(sidecar)) return std::nullopt;
  std::ifstream in(sidecar);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar.string() + ": " + e.what());
  }
  KeypointSet set;
  if (j.empty()) return set;
  const auto atd = keypoint_descriptor_path(image);
  if (!fs::exists(atd)) return std::nullopt;
  const auto t = read_activation_dump(atd);
  if (t.channels() != kSiftDescriptorSize || t.patches() != j.size()) {
    throw FormatError(fmt::format("{}: expected {} x {} descriptors", atd.string(), j.size(), kSiftDescriptorSize));
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    Keypoint p;
    p.x = j[i].at("x").get<float>();
    p.y = j[i].at("y").get<float>();
    p.scale = j[i].at("scale").get<float>();
    p.orientation = j[i].at("orientation").get<float>();
    const auto row = t.patch(i);
    std::copy(row.begin(), row.end(), p.descriptor.begin());
    set.points.push_back(p);
  }
  return set;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T, typename Load>
void fill_cache(std::map<std::string, std::optional<T>>& cache, const std::vector<std::string>& ids, int jobs,
                Load load) {
  std::vector<std::optional<T>> loaded(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t i) { loaded[i] = load(ids[i]); });
  for (std::size_t i = 0; i < ids.size(); ++i) cache.insert_or_assign(ids[i], std::move(loaded[i]));
}

template <typename T>
const T* lookup(const std::map<std::string, std::optional<T>>& cache, const std::string& id) {
  const auto it = cache.find(id);
  if (it == cache.end() || !it->second) return nullptr;
  return &*it->second;
}

}  // namespace

DeepComparator::DeepComparator(const FeatureStore& store, std::string network, std::string layer,
                               NormStrategy strategy)
    : store_(store), network_(std::move(network)), layer_(std::move(layer)), strategy_(strategy) {}

std::string DeepComparator::name() const {
  return fmt::format("{}:{}:{}", network_, layer_, to_string(strategy_));
}

void DeepComparator::prepare(const std::vector<std::string>& ids, int jobs) {
  fill_cache(cache_, ids, jobs, [&](const std::string& id) -> std::optional<FeatureVector> {
    auto t = store_.read_activation(network_, layer_, id);
    if (!t) return std::nullopt;
    return normalize(*t, strategy_);
  });
}

std::optional<double> DeepComparator::compare(const std::string& enrol, const std::string& probe) const {
  const auto* a = lookup(cache_, enrol);
  const auto* b = lookup(cache_, probe);
  if (!a || !b) return std::nullopt;
  return score(*a, *b);
}

HistogramComparator::HistogramComparator(const FeatureStore& store, HistogramKind kind)
    : store_(store), kind_(kind) {}

std::string HistogramComparator::name() const { return std::string(to_string(kind_)); }

void HistogramComparator::prepare(const std::vector<std::string>& ids, int jobs) {
  fill_cache(cache_, ids, jobs, [&](const std::string& id) { return store_.read_descriptor(kind_, id); });
}

std::optional<double> HistogramComparator::compare(const std::string& enrol, const std::string& probe) const {
  const auto* a = lookup(cache_, enrol);
  const auto* b = lookup(cache_, probe);
  if (!a || !b) return std::nullopt;
  return -chi2_distance(*a, *b);
}

KeypointComparator::KeypointComparator(const FeatureStore& store, MatchOptions options)
    : store_(store), options_(options) {}

void KeypointComparator::prepare(const std::vector<std::string>& ids, int jobs) {
  fill_cache(cache_, ids, jobs, [&](const std::string& id) { return store_.read_keypoints(id); });
}

std::optional<double> KeypointComparator::compare(const std::string& enrol, const std::string& probe) const {
  const auto* a = lookup(cache_, enrol);
  const auto* b = lookup(cache_, probe);
  if (!a || !b || a->empty() || b->empty()) return std::nullopt;
  return sift_match_score(*a, *b, options_);
}

}  // namespace periscope
