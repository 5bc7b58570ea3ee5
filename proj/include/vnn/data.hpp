#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vnn/model.hpp"

namespace vnn {

// ---------------------------------------------------------------------------
// View feature files: "VNF1", u32 version (1), u32 |V|, u32 D, then |V|·D
// float32 values row-major. All integers and floats little-endian.

inline constexpr std::uint32_t kViewFileVersion = 1;
inline constexpr std::size_t kViewFileHeaderBytes = 16;

std::vector<std::uint8_t> encode_view_features(const ViewMatrix& views);
ViewMatrix decode_view_features(std::span<const std::uint8_t> bytes);
void write_view_features(const std::filesystem::path& path, const ViewMatrix& views);
ViewMatrix read_view_features(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Descriptor files: "VND1", u32 version (1), u32 count, u32 dim, then per
// record a u32-length-prefixed UTF-8 id followed by dim float32 values.

inline constexpr std::uint32_t kDescriptorFileVersion = 1;

struct DescriptorRecord {
  std::string id;
  std::vector<Real> values;
};

std::vector<std::uint8_t> encode_descriptors(std::span<const DescriptorRecord> records, std::size_t dim);
std::vector<DescriptorRecord> decode_descriptors(std::span<const std::uint8_t> bytes);
void write_descriptors(const std::filesystem::path& path, std::span<const DescriptorRecord> records,
                       std::size_t dim);
std::vector<DescriptorRecord> read_descriptors(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest: JSON array of {id, class_label, class_index, path, split}.
// Relative paths resolve against the manifest's directory.

struct ManifestRecord {
  std::string id;
  std::string class_label;
  std::size_t class_index = 0;
  std::string path;
  std::string split = "train";
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::size_t num_classes() const;
  /// Ids unique, class_index dense in [0, C) with one label per index, split
  /// tags known.
  void validate() const;
  std::vector<const ManifestRecord*> select(const std::string& split) const;
};

bool is_known_split(const std::string& split);

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

struct Sample {
  std::string id;
  std::size_t label = 0;
  ViewMatrix views;
};

/// Loads the records tagged split (all records when split is empty). Throws
/// DataError when view dimensions disagree.
std::vector<Sample> load_samples(const Manifest& manifest, const std::filesystem::path& base_dir,
                                 const std::string& split);

struct SplitResult {
  Manifest manifest;
  std::vector<std::string> warnings;
};

/// Per-class stratified assignment. Each class's ids are sorted, shuffled with
/// Rng(seed) in ascending class order, then cut by largest-remainder counts in
/// the order fractions are given.
SplitResult split_dataset(const Manifest& manifest, const std::vector<std::pair<std::string, double>>& fractions,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic view sequences.
//
// Confusable class pairs share one set of |V| unit-norm prototype views; the
// second class of a pair swaps two non-adjacent positions, so only the order
// of views separates them. Remaining classes get their own prototypes. Each
// sample is a random cyclic shift of its class sequence plus Gaussian noise,
// stored at single precision.

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t confusable_pairs = 2;
  std::size_t views = 12;
  std::size_t dim = 32;
  std::size_t samples_per_class = 150;
  double sigma = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticSample {
  std::string id;
  std::size_t label = 0;
  std::size_t shift = 0;
  ViewMatrix views;
};

struct SyntheticDataset {
  SyntheticSpec spec;
  /// prototypes[c] is class c's |V|×D sequence before shifting.
  std::vector<ViewMatrix> prototypes;
  std::vector<SyntheticSample> samples;
};

/// Position pair swapped to derive the second class of a confusable pair.
std::pair<std::size_t, std::size_t> confusable_swap(std::size_t views);

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Writes every sample to out_dir/views/<id>.vnf and returns the manifest
/// (all records tagged "train", paths relative to out_dir).
Manifest write_synthetic(const SyntheticDataset& dataset, const std::filesystem::path& out_dir);

std::string class_label_for(std::size_t class_index);

}  // namespace vnn
