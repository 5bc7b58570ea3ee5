#include "vnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <json.hpp>

#include "vnn/binary_io.hpp"
#include "vnn/errors.hpp"
#include "vnn/rng.hpp"

namespace vnn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// View feature files

std::vector<std::uint8_t> encode_view_features(const ViewMatrix& views) {
  io::ByteWriter w;
  w.bytes("VNF1");
  w.u32(kViewFileVersion);
  w.u32(static_cast<std::uint32_t>(views.views()));
  w.u32(static_cast<std::uint32_t>(views.dim()));
  std::size_t offset = 0;
  for (Real x : views.values()) {
    const auto f = static_cast<float>(x);
    if (!std::isfinite(f)) {
      throw DataError("non-finite view feature at element " + std::to_string(offset));
    }
    w.f32(f);
    ++offset;
  }
  return w.buffer();
}

ViewMatrix decode_view_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kViewFileHeaderBytes) {
    throw TruncationError("view feature file has " + std::to_string(bytes.size()) + " bytes, header needs " +
                          std::to_string(kViewFileHeaderBytes));
  }
  io::ByteReader r(bytes);
  if (r.bytes(4) != "VNF1") throw FormatError("bad magic in view feature file (expected VNF1)");
  const std::uint32_t version = r.u32();
  if (version != kViewFileVersion) throw FormatError("unsupported view feature file version " + std::to_string(version));
  const std::uint32_t views = r.u32();
  const std::uint32_t dim = r.u32();
  if (views == 0 || dim == 0) throw FormatError("view feature file declares an empty matrix");
  const std::uint64_t expected = kViewFileHeaderBytes + 4ULL * views * dim;
  if (bytes.size() != expected) {
    throw TruncationError("view feature file length " + std::to_string(bytes.size()) + " does not match expected " +
                          std::to_string(expected) + " for |V|=" + std::to_string(views) + ", D=" +
                          std::to_string(dim));
  }
  std::vector<Real> values(static_cast<std::size_t>(views) * dim);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t at = r.offset();
    const float f = r.f32();
    if (!std::isfinite(f)) throw DataError("non-finite view feature at byte offset " + std::to_string(at));
    values[i] = static_cast<Real>(f);
  }
  return ViewMatrix(views, dim, std::move(values));
}

void write_view_features(const fs::path& path, const ViewMatrix& views) {
  io::write_file(path, encode_view_features(views));
}

ViewMatrix read_view_features(const fs::path& path) { return decode_view_features(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Descriptor files

std::vector<std::uint8_t> encode_descriptors(std::span<const DescriptorRecord> records, std::size_t dim) {
  io::ByteWriter w;
  w.bytes("VND1");
  w.u32(kDescriptorFileVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& rec : records) {
    if (rec.values.size() != dim) {
      throw DimensionError("descriptor '" + rec.id + "' has " + std::to_string(rec.values.size()) +
                           " values, file dimension is " + std::to_string(dim));
    }
    w.string(rec.id);
    for (Real x : rec.values) w.f32(static_cast<float>(x));
  }
  return w.buffer();
}

std::vector<DescriptorRecord> decode_descriptors(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != "VND1") throw FormatError("bad magic in descriptor file (expected VND1)");
  const std::uint32_t version = r.u32();
  if (version != kDescriptorFileVersion) throw FormatError("unsupported descriptor file version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  std::vector<DescriptorRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DescriptorRecord rec;
    rec.id = r.string();
    rec.values.resize(dim);
    for (auto& x : rec.values) x = static_cast<Real>(r.f32());
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after descriptor records");
  return out;
}

void write_descriptors(const fs::path& path, std::span<const DescriptorRecord> records, std::size_t dim) {
  io::write_file(path, encode_descriptors(records, dim));
}

std::vector<DescriptorRecord> read_descriptors(const fs::path& path) {
  return decode_descriptors(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Manifest

bool is_known_split(const std::string& split) {
  return split == "train" || split == "test" || split == "gallery" || split == "query";
}

std::size_t Manifest::num_classes() const {
  std::size_t c = 0;
  for (const auto& r : records) c = std::max(c, r.class_index + 1);
  return c;
}

void Manifest::validate() const {
  std::set<std::string> ids;
  std::map<std::size_t, std::string> labels;
  for (const auto& r : records) {
    if (r.id.empty()) throw DataError("manifest record with empty id");
    if (!ids.insert(r.id).second) throw DataError("duplicate id '" + r.id + "' in manifest");
    if (!is_known_split(r.split)) throw DataError("record '" + r.id + "' has unknown split '" + r.split + "'");
    auto [it, inserted] = labels.emplace(r.class_index, r.class_label);
    if (!inserted && it->second != r.class_label) {
      throw DataError("class index " + std::to_string(r.class_index) + " maps to both '" + it->second + "' and '" +
                      r.class_label + "'");
    }
  }
  const std::size_t c = num_classes();
  if (labels.size() != c) {
    throw DataError("class indices are not dense in [0, " + std::to_string(c) + ")");
  }
}

std::vector<const ManifestRecord*> Manifest::select(const std::string& split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (split.empty() || r.split == split) out.push_back(&r);
  }
  return out;
}

std::string manifest_to_json(const Manifest& manifest) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["class_label"] = r.class_label;
    j["class_index"] = r.class_index;
    j["path"] = r.path;
    j["split"] = r.split;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  Manifest m;
  try {
    const auto arr = nlohmann::json::parse(text);
    if (!arr.is_array()) throw DataError("manifest must be a JSON array");
    for (const auto& j : arr) {
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.class_label = j.at("class_label").get<std::string>();
      r.class_index = j.at("class_index").get<std::size_t>();
      r.path = j.at("path").get<std::string>();
      r.split = j.at("split").get<std::string>();
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  manifest.validate();
  const std::string text = manifest_to_json(manifest);
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest read_manifest(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return manifest_from_json(std::string(bytes.begin(), bytes.end()));
}

std::vector<Sample> load_samples(const Manifest& manifest, const fs::path& base_dir, const std::string& split) {
  std::vector<Sample> out;
  for (const ManifestRecord* r : manifest.select(split)) {
    fs::path p(r->path);
    if (p.is_relative()) p = base_dir / p;
    Sample s{r->id, r->class_index, read_view_features(p)};
    if (!out.empty() && s.views.dim() != out.front().views.dim()) {
      throw DataError("sample '" + s.id + "' has D=" + std::to_string(s.views.dim()) + " but '" + out.front().id +
                      "' has D=" + std::to_string(out.front().views.dim()));
    }
    out.push_back(std::move(s));
  }
  return out;
}

SplitResult split_dataset(const Manifest& manifest, const std::vector<std::pair<std::string, double>>& fractions,
                          std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split needs at least one fraction");
  double total = 0;
  for (const auto& [name, f] : fractions) {
    if (!is_known_split(name)) throw ConfigError("unknown split name '" + name + "'");
    if (!(f >= 0)) throw ConfigError("split fraction for '" + name + "' must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split fractions sum to " + std::to_string(total) + ", not 1");

  SplitResult result{manifest, {}};
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < result.manifest.records.size(); ++i) {
    by_class[result.manifest.records[i].class_index].push_back(i);
  }
  std::size_t buckets = 0;
  for (const auto& [name, f] : fractions) buckets += f > 0 ? 1 : 0;

  Rng rng(seed);
  for (auto& [cls, members] : by_class) {
    auto& recs = result.manifest.records;
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return recs[a].id < recs[b].id; });
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.uniform_index(i)]);

    const std::size_t n = members.size();
    if (n < buckets) {
      result.warnings.push_back("class " + std::to_string(cls) + " has " + std::to_string(n) +
                                " samples for " + std::to_string(buckets) + " split buckets");
    }
    std::vector<std::size_t> counts(fractions.size());
    std::vector<double> remainder(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t b = 0; b < fractions.size(); ++b) {
      const double exact = fractions[b].second * static_cast<double>(n);
      counts[b] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      remainder[b] = exact - static_cast<double>(counts[b]);
      assigned += counts[b];
    }
    std::vector<std::size_t> order(fractions.size());
    for (std::size_t b = 0; b < order.size(); ++b) order[b] = b;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < n; k = (k + 1) % order.size()) {
      if (fractions[order[k]].second > 0) {
        ++counts[order[k]];
        ++assigned;
      }
    }
    std::size_t pos = 0;
    for (std::size_t b = 0; b < fractions.size(); ++b) {
      for (std::size_t k = 0; k < counts[b] && pos < n; ++k) recs[members[pos++]].split = fractions[b].first;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (classes == 0) throw ConfigError("synthetic dataset needs at least one class");
  if (views == 0) throw ConfigError("synthetic dataset needs at least one view");
  if (dim < 2) throw ConfigError("synthetic dataset needs D >= 2");
  if (confusable_pairs > 0) {
    if (classes % 2 != 0) throw ConfigError("class count must be even when confusable pairs are requested");
    if (2 * confusable_pairs > classes) {
      throw ConfigError(std::to_string(confusable_pairs) + " confusable pairs need at least " +
                        std::to_string(2 * confusable_pairs) + " classes");
    }
    if (views < 3) throw ConfigError("confusable pairs need |V| >= 3 to reorder views");
  }
  if (!(sigma >= 0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be a non-negative number");
}

std::pair<std::size_t, std::size_t> confusable_swap(std::size_t views) {
  if (views < 3) throw ConfigError("confusable pairs need |V| >= 3");
  return views == 3 ? std::pair<std::size_t, std::size_t>{0, 2} : std::pair<std::size_t, std::size_t>{0, views / 2};
}

std::string class_label_for(std::size_t class_index) { return "class" + std::to_string(class_index); }

namespace {

std::vector<std::vector<double>> draw_prototypes(Rng& rng, std::size_t views, std::size_t dim) {
  for (;;) {
    std::vector<std::vector<double>> protos(views, std::vector<double>(dim));
    for (auto& p : protos) {
      double norm = 0;
      do {
        norm = 0;
        for (auto& x : p) {
          x = rng.normal();
          norm += x * x;
        }
      } while (norm < 1e-12);
      norm = std::sqrt(norm);
      for (auto& x : p) x /= norm;
    }
    // Near-duplicate prototypes would let a reordering leave the n-gram
    // windows unchanged; redraw in that case.
    bool distinct = true;
    for (std::size_t a = 0; a < views && distinct; ++a) {
      for (std::size_t b = a + 1; b < views && distinct; ++b) {
        double d2 = 0;
        for (std::size_t k = 0; k < dim; ++k) d2 += (protos[a][k] - protos[b][k]) * (protos[a][k] - protos[b][k]);
        distinct = d2 > 1e-6;
      }
    }
    if (distinct) return protos;
  }
}

std::multiset<std::pair<std::size_t, std::size_t>> cyclic_bigrams(const std::vector<std::size_t>& order) {
  std::multiset<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); ++i) out.emplace(order[i], order[(i + 1) % order.size()]);
  return out;
}

ViewMatrix to_matrix(const std::vector<std::vector<double>>& protos, const std::vector<std::size_t>& order) {
  const std::size_t dim = protos.front().size();
  std::vector<Real> values;
  values.reserve(order.size() * dim);
  for (std::size_t idx : order) {
    for (double x : protos[idx]) values.push_back(static_cast<Real>(x));
  }
  return ViewMatrix(order.size(), dim, std::move(values));
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticDataset ds;
  ds.spec = spec;

  std::vector<std::vector<std::vector<double>>> class_protos(spec.classes);
  std::vector<std::vector<std::size_t>> class_order(spec.classes);
  std::vector<std::size_t> identity(spec.views);
  for (std::size_t i = 0; i < spec.views; ++i) identity[i] = i;

  std::size_t c = 0;
  for (std::size_t p = 0; p < spec.confusable_pairs; ++p, c += 2) {
    auto protos = draw_prototypes(rng, spec.views, spec.dim);
    std::vector<std::size_t> swapped = identity;
    const auto [a, b] = confusable_swap(spec.views);
    std::swap(swapped[a], swapped[b]);
    if (cyclic_bigrams(identity) == cyclic_bigrams(swapped)) {
      throw ConfigError("view reordering does not change the 2-gram windows for |V|=" + std::to_string(spec.views));
    }
    class_protos[c] = protos;
    class_protos[c + 1] = std::move(protos);
    class_order[c] = identity;
    class_order[c + 1] = std::move(swapped);
  }
  for (; c < spec.classes; ++c) {
    class_protos[c] = draw_prototypes(rng, spec.views, spec.dim);
    class_order[c] = identity;
  }
  for (std::size_t k = 0; k < spec.classes; ++k) ds.prototypes.push_back(to_matrix(class_protos[k], class_order[k]));

  for (std::size_t k = 0; k < spec.classes; ++k) {
    const auto& protos = class_protos[k];
    const auto& order = class_order[k];
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t shift = rng.uniform_index(spec.views);
      std::vector<Real> values;
      values.reserve(spec.views * spec.dim);
      for (std::size_t r = 0; r < spec.views; ++r) {
        const auto& proto = protos[order[(r + shift) % spec.views]];
        for (std::size_t d = 0; d < spec.dim; ++d) {
          const double noisy = proto[d] + spec.sigma * rng.normal();
          values.push_back(static_cast<Real>(static_cast<float>(noisy)));
        }
      }
      char id[64];
      std::snprintf(id, sizeof id, "c%zu_%04zu", k, i);
      ds.samples.push_back({id, k, shift, ViewMatrix(spec.views, spec.dim, std::move(values))});
    }
  }
  return ds;
}

Manifest write_synthetic(const SyntheticDataset& dataset, const fs::path& out_dir) {
  Manifest m;
  for (const auto& s : dataset.samples) {
    const std::string rel = "views/" + s.id + ".vnf";
    write_view_features(out_dir / rel, s.views);
    m.records.push_back({s.id, class_label_for(s.label), s.label, rel, "train"});
  }
  return m;
}

}  // namespace vnn
