#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "vnn/binary_io.hpp"
#include "vnn/data.hpp"
#include "vnn/errors.hpp"

using namespace vnn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("vnn_data_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::vector<Real>> rows_of(const ViewMatrix& m) {
  std::vector<std::vector<Real>> out;
  for (std::size_t r = 0; r < m.views(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

std::vector<std::vector<Real>> shifted(const std::vector<std::vector<Real>>& rows, std::size_t s) {
  std::vector<std::vector<Real>> out;
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(rows[(i + s) % rows.size()]);
  return out;
}

Manifest toy_manifest(std::size_t classes, std::size_t per_class) {
  Manifest m;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i)
      m.records.push_back({"s" + std::to_string(c) + "_" + std::to_string(i), class_label_for(c), c, "x.vnf", "train"});
  return m;
}

}  // namespace

TEST_CASE("view feature files round-trip exactly") {
  TempDir tmp;
  const ViewMatrix m(1, 2, {1.5, -2.0});
  write_view_features(tmp.path / "a.vnf", m);
  const ViewMatrix back = read_view_features(tmp.path / "a.vnf");
  CHECK(back.views() == 1);
  CHECK(back.dim() == 2);
  CHECK(std::vector<Real>(back.values().begin(), back.values().end()) == std::vector<Real>{1.5, -2.0});

  std::mt19937 gen(1);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t v = 1 + gen() % 9, d = 1 + gen() % 17;
    std::vector<Real> vals(v * d);
    for (auto& x : vals) x = static_cast<Real>(u(gen));
    const ViewMatrix src(v, d, vals);
    const ViewMatrix got = decode_view_features(encode_view_features(src));
    CHECK(std::vector<Real>(got.values().begin(), got.values().end()) == vals);
  }
}

TEST_CASE("view feature file format") {
  const ViewMatrix m(12, 64, std::vector<Real>(12 * 64, Real(0.25)));
  const auto bytes = encode_view_features(m);
  CHECK(bytes.size() == 3088);
  CHECK(std::memcmp(bytes.data(), "VNF1", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 12);
  CHECK(bytes[12] == 64);

  std::vector<std::uint8_t> short15(bytes.begin(), bytes.begin() + 15);
  CHECK_THROWS_AS(decode_view_features(short15), TruncationError);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  CHECK_THROWS_AS(decode_view_features(cut), TruncationError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_view_features(extra), TruncationError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_view_features(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_view_features(bad_version), FormatError);

  auto nan_bytes = bytes;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_bytes.data() + 16 + 4 * 5, &nan, 4);
  try {
    decode_view_features(nan_bytes);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("36") != std::string::npos);
  }

  TempDir tmp;
  std::vector<std::uint8_t> tiny(15, 0);
  io::write_file(tmp.path / "tiny.vnf", tiny);
  CHECK_THROWS_AS(read_view_features(tmp.path / "tiny.vnf"), TruncationError);
  CHECK_THROWS_AS(read_view_features(tmp.path / "missing.vnf"), DataError);
}

TEST_CASE("descriptor files round-trip") {
  std::vector<DescriptorRecord> recs{{"a", {1, 2, 3}}, {"b\xc3\xa9", {-0.5, 0, 7}}};
  const auto bytes = encode_descriptors(recs, 3);
  const auto back = decode_descriptors(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[1].id == "b\xc3\xa9");
  CHECK(back[1].values == recs[1].values);
  CHECK_THROWS_AS(decode_descriptors(std::span(bytes).first(bytes.size() - 2)), TruncationError);
  auto bad = bytes;
  bad[3] = '2';
  CHECK_THROWS_AS(decode_descriptors(bad), FormatError);
  std::vector<DescriptorRecord> wrong{{"a", {1, 2}}};
  CHECK_THROWS_AS(encode_descriptors(wrong, 3), DimensionError);
}

TEST_CASE("manifest json") {
  Manifest m = toy_manifest(2, 2);
  m.records[3].split = "test";
  const Manifest back = manifest_from_json(manifest_to_json(m));
  REQUIRE(back.records.size() == 4);
  CHECK(back.records[3].split == "test");
  CHECK(back.records[2].class_index == 1);
  CHECK(back.num_classes() == 2);
  CHECK(back.select("test").size() == 1);

  Manifest dup = m;
  dup.records[1].id = dup.records[0].id;
  CHECK_THROWS_AS(dup.validate(), DataError);
  Manifest gap = m;
  for (auto& r : gap.records) r.class_index *= 2;
  CHECK_THROWS_AS(gap.validate(), DataError);
  Manifest split = m;
  split.records[0].split = "holdout";
  CHECK_THROWS_AS(split.validate(), DataError);
  CHECK_THROWS_AS(manifest_from_json("{\"not\": \"an array\"}"), DataError);
  CHECK_THROWS_AS(manifest_from_json("[{\"id\": 3}]"), DataError);
}

TEST_CASE("load_samples") {
  TempDir tmp;
  Manifest m;
  write_view_features(tmp.path / "a.vnf", ViewMatrix(3, 2, {1, 2, 3, 4, 5, 6}));
  write_view_features(tmp.path / "b.vnf", ViewMatrix(4, 2, std::vector<Real>(8, 1)));
  write_view_features(tmp.path / "c.vnf", ViewMatrix(3, 5, std::vector<Real>(15, 1)));
  m.records = {{"a", "x", 0, "a.vnf", "train"}, {"b", "y", 1, "b.vnf", "test"}};
  auto all = load_samples(m, tmp.path, "");
  CHECK(all.size() == 2);
  CHECK(load_samples(m, tmp.path, "test").front().label == 1);
  m.records.push_back({"c", "x", 0, "c.vnf", "train"});
  CHECK_THROWS_AS(load_samples(m, tmp.path, "train"), DataError);
}

TEST_CASE("split_dataset") {
  const Manifest m = toy_manifest(3, 100);
  SUBCASE("single bucket") {
    const auto r = split_dataset(m, {{"train", 1.0}}, 1);
    for (const auto& rec : r.manifest.records) CHECK(rec.split == "train");
    CHECK(r.warnings.empty());
  }
  SUBCASE("80/20 per class") {
    const auto r = split_dataset(m, {{"train", 0.8}, {"test", 0.2}}, 5);
    std::map<std::pair<std::size_t, std::string>, int> counts;
    for (const auto& rec : r.manifest.records) ++counts[{rec.class_index, rec.split}];
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(counts[{c, "train"}] == 80);
      CHECK(counts[{c, "test"}] == 20);
    }
    const auto again = split_dataset(m, {{"train", 0.8}, {"test", 0.2}}, 5);
    CHECK(manifest_to_json(again.manifest) == manifest_to_json(r.manifest));
    const auto other = split_dataset(m, {{"train", 0.8}, {"test", 0.2}}, 6);
    CHECK(manifest_to_json(other.manifest) != manifest_to_json(r.manifest));
  }
  SUBCASE("small classes warn") {
    const auto r = split_dataset(toy_manifest(2, 1), {{"train", 0.5}, {"test", 0.5}}, 0);
    CHECK_FALSE(r.warnings.empty());
    CHECK(r.manifest.records.size() == 2);
  }
  SUBCASE("bad fractions") {
    CHECK_THROWS_AS(split_dataset(m, {{"train", 0.8}, {"test", 0.3}}, 0), ConfigError);
    CHECK_THROWS_AS(split_dataset(m, {{"bogus", 1.0}}, 0), ConfigError);
  }
}

TEST_CASE("synthetic generation") {
  SyntheticSpec spec;
  spec.samples_per_class = 10;
  SUBCASE("deterministic bytes") {
    TempDir a, b;
    write_synthetic(generate_synthetic(spec), a.path);
    write_synthetic(generate_synthetic(spec), b.path);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a.path / "views")) {
      CHECK(io::read_file(e.path()) == io::read_file(b.path / "views" / e.path().filename()));
      ++files;
    }
    CHECK(files == 40);
    SyntheticSpec other = spec;
    other.seed = 8;
    CHECK(generate_synthetic(other).samples[0].views.values()[0] != generate_synthetic(spec).samples[0].views.values()[0]);
  }
  SUBCASE("prototype rows have unit norm") {
    const auto ds = generate_synthetic(spec);
    for (const auto& p : ds.prototypes)
      for (std::size_t r = 0; r < p.views(); ++r) {
        double n = 0;
        for (Real x : p.row(r)) n += double(x) * double(x);
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-9);
      }
  }
  SUBCASE("noise-free confusable pairs differ only in order") {
    spec.sigma = 0;
    spec.samples_per_class = 30;
    const auto ds = generate_synthetic(spec);
    std::map<std::size_t, std::vector<const SyntheticSample*>> by_class;
    for (const auto& s : ds.samples) by_class[s.label].push_back(&s);

    for (std::size_t c = 0; c < 4; ++c)
      for (auto* a : by_class[c])
        for (auto* b : by_class[c])
          if (a->shift == b->shift) CHECK(rows_of(a->views) == rows_of(b->views));

    for (std::size_t pair = 0; pair < spec.confusable_pairs; ++pair) {
      const auto a_rows = rows_of(ds.prototypes[2 * pair]);
      const auto b_rows = rows_of(ds.prototypes[2 * pair + 1]);
      auto sa = a_rows, sb = b_rows;
      std::sort(sa.begin(), sa.end());
      std::sort(sb.begin(), sb.end());
      CHECK(sa == sb);
      for (std::size_t s = 0; s < spec.views; ++s) CHECK(shifted(a_rows, s) != b_rows);

      std::multiset<std::vector<Real>> grams_a, grams_b;
      for (std::size_t i = 0; i < spec.views; ++i) {
        auto ga = a_rows[i], gb = b_rows[i];
        ga.insert(ga.end(), a_rows[(i + 1) % spec.views].begin(), a_rows[(i + 1) % spec.views].end());
        gb.insert(gb.end(), b_rows[(i + 1) % spec.views].begin(), b_rows[(i + 1) % spec.views].end());
        grams_a.insert(ga);
        grams_b.insert(gb);
      }
      CHECK(grams_a != grams_b);

      for (auto* x : by_class[2 * pair])
        for (auto* y : by_class[2 * pair + 1]) {
          std::vector<Real> mx(spec.dim, -1e9), my(spec.dim, -1e9);
          for (std::size_t r = 0; r < spec.views; ++r)
            for (std::size_t d = 0; d < spec.dim; ++d) {
              mx[d] = std::max(mx[d], x->views.row(r)[d]);
              my[d] = std::max(my[d], y->views.row(r)[d]);
            }
          CHECK(mx == my);
        }
    }
  }
  SUBCASE("infeasible specs") {
    SyntheticSpec bad = spec;
    bad.views = 2;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = spec;
    bad.classes = 3;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = spec;
    bad.confusable_pairs = 3;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = spec;
    bad.dim = 1;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = spec;
    bad.sigma = -1;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  }
  SUBCASE("swap positions") {
    CHECK(confusable_swap(3) == std::pair<std::size_t, std::size_t>{0, 2});
    CHECK(confusable_swap(12) == std::pair<std::size_t, std::size_t>{0, 6});
    for (std::size_t v = 3; v <= 20; ++v) {
      SyntheticSpec s = spec;
      s.views = v;
      s.samples_per_class = 1;
      CHECK_NOTHROW(generate_synthetic(s));
    }
  }
}
