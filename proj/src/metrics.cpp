#include "vnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vnn/errors.hpp"

namespace vnn {

std::string to_string(Similarity s) { return s == Similarity::cosine ? "cosine" : "euclidean"; }

Similarity parse_similarity(const std::string& s) {
  if (s == "cosine") return Similarity::cosine;
  if (s == "euclidean") return Similarity::euclidean;
  throw ConfigError("unknown similarity '" + s + "' (expected cosine or euclidean)");
}

std::string to_string(Relevance r) { return r == Relevance::binary ? "binary" : "graded"; }

Relevance parse_relevance(const std::string& s) {
  if (s == "binary") return Relevance::binary;
  if (s == "graded") return Relevance::graded;
  throw ConfigError("unknown relevance mode '" + s + "' (expected binary or graded)");
}

void DescriptorSet::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw DataError("duplicate descriptor id '" + e.id + "'");
    if (e.values.empty()) throw DimensionError("descriptor '" + e.id + "' is empty");
    if (e.values.size() != entries.front().values.size()) {
      throw DimensionError("descriptor '" + e.id + "' has dimension " + std::to_string(e.values.size()) +
                           ", expected " + std::to_string(entries.front().values.size()));
    }
  }
}

RankedList rank_by_scores(std::string query_id, std::span<const std::string> ids, std::span<const double> scores) {
  if (ids.size() != scores.size()) throw DimensionError("rank_by_scores: ids and scores differ in length");
  RankedList list;
  list.query_id = std::move(query_id);
  list.order.resize(ids.size());
  std::iota(list.order.begin(), list.order.end(), std::size_t{0});
  std::sort(list.order.begin(), list.order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  for (std::size_t i : list.order) {
    list.ids.push_back(ids[i]);
    list.scores.push_back(scores[i]);
  }
  return list;
}

namespace {

double norm_of(std::span<const Real> v) {
  double acc = 0;
  for (Real x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(acc);
}

double score(std::span<const Real> q, double q_norm, std::span<const Real> g, double g_norm, Similarity sim,
             bool normalize) {
  if (sim == Similarity::cosine) {
    double d = 0;
    for (std::size_t i = 0; i < q.size(); ++i) d += static_cast<double>(q[i]) * static_cast<double>(g[i]);
    return d / (q_norm * g_norm);
  }
  const double qs = normalize ? 1.0 / q_norm : 1.0;
  const double gs = normalize ? 1.0 / g_norm : 1.0;
  double d2 = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double diff = static_cast<double>(q[i]) * qs - static_cast<double>(g[i]) * gs;
    d2 += diff * diff;
  }
  return -std::sqrt(d2);
}

}  // namespace

RankedList rank_gallery(const DescriptorEntry& query, const DescriptorSet& gallery, Similarity similarity,
                        bool normalize) {
  if (gallery.entries.empty()) throw DomainError("rank_gallery: empty gallery");
  const bool need_norm = similarity == Similarity::cosine || normalize;
  const double q_norm = norm_of(query.values);
  if (need_norm && q_norm == 0.0) throw NumericError("descriptor '" + query.id + "' is a zero vector");

  std::vector<std::string> ids;
  std::vector<std::size_t> source;
  std::vector<double> scores;
  for (std::size_t i = 0; i < gallery.entries.size(); ++i) {
    const auto& g = gallery.entries[i];
    if (g.id == query.id) continue;
    if (g.values.size() != query.values.size()) {
      throw DimensionError("descriptor '" + g.id + "' has dimension " + std::to_string(g.values.size()) +
                           ", query '" + query.id + "' has " + std::to_string(query.values.size()));
    }
    const double g_norm = norm_of(g.values);
    if (need_norm && g_norm == 0.0) throw NumericError("descriptor '" + g.id + "' is a zero vector");
    ids.push_back(g.id);
    source.push_back(i);
    scores.push_back(score(query.values, q_norm, g.values, g_norm, similarity, normalize));
  }
  RankedList list = rank_by_scores(query.id, ids, scores);
  for (auto& idx : list.order) idx = source[idx];
  return list;
}

namespace {

std::size_t count_relevant(std::span<const int> relevance) {
  std::size_t r = 0;
  for (int x : relevance) r += x != 0 ? 1 : 0;
  return r;
}

}  // namespace

std::vector<PrPoint> precision_recall_curve(std::span<const int> relevance) {
  const std::size_t total = count_relevant(relevance);
  if (total == 0) throw UndefinedMetricError("precision-recall curve needs at least one relevant item");
  std::vector<PrPoint> curve;
  curve.reserve(relevance.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    hits += relevance[i] != 0 ? 1 : 0;
    curve.push_back({static_cast<double>(hits) / static_cast<double>(total),
                     static_cast<double>(hits) / static_cast<double>(i + 1)});
  }
  return curve;
}

double average_precision(std::span<const int> relevance) {
  const std::size_t total = count_relevant(relevance);
  if (total == 0) throw UndefinedMetricError("average precision needs at least one relevant item");
  double acc = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] == 0) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return acc / static_cast<double>(total);
}

double pr_auc(std::span<const PrPoint> curve) {
  if (curve.empty()) throw DomainError("pr_auc needs at least one curve point");
  double area = 0;
  double prev_recall = 0;
  double prev_precision = curve.front().precision;
  for (const auto& p : curve) {
    area += (p.recall - prev_recall) * 0.5 * (p.precision + prev_precision);
    prev_recall = p.recall;
    prev_precision = p.precision;
  }
  return area;
}

double f_measure_at(std::span<const int> relevance, std::size_t k, std::size_t total_relevant) {
  if (k == 0) throw DomainError("F-measure cutoff k must be at least 1");
  if (total_relevant == 0) throw DomainError("F-measure needs at least one relevant item");
  const std::size_t limit = std::min(k, relevance.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < limit; ++i) hits += relevance[i] != 0 ? 1 : 0;
  if (hits == 0) return 0.0;
  const double precision = static_cast<double>(hits) / static_cast<double>(k);
  const double recall = static_cast<double>(hits) / static_cast<double>(total_relevant);
  return 2.0 * precision * recall / (precision + recall);
}

double ndcg_at(std::span<const double> gains, std::size_t k) {
  if (gains.empty()) throw UndefinedMetricError("NDCG of an empty list");
  for (double g : gains) {
    if (!(g >= 0)) throw DomainError("NDCG gains must be non-negative");
  }
  const std::size_t limit = k == 0 ? gains.size() : std::min(k, gains.size());
  std::vector<double> ideal(gains.begin(), gains.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  if (ideal.front() == 0.0) throw UndefinedMetricError("NDCG needs at least one positive gain");
  double dcg = 0;
  double idcg = 0;
  for (std::size_t i = 0; i < limit; ++i) {
    const double discount = std::log2(static_cast<double>(i) + 2.0);
    dcg += gains[i] / discount;
    idcg += ideal[i] / discount;
  }
  return dcg / idcg;
}

Aggregate micro_macro_aggregate(std::span<const double> values, std::span<const std::string> classes) {
  if (values.empty()) throw DomainError("cannot aggregate an empty set of values");
  if (values.size() != classes.size()) throw DimensionError("values and class labels differ in length");
  std::map<std::string, std::pair<double, std::size_t>> per_class;
  double total = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    total += values[i];
    auto& [sum, count] = per_class[classes[i]];
    sum += values[i];
    ++count;
  }
  double macro = 0;
  for (const auto& [cls, acc] : per_class) macro += acc.first / static_cast<double>(acc.second);
  return {total / static_cast<double>(values.size()), macro / static_cast<double>(per_class.size())};
}

double micro_macro_mean(const Aggregate& a) { return 0.5 * (a.micro + a.macro); }

RetrievalReport evaluate_retrieval(const DescriptorSet& queries, const DescriptorSet& gallery,
                                   const EvalOptions& options) {
  queries.validate();
  gallery.validate();
  if (gallery.entries.empty()) throw DomainError("evaluation needs a non-empty gallery");
  if (options.f1_cutoff == 0) throw ConfigError("F1 cutoff must be at least 1");

  std::vector<const DescriptorEntry*> ordered;
  for (const auto& q : queries.entries) ordered.push_back(&q);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });

  RetrievalReport report;
  report.options = options;
  for (const DescriptorEntry* q : ordered) {
    const RankedList ranked = rank_gallery(*q, gallery, options.similarity, options.normalize);
    std::vector<int> rel;
    std::vector<double> gains;
    rel.reserve(ranked.order.size());
    for (std::size_t idx : ranked.order) {
      const auto& g = gallery.entries[idx];
      const bool same_class = g.class_label == q->class_label;
      rel.push_back(same_class ? 1 : 0);
      double gain = same_class ? 1.0 : 0.0;
      if (options.relevance == Relevance::graded && same_class && !q->subclass.empty() && g.subclass == q->subclass) {
        gain = 2.0;
      }
      gains.push_back(gain);
    }
    const std::size_t total = count_relevant(rel);
    if (total == 0) {
      ++report.undefined_queries;
      continue;
    }
    QueryResult r;
    r.id = q->id;
    r.class_label = q->class_label;
    r.curve = precision_recall_curve(rel);
    r.ap = average_precision(rel);
    r.auc = pr_auc(r.curve);
    r.f1 = f_measure_at(rel, options.f1_cutoff, total);
    r.ndcg = ndcg_at(gains, options.ndcg_cutoff);
    report.per_query.push_back(std::move(r));
  }
  if (report.per_query.empty()) throw UndefinedMetricError("no query has a relevant gallery item");

  std::vector<std::string> classes;
  std::vector<double> ap, auc, f1, ndcg;
  for (const auto& r : report.per_query) {
    classes.push_back(r.class_label);
    ap.push_back(r.ap);
    auc.push_back(r.auc);
    f1.push_back(r.f1);
    ndcg.push_back(r.ndcg);
    auto& cm = report.per_class[r.class_label];
    ++cm.queries;
    cm.map += r.ap;
    cm.auc += r.auc;
    cm.f1 += r.f1;
    cm.ndcg += r.ndcg;
  }
  for (auto& [cls, cm] : report.per_class) {
    const auto n = static_cast<double>(cm.queries);
    cm.map /= n;
    cm.auc /= n;
    cm.f1 /= n;
    cm.ndcg /= n;
  }
  report.aggregates.map = micro_macro_aggregate(ap, classes);
  report.aggregates.auc = micro_macro_aggregate(auc, classes);
  report.aggregates.f1 = micro_macro_aggregate(f1, classes);
  report.aggregates.ndcg = micro_macro_aggregate(ndcg, classes);
  return report;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // Avoid "-0.000000" for tiny negative rounding noise.
  if (std::string_view(buf) == "-0.000000") return "0.000000";
  return buf;
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

void write_metrics(std::ostringstream& os, const MetricAggregates& a, bool micro) {
  auto pick = [micro](const Aggregate& g) { return micro ? g.micro : g.macro; };
  os << "{\"map\": " << fixed6(pick(a.map)) << ", \"auc\": " << fixed6(pick(a.auc)) << ", \"f1\": "
     << fixed6(pick(a.f1)) << ", \"ndcg\": " << fixed6(pick(a.ndcg)) << "}";
}

}  // namespace

std::string report_to_json(const RetrievalReport& report) {
  std::ostringstream os;
  os << "{\n  \"micro\": ";
  write_metrics(os, report.aggregates, true);
  os << ",\n  \"macro\": ";
  write_metrics(os, report.aggregates, false);
  os << ",\n  \"per_query\": [";
  for (std::size_t i = 0; i < report.per_query.size(); ++i) {
    const auto& q = report.per_query[i];
    os << (i ? ",\n" : "\n") << "    {\"id\": " << quoted(q.id) << ", \"class\": " << quoted(q.class_label)
       << ", \"ap\": " << fixed6(q.ap) << ", \"f1\": " << fixed6(q.f1) << ", \"ndcg\": " << fixed6(q.ndcg) << "}";
  }
  os << (report.per_query.empty() ? "]" : "\n  ]");
  const auto& o = report.options;
  os << ",\n  \"options\": {\"similarity\": " << quoted(to_string(o.similarity)) << ", \"f1_cutoff\": " << o.f1_cutoff
     << ", \"ndcg_cutoff\": " << o.ndcg_cutoff << ", \"normalize\": " << (o.normalize ? "true" : "false")
     << ", \"relevance\": " << quoted(to_string(o.relevance)) << "}";
  os << ",\n  \"undefined_queries\": " << report.undefined_queries << "\n}\n";
  return os.str();
}

}  // namespace vnn
