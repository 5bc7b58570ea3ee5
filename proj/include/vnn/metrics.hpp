#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vnn/tensor.hpp"

namespace vnn {

enum class Similarity { cosine, euclidean };
enum class Relevance { binary, graded };

std::string to_string(Similarity s);
Similarity parse_similarity(const std::string& s);
std::string to_string(Relevance r);
Relevance parse_relevance(const std::string& s);

struct DescriptorEntry {
  std::string id;
  std::string class_label;
  /// Optional finer label; only used by graded relevance.
  std::string subclass;
  std::vector<Real> values;
};

struct DescriptorSet {
  std::vector<DescriptorEntry> entries;
  std::string split = "both";

  /// Ids unique, all descriptors the same non-zero dimension.
  void validate() const;
};

struct RankedList {
  std::string query_id;
  /// Gallery indices, best first.
  std::vector<std::size_t> order;
  std::vector<std::string> ids;
  /// Non-increasing. For euclidean ranking this is the negated distance.
  std::vector<double> scores;
};

/// Orders candidates by score descending, ties by ascending id.
RankedList rank_by_scores(std::string query_id, std::span<const std::string> ids, std::span<const double> scores);

/// Ranks gallery against query. A gallery item with the query's id is skipped.
/// With normalize, both sides are L2-normalized before scoring.
RankedList rank_gallery(const DescriptorEntry& query, const DescriptorSet& gallery, Similarity similarity,
                        bool normalize = false);

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

/// One point per rank position. relevance holds 0/1 per rank.
std::vector<PrPoint> precision_recall_curve(std::span<const int> relevance);

/// Mean of precision@rank over the ranks holding relevant items.
double average_precision(std::span<const int> relevance);

/// Trapezoidal area over recall, with the first point's precision extended
/// back to recall 0.
double pr_auc(std::span<const PrPoint> curve);

/// F1 of precision hits@k/k and recall hits@k/total_relevant.
double f_measure_at(std::span<const int> relevance, std::size_t k, std::size_t total_relevant);

/// NDCG with log2(i+1) discount; k == 0 means the whole list.
double ndcg_at(std::span<const double> gains, std::size_t k);

struct Aggregate {
  double micro = 0;
  double macro = 0;
};

/// micro: mean over queries. macro: mean over classes of per-class means.
Aggregate micro_macro_aggregate(std::span<const double> values, std::span<const std::string> classes);

/// Arithmetic mean of micro and macro (the "micro + macro" summary column).
double micro_macro_mean(const Aggregate& a);

struct EvalOptions {
  Similarity similarity = Similarity::cosine;
  std::size_t f1_cutoff = 32;
  std::size_t ndcg_cutoff = 0;
  bool normalize = false;
  Relevance relevance = Relevance::binary;
};

struct QueryResult {
  std::string id;
  std::string class_label;
  double ap = 0;
  double auc = 0;
  double f1 = 0;
  double ndcg = 0;
  std::vector<PrPoint> curve;
};

struct MetricAggregates {
  Aggregate map, auc, f1, ndcg;
};

struct ClassMeans {
  std::size_t queries = 0;
  double map = 0, auc = 0, f1 = 0, ndcg = 0;
};

struct RetrievalReport {
  EvalOptions options;
  /// Defined queries in ascending id order.
  std::vector<QueryResult> per_query;
  std::map<std::string, ClassMeans> per_class;
  MetricAggregates aggregates;
  std::size_t undefined_queries = 0;
};

/// Scores every query against the gallery. Queries with no relevant gallery
/// item are counted in undefined_queries and left out of every aggregate.
RetrievalReport evaluate_retrieval(const DescriptorSet& queries, const DescriptorSet& gallery,
                                   const EvalOptions& options);

/// Fixed key order, values printed with 6 decimals.
std::string report_to_json(const RetrievalReport& report);

}  // namespace vnn
