#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxattr/core.hpp"
#include "ctxattr/llm.hpp"
#include "ctxattr/rag.hpp"

namespace ctxattr {

enum class SimilarityMode { categorical, probabilistic };

struct SimilarityConfig {
    SimilarityMode mode = SimilarityMode::categorical;
    /// Credit when exactly one side answers IDontKnow (categorical mode).
    double idk_credit = 0.5;

    void validate() const;
};

struct ScmConfig {
    SimilarityConfig similarity;
    /// Exact enumeration runs 2^K coalitions; refuse anything above this.
    int max_coalition_k = 12;
    int jobs = 1;
};

struct ShapleyResult {
    Vector phi;            // length K, averaged over queries
    Matrix per_query_phi;  // K x m
    CoalitionScoreTable coalition_scores;
};

nlohmann::json shapley_result_to_json(const ShapleyResult& result);

// ---- Operations ------------------------------------------------------------

/// Categorical: 1 on exact label match, idk_credit when exactly one side is
/// IDontKnow, 0 otherwise. Probabilistic: 1 - |p_a - p_b| on yes-probabilities.
double similarity(const CategoricalAnswer& a, const CategoricalAnswer& b,
                  const SimilarityConfig& cfg);

/// Mean over queries of per-query similarity.
double coalition_score(const std::vector<CategoricalAnswer>& no_context,
                       const std::vector<CategoricalAnswer>& with_context,
                       const SimilarityConfig& cfg);

/// Exact Shapley coefficient |S|! (K-|S|-1)! / K!.
double shapley_weight(int subset_size, int num_datasets);

/// s_with - s_without, the change from adding one dataset to a coalition.
double residual_gain(double s_with, double s_without);

/// Shapley values from a complete score table over all 2^K coalitions. The
/// marginal-contribution sum, weight |S|!(K-|S|-1)!/K! per subset.
Vector shapley_values(const CoalitionScoreTable& table, int num_datasets);

/// Dense variant: scores indexed by coalition bitmask, scores[0] = s_empty.
Vector shapley_values_dense(const std::vector<double>& scores_by_mask, int num_datasets);

/// Persistent cache of per-coalition, per-query similarities so an
/// interrupted enumeration can resume. record() may be called concurrently.
class CoalitionJournal {
  public:
    virtual ~CoalitionJournal() = default;
    virtual std::optional<std::vector<double>> lookup(const Coalition& s) const = 0;
    virtual void record(const Coalition& s, const std::vector<double>& per_query_sims) = 0;
};

/// The full enumeration: one no-context answer per query, one answer per
/// (query, nonempty coalition) pair, then exact Shapley aggregation. Per-query
/// phi is computed first and averaged over the m queries. s_empty is 1 by
/// definition (an output compared with itself).
ShapleyResult run_scm(LLMBackend& backend, const Retriever& retriever,
                      const std::vector<std::string>& queries, int num_datasets,
                      const ScmConfig& cfg, CoalitionJournal* journal = nullptr);

}  // namespace ctxattr
