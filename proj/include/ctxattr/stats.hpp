#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ctxattr/cmf.hpp"
#include "ctxattr/core.hpp"

namespace ctxattr {

/// Percentile of a sample by linear interpolation at rank p * (n - 1),
/// 0 <= p <= 1. The input need not be sorted.
double percentile(std::vector<double> values, double p);

struct BootstrapCi {
    Vector lower;
    Vector upper;
};

/// Percentile bootstrap over query columns. per_query_scores is (scores x m);
/// each replicate resamples the m columns with replacement and re-averages
/// rows. Returns the alpha/2 and 1 - alpha/2 percentiles per row.
BootstrapCi bootstrap_ci(const Matrix& per_query_scores, int n_boot, double alpha,
                         std::uint64_t seed, int jobs = 1);

enum class CmfBootstrapMode {
    /// Resample P's query columns and re-solve per replicate.
    resolve,
    /// Approximation: solve all restarts once, then resample the restart
    /// solutions and re-select the best per replicate.
    restart_resample,
};

/// Bootstrap CI on the CMF mixture weights (length K+1 vectors).
BootstrapCi bootstrap_cmf_ci(const ProbabilityMatrix& p, const CmfConfig& cfg, int n_boot,
                             double alpha, std::uint64_t seed,
                             CmfBootstrapMode mode = CmfBootstrapMode::resolve);

/// Trace of the unbiased sample covariance of the pi vectors — the sum of
/// its eigenvalues, since a covariance matrix is positive semidefinite.
double solution_variation(const std::vector<MixtureWeights>& pi_solutions);

struct SweepConfig {
    std::vector<double> lambdas{0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    int n_instances = 20;
    int n_inits = 100;
    int num_sources = 3;
    int num_queries = 5;
    std::uint64_t seed = 0;
    int jobs = 1;
    /// Per-cell solver settings; lambda_pi/lambda_ptilde, restarts and seed
    /// are overwritten by the sweep itself.
    CmfConfig solver = sweep_solver_defaults();

    static CmfConfig sweep_solver_defaults();
    void validate() const;
};

struct SweepResult {
    std::vector<double> lambdas;
    /// log_variation[l][i]: natural-log solution variation of instance i's
    /// init group at lambdas[l]. Zero variation is floored at log(1e-300).
    std::vector<std::vector<double>> log_variation;
    std::vector<double> median_log_variation;
    /// Per-lambda (p5, p95) band of the per-instance log variations.
    std::vector<std::pair<double, double>> percentile_band;
};

/// For each lambda: draw unstructured (K+1) x m probability matrices, run
/// every random initialization to its own solution, and record the log
/// solution variation per instance. Instances and initializations are shared
/// across lambdas, so the comparison is paired.
SweepResult run_regularization_sweep(const SweepConfig& cfg);

/// Spearman rank correlation with average ranks on ties.
double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

/// CSV rows "lambda,median_log_variation,p5,p95".
void write_sweep_csv(const SweepResult& result, std::ostream& out);
void save_sweep_csv(const SweepResult& result, const std::string& path);

/// Self-contained SVG band plot: one [p5, p95] polygon and one median
/// polyline over log10(lambda) (the lambda = 0 point is drawn one decade
/// left of the smallest positive lambda).
std::string sweep_band_svg(const SweepResult& result);

}  // namespace ctxattr
