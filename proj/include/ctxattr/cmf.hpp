#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "ctxattr/core.hpp"
#include "ctxattr/llm.hpp"
#include "ctxattr/rag.hpp"

namespace ctxattr {

struct CmfConfig {
    double lambda_pi = 0.1;      // entropy regularizer weight
    double lambda_ptilde = 0.1;  // center-pull weight
    int max_outer_iters = 1000;
    double outer_tol = 1e-6;  // relative objective decrease
    int inner_max_iters = 500;
    double inner_tol = 1e-8;
    int restarts = 10;
    double init_pi_jitter = 0.01;
    double init_ptilde_jitter = 0.05;
    std::uint64_t seed = 0;
    /// Solve the box-constrained latent step exactly (coordinate descent to
    /// tolerance) instead of ridge-solve-then-clamp.
    bool exact_ptilde_step = false;
    /// With lambda_ptilde = 0 a rank-deficient system normally falls back to
    /// the minimum-norm solution; set to fail instead.
    bool error_on_singular = false;
    int jobs = 1;

    void validate() const;
};

struct CmfSolution {
    MixtureWeights pi;
    LatentMatrix ptilde;
    double objective = 0.0;
    /// Objective after initialization and after every half-step (pi step,
    /// latent step). Non-increasing within 1e-9.
    std::vector<double> objective_trace;
    bool converged = false;
    int restart_index = 0;
};

struct PiStepResult {
    MixtureWeights pi;
    int iterations = 0;
    bool converged = true;
};

/// Observer invoked after initialization and after each half-step of one
/// restart. phase: 0 = init, 1 = after pi step, 2 = after latent step.
struct CmfStepState {
    int restart_index;
    int outer_iter;
    int phase;
    const Vector& pi;
    const Matrix& ptilde;
    double objective;
};
using CmfStepObserver = std::function<void(const CmfStepState&)>;

nlohmann::json cmf_solution_to_json(const CmfSolution& solution);

// ---- Operations ------------------------------------------------------------

/// The structured (K+1)x(K+1) mixing matrix: row 0 is pi itself; row k >= 1
/// has pi_0 in column 0 and (1 - pi_0) in column k. Every row sums to 1.
Matrix build_mixing_matrix(const MixtureWeights& pi);

/// ||P - Pi Ptilde||_F^2 - lambda_pi H(pi) + lambda_ptilde ||Ptilde - 1/2||_F^2.
double cmf_objective(const ProbabilityMatrix& p, const MixtureWeights& pi,
                     const LatentMatrix& ptilde, const CmfConfig& cfg);

/// Raw-matrix variant used by the solver and by finite-difference checks; pi
/// need not be feasible.
double cmf_objective_raw(const Matrix& p, const Vector& pi, const Matrix& ptilde,
                         const CmfConfig& cfg);

/// Analytic gradient of cmf_objective_raw in pi, with probabilities clamped
/// below at 1e-12 inside the entropy logs.
Vector pi_objective_gradient(const Matrix& p, const Vector& pi, const Matrix& ptilde,
                             const CmfConfig& cfg);

/// Convex pi block: projected gradient descent with Armijo backtracking
/// (initial step 1, shrink 0.5, slope factor 1e-4). Never increases the
/// fixed-latent objective.
PiStepResult solve_pi_step(const ProbabilityMatrix& p, const LatentMatrix& ptilde,
                           const MixtureWeights& pi_init, const CmfConfig& cfg);

/// The unconstrained per-column normal-equation solve behind the latent
/// step: (M^T M + lambda I) X = M^T p + (lambda/2) 1 for an arbitrary mixing
/// matrix M. With lambda = 0 a rank-deficient system either raises
/// SingularSystem or falls back to the minimum-norm solution. Note the
/// structured mixing matrix always has a nontrivial kernel (rows k >= 1 are
/// affine combinations of row 0's pattern), so the lambda = 0 path is the
/// rule there, not the exception.
Matrix latent_ridge_solve(const Matrix& mixing, const Matrix& p, double lambda,
                          bool error_on_singular);

/// Convex latent block: per-column ridge solve of
/// (Pi^T Pi + lambda I) x = Pi^T p + (lambda/2) 1, clamped to [0,1]. A column
/// that clamping would make worse than its initializer is refined by box
/// coordinate descent instead, so the step never increases the objective.
LatentMatrix solve_ptilde_step(const ProbabilityMatrix& p, const MixtureWeights& pi,
                               const LatentMatrix& ptilde_init, const CmfConfig& cfg);

/// One restart of the alternating scheme from its seeded initialization.
CmfSolution solve_cmf_single(const ProbabilityMatrix& p, const CmfConfig& cfg, int restart_index,
                             const CmfStepObserver& observer = nullptr);

/// All restarts (embarrassingly parallel; selection independent of
/// completion order).
std::vector<CmfSolution> run_restarts(const ProbabilityMatrix& p, const CmfConfig& cfg);

/// Best restart by final objective; ties within 1e-12 go to the lowest
/// restart index.
CmfSolution solve_cmf(const ProbabilityMatrix& p, const CmfConfig& cfg);

/// pi_k / (1 - pi_0): dataset k's share of the non-base contribution.
double normalized_contribution(const MixtureWeights& pi, int k);

/// The data-collection loop: K+1 prompts per query (no context, then one per
/// dataset), probabilities via estimate_probability.
ProbabilityMatrix collect_probability_matrix(LLMBackend& backend, const Retriever& retriever,
                                             const std::vector<std::string>& queries,
                                             int n_samples = 1, int jobs = 1);

}  // namespace ctxattr
