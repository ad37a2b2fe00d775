#include "ctxattr/cmf.hpp"

#include <algorithm>
#include <cmath>

#include "ctxattr/parallel.hpp"
#include "ctxattr/rng.hpp"

namespace ctxattr {

void CmfConfig::validate() const {
    if (lambda_pi < 0.0 || lambda_ptilde < 0.0) {
        raise(ErrorCode::InvalidConfig, "regularizer weights must be >= 0");
    }
    if (outer_tol <= 0.0 || inner_tol <= 0.0) {
        raise(ErrorCode::InvalidConfig, "tolerances must be > 0");
    }
    if (max_outer_iters < 1 || inner_max_iters < 1) {
        raise(ErrorCode::InvalidConfig, "iteration limits must be >= 1");
    }
    if (restarts < 1) raise(ErrorCode::InvalidConfig, "restarts must be >= 1");
    if (init_pi_jitter < 0.0 || init_ptilde_jitter < 0.0) {
        raise(ErrorCode::InvalidConfig, "init jitters must be >= 0");
    }
}

Matrix build_mixing_matrix(const MixtureWeights& pi) {
    const Eigen::Index n = pi.size();
    Matrix mixing = Matrix::Zero(n, n);
    mixing.row(0) = pi.pi().transpose();
    for (Eigen::Index k = 1; k < n; ++k) {
        mixing(k, 0) = pi.base();
        mixing(k, k) = 1.0 - pi.base();
    }
    return mixing;
}

namespace {

constexpr double kEntropyFloor = 1e-12;

Matrix mixing_from_raw(const Vector& pi) {
    const Eigen::Index n = pi.size();
    Matrix mixing = Matrix::Zero(n, n);
    mixing.row(0) = pi.transpose();
    for (Eigen::Index k = 1; k < n; ++k) {
        mixing(k, 0) = pi[0];
        mixing(k, k) = 1.0 - pi[0];
    }
    return mixing;
}

// Signed entropy penalty: -lambda_pi * H extended off the simplex through the
// same formula the gradient differentiates.
double entropy_penalty(const Vector& pi, double lambda_pi) {
    if (lambda_pi == 0.0) return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pi.size(); ++i) {
        double p = std::max(pi[i], kEntropyFloor);
        sum += pi[i] * std::log(p);
    }
    return lambda_pi * sum;
}

}  // namespace

double cmf_objective_raw(const Matrix& p, const Vector& pi, const Matrix& ptilde,
                         const CmfConfig& cfg) {
    if (pi.size() != p.rows() || ptilde.rows() != p.rows() || ptilde.cols() != p.cols()) {
        raise(ErrorCode::ShapeMismatch, "objective operands disagree in shape");
    }
    Matrix residual = mixing_from_raw(pi) * ptilde - p;
    double fit = residual.squaredNorm();
    double center = 0.0;
    if (cfg.lambda_ptilde > 0.0) {
        center = cfg.lambda_ptilde * (ptilde.array() - 0.5).matrix().squaredNorm();
    }
    return fit + entropy_penalty(pi, cfg.lambda_pi) + center;
}

double cmf_objective(const ProbabilityMatrix& p, const MixtureWeights& pi,
                     const LatentMatrix& ptilde, const CmfConfig& cfg) {
    return cmf_objective_raw(p.values(), pi.pi(), ptilde.values(), cfg);
}

Vector pi_objective_gradient(const Matrix& p, const Vector& pi, const Matrix& ptilde,
                             const CmfConfig& cfg) {
    const Eigen::Index n = pi.size();
    Matrix residual = mixing_from_raw(pi) * ptilde - p;

    // d/d pi_j of the fit term: row 0 of Pi carries pi directly; rows k >= 1
    // depend on pi only through pi_0.
    Vector grad = 2.0 * (ptilde * residual.row(0).transpose());
    double extra = 0.0;
    for (Eigen::Index k = 1; k < n; ++k) {
        extra += residual.row(k).dot(ptilde.row(0) - ptilde.row(k));
    }
    grad[0] += 2.0 * extra;

    if (cfg.lambda_pi > 0.0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            grad[i] += cfg.lambda_pi * (std::log(std::max(pi[i], kEntropyFloor)) + 1.0);
        }
    }
    return grad;
}

PiStepResult solve_pi_step(const ProbabilityMatrix& p, const LatentMatrix& ptilde,
                           const MixtureWeights& pi_init, const CmfConfig& cfg) {
    cfg.validate();
    const Matrix& pv = p.values();
    const Matrix& pt = ptilde.values();

    Vector x = simplex_project(pi_init.pi());
    double fx = cmf_objective_raw(pv, x, pt, cfg);
    bool converged = false;
    int it = 0;
    for (; it < cfg.inner_max_iters; ++it) {
        Vector grad = pi_objective_gradient(pv, x, pt, cfg);
        double step = 1.0;
        bool accepted = false;
        Vector z;
        double fz = 0.0;
        while (step >= 1e-14) {
            z = simplex_project(x - step * grad);
            Vector dx = z - x;
            double slope = grad.dot(dx);
            fz = cmf_objective_raw(pv, z, pt, cfg);
            if (fz <= fx + 1e-4 * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {  // no descent direction along the projection arc
            converged = true;
            break;
        }
        double move = (z - x).norm();
        x = std::move(z);
        fx = fz;
        if (move <= cfg.inner_tol) {
            converged = true;
            ++it;
            break;
        }
    }
    return PiStepResult{MixtureWeights(x), it, converged};
}

namespace {

// Quadratic per-column pieces: g(x) = x^T A x - 2 b^T x + const, with
// A = Pi^T Pi + lambda I and b = Pi^T p_col + (lambda/2) 1.
double column_objective(const Matrix& mixing, const Vector& p_col, double lambda,
                        const Vector& x) {
    double fit = (mixing * x - p_col).squaredNorm();
    double center = lambda * (x.array() - 0.5).matrix().squaredNorm();
    return fit + center;
}

// Cyclic coordinate descent on the box-constrained column problem. Each
// update is an exact coordinate minimization, so the objective never
// increases.
Vector coordinate_descent_column(const Matrix& a, const Vector& b, Vector x, double tol,
                                 int max_sweeps) {
    const Eigen::Index n = x.size();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_move = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (a(i, i) < 1e-300) continue;
            double r = b[i] - a.row(i).dot(x) + a(i, i) * x[i];
            double next = std::clamp(r / a(i, i), 0.0, 1.0);
            max_move = std::max(max_move, std::abs(next - x[i]));
            x[i] = next;
        }
        if (max_move <= tol) break;
    }
    return x;
}

}  // namespace

Matrix latent_ridge_solve(const Matrix& mixing, const Matrix& p, double lambda,
                          bool error_on_singular) {
    if (mixing.rows() != p.rows()) {
        raise(ErrorCode::ShapeMismatch, "mixing matrix and data disagree in row count");
    }
    if (lambda < 0.0) raise(ErrorCode::InvalidConfig, "ridge weight must be >= 0");
    Matrix a = mixing.transpose() * mixing;
    a.diagonal().array() += lambda;
    Matrix b = mixing.transpose() * p;
    b.array() += lambda * 0.5;

    if (lambda > 0.0) return a.llt().solve(b);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
    if (cod.rank() < a.rows() && error_on_singular) {
        raise(ErrorCode::SingularSystem,
              "M^T M is rank-deficient with lambda = 0; raise the ridge weight or allow the "
              "minimum-norm fallback");
    }
    return cod.solve(b);  // minimum-norm fallback
}

LatentMatrix solve_ptilde_step(const ProbabilityMatrix& p, const MixtureWeights& pi,
                               const LatentMatrix& ptilde_init, const CmfConfig& cfg) {
    cfg.validate();
    const Matrix& pv = p.values();
    const Eigen::Index m = pv.cols();
    const double lambda = cfg.lambda_ptilde;

    Matrix mixing = build_mixing_matrix(pi);
    Matrix a = mixing.transpose() * mixing;
    a.diagonal().array() += lambda;
    Matrix b = mixing.transpose() * pv;
    b.array() += lambda * 0.5;

    Matrix solution =
        box_clamp(latent_ridge_solve(mixing, pv, lambda, cfg.error_on_singular), 0.0, 1.0);

    for (Eigen::Index j = 0; j < m; ++j) {
        Vector init_col = ptilde_init.values().col(j);
        if (cfg.exact_ptilde_step) {
            Vector refined =
                coordinate_descent_column(a, b.col(j), solution.col(j), 1e-10, 5000);
            solution.col(j) = refined;
            continue;
        }
        // Clamping can undo the ridge solve's optimality; fall back to
        // coordinate descent from the initializer when that happens.
        double clamped_obj = column_objective(mixing, pv.col(j), lambda, solution.col(j));
        double init_obj = column_objective(mixing, pv.col(j), lambda, init_col);
        if (clamped_obj > init_obj + 1e-12) {
            Vector refined = coordinate_descent_column(a, b.col(j), init_col, 1e-12, 5000);
            if (column_objective(mixing, pv.col(j), lambda, refined) < clamped_obj) {
                solution.col(j) = refined;
            }
        }
    }
    return LatentMatrix(solution);
}

CmfSolution solve_cmf_single(const ProbabilityMatrix& p, const CmfConfig& cfg, int restart_index,
                             const CmfStepObserver& observer) {
    cfg.validate();
    if (p.values().rows() < 2) {
        raise(ErrorCode::ShapeMismatch, "CMF needs at least one dataset row besides the base");
    }
    const Eigen::Index n = p.values().rows();
    const Eigen::Index m = p.values().cols();
    const auto r = static_cast<std::uint64_t>(restart_index);

    auto pi_stream = RandomStream::substream(cfg.seed, {stream_id::restart, r, 0});
    auto pt_stream = RandomStream::substream(cfg.seed, {stream_id::restart, r, 1});

    // P_tilde around 1/2, pi around uniform.
    Matrix pt(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            pt(i, j) = 0.5 + pt_stream.uniform(-cfg.init_ptilde_jitter, cfg.init_ptilde_jitter);
        }
    }
    pt = box_clamp(pt, 0.0, 1.0);
    Vector pi_raw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        pi_raw[i] = 1.0 / static_cast<double>(n) +
                    pi_stream.uniform(-cfg.init_pi_jitter, cfg.init_pi_jitter);
    }
    MixtureWeights pi(simplex_project(pi_raw));
    LatentMatrix ptilde(pt);

    double objective = cmf_objective(p, pi, ptilde, cfg);
    std::vector<double> trace{objective};
    if (observer) observer(CmfStepState{restart_index, 0, 0, pi.pi(), ptilde.values(), objective});

    bool converged = false;
    double prev_outer = objective;
    for (int outer = 1; outer <= cfg.max_outer_iters; ++outer) {
        pi = solve_pi_step(p, ptilde, pi, cfg).pi;
        objective = cmf_objective(p, pi, ptilde, cfg);
        trace.push_back(objective);
        if (observer) {
            observer(CmfStepState{restart_index, outer, 1, pi.pi(), ptilde.values(), objective});
        }

        ptilde = solve_ptilde_step(p, pi, ptilde, cfg);
        objective = cmf_objective(p, pi, ptilde, cfg);
        trace.push_back(objective);
        if (observer) {
            observer(CmfStepState{restart_index, outer, 2, pi.pi(), ptilde.values(), objective});
        }

        if (prev_outer - objective <= cfg.outer_tol * std::max(1.0, std::abs(prev_outer))) {
            converged = true;
            break;
        }
        prev_outer = objective;
    }

    return CmfSolution{std::move(pi), std::move(ptilde), objective,
                       std::move(trace),  converged,       restart_index};
}

std::vector<CmfSolution> run_restarts(const ProbabilityMatrix& p, const CmfConfig& cfg) {
    cfg.validate();
    std::vector<std::optional<CmfSolution>> slots(cfg.restarts);
    parallel_for(static_cast<std::size_t>(cfg.restarts), cfg.jobs,
                 [&](std::size_t r) { slots[r] = solve_cmf_single(p, cfg, static_cast<int>(r)); });
    std::vector<CmfSolution> out;
    out.reserve(slots.size());
    for (auto& slot : slots) out.push_back(std::move(*slot));
    return out;
}

CmfSolution solve_cmf(const ProbabilityMatrix& p, const CmfConfig& cfg) {
    auto restarts = run_restarts(p, cfg);
    std::size_t best = 0;
    for (std::size_t r = 1; r < restarts.size(); ++r) {
        if (restarts[r].objective < restarts[best].objective - 1e-12) best = r;
    }
    return std::move(restarts[best]);
}

double normalized_contribution(const MixtureWeights& pi, int k) {
    if (k < 1 || k > pi.num_sources()) {
        raise(ErrorCode::OutOfRange, "dataset index " + std::to_string(k));
    }
    if (pi.base() >= 1.0 - 1e-12) {
        raise(ErrorCode::DegenerateBase,
              "pi_0 = " + std::to_string(pi.base()) + " leaves no dataset share");
    }
    return pi[k] / (1.0 - pi.base());
}

ProbabilityMatrix collect_probability_matrix(LLMBackend& backend, const Retriever& retriever,
                                             const std::vector<std::string>& queries,
                                             int n_samples, int jobs) {
    if (queries.empty()) raise(ErrorCode::InsufficientQueries, "need at least one query");
    const int k = retriever.num_datasets();
    if (k < 1) raise(ErrorCode::EmptyIndex, "retriever has no datasets");
    const std::size_t m = queries.size();
    const auto tmpl = prompt_template(TemplateId::boolean_final);

    Matrix values(k + 1, m);
    parallel_for((k + 1) * m, jobs, [&](std::size_t flat) {
        const int row = static_cast<int>(flat / m);
        const std::size_t j = flat % m;
        std::string prompt;
        if (row == 0) {
            prompt = render_prompt(tmpl, queries[j], std::nullopt);
        } else {
            std::string context = retriever.retrieve(queries[j], Coalition::of({row}));
            prompt = render_prompt(tmpl, queries[j], context);
        }
        values(row, j) = estimate_probability(backend, prompt, n_samples);
    });

    std::vector<std::string> labels{"none"};
    for (const auto& id : retriever.dataset_ids()) labels.push_back(id);
    return validate_probability_matrix(values, labels, queries);
}

nlohmann::json cmf_solution_to_json(const CmfSolution& solution) {
    nlohmann::json j;
    j["pi"] = std::vector<double>(solution.pi.pi().data(),
                                  solution.pi.pi().data() + solution.pi.size());
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < solution.ptilde.values().rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < solution.ptilde.values().cols(); ++c) {
            row.push_back(solution.ptilde.values()(r, c));
        }
        rows.push_back(std::move(row));
    }
    j["ptilde"] = std::move(rows);
    j["objective"] = solution.objective;
    j["trace"] = solution.objective_trace;
    j["converged"] = solution.converged;
    j["restart"] = solution.restart_index;
    return j;
}

}  // namespace ctxattr
