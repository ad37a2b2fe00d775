#include "ctxattr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ctxattr/oracle.hpp"
#include "ctxattr/parallel.hpp"
#include "ctxattr/rng.hpp"

namespace ctxattr {

double percentile(std::vector<double> values, double p) {
    if (values.empty()) raise(ErrorCode::OutOfRange, "percentile of an empty sample");
    if (p < 0.0 || p > 1.0) raise(ErrorCode::OutOfRange, "percentile level must be in [0,1]");
    std::sort(values.begin(), values.end());
    double rank = p * static_cast<double>(values.size() - 1);
    auto lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

namespace {

void check_bootstrap_params(Eigen::Index m, int n_boot, double alpha) {
    if (m < 2) {
        raise(ErrorCode::InsufficientQueries,
              "bootstrap needs at least 2 query columns, got " + std::to_string(m));
    }
    if (n_boot < 100) raise(ErrorCode::InvalidConfig, "n_boot must be >= 100");
    if (alpha <= 0.0 || alpha >= 1.0) raise(ErrorCode::InvalidConfig, "alpha must be in (0,1)");
}

Eigen::Index draw_index(RandomStream& stream, Eigen::Index m) {
    auto idx = static_cast<Eigen::Index>(stream.uniform() * static_cast<double>(m));
    return std::min(idx, m - 1);
}

BootstrapCi percentile_ci(const Matrix& replicates, double alpha) {
    // replicates: one column per bootstrap replicate, one row per score.
    const Eigen::Index rows = replicates.rows();
    BootstrapCi ci{Vector(rows), Vector(rows)};
    for (Eigen::Index i = 0; i < rows; ++i) {
        std::vector<double> sample(replicates.row(i).begin(), replicates.row(i).end());
        ci.lower[i] = percentile(sample, alpha / 2.0);
        ci.upper[i] = percentile(std::move(sample), 1.0 - alpha / 2.0);
    }
    return ci;
}

}  // namespace

BootstrapCi bootstrap_ci(const Matrix& per_query_scores, int n_boot, double alpha,
                         std::uint64_t seed, int jobs) {
    const Eigen::Index m = per_query_scores.cols();
    check_bootstrap_params(m, n_boot, alpha);

    Matrix replicates(per_query_scores.rows(), n_boot);
    parallel_for(static_cast<std::size_t>(n_boot), jobs, [&](std::size_t b) {
        auto stream = RandomStream::substream(seed, {stream_id::bootstrap, b});
        Vector mean = Vector::Zero(per_query_scores.rows());
        for (Eigen::Index j = 0; j < m; ++j) mean += per_query_scores.col(draw_index(stream, m));
        replicates.col(static_cast<Eigen::Index>(b)) = mean / static_cast<double>(m);
    });
    return percentile_ci(replicates, alpha);
}

BootstrapCi bootstrap_cmf_ci(const ProbabilityMatrix& p, const CmfConfig& cfg, int n_boot,
                             double alpha, std::uint64_t seed, CmfBootstrapMode mode) {
    const Eigen::Index m = p.values().cols();
    check_bootstrap_params(m, n_boot, alpha);
    cfg.validate();

    const Eigen::Index n = p.values().rows();
    Matrix replicates(n, n_boot);

    if (mode == CmfBootstrapMode::restart_resample) {
        auto solutions = run_restarts(p, cfg);
        parallel_for(static_cast<std::size_t>(n_boot), cfg.jobs, [&](std::size_t b) {
            auto stream = RandomStream::substream(seed, {stream_id::bootstrap, b});
            std::size_t best = 0;
            double best_obj = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < solutions.size(); ++r) {
                auto pick = static_cast<std::size_t>(
                    draw_index(stream, static_cast<Eigen::Index>(solutions.size())));
                if (solutions[pick].objective < best_obj - 1e-12) {
                    best_obj = solutions[pick].objective;
                    best = pick;
                }
            }
            replicates.col(static_cast<Eigen::Index>(b)) = solutions[best].pi.pi();
        });
        return percentile_ci(replicates, alpha);
    }

    CmfConfig inner = cfg;
    inner.jobs = 1;  // parallelism lives at the replicate level
    parallel_for(static_cast<std::size_t>(n_boot), cfg.jobs, [&](std::size_t b) {
        auto stream = RandomStream::substream(seed, {stream_id::bootstrap, b});
        Matrix resampled(n, m);
        std::vector<std::string> ids(static_cast<std::size_t>(m));
        for (Eigen::Index j = 0; j < m; ++j) {
            Eigen::Index pick = draw_index(stream, m);
            resampled.col(j) = p.values().col(pick);
            ids[static_cast<std::size_t>(j)] = p.query_ids()[static_cast<std::size_t>(pick)];
        }
        ProbabilityMatrix pb(std::move(resampled), p.row_labels(), std::move(ids));
        replicates.col(static_cast<Eigen::Index>(b)) = solve_cmf(pb, inner).pi.pi();
    });
    return percentile_ci(replicates, alpha);
}

double solution_variation(const std::vector<MixtureWeights>& pi_solutions) {
    const auto n = static_cast<Eigen::Index>(pi_solutions.size());
    if (n < 2) {
        raise(ErrorCode::TooFewSolutions,
              "variation needs >= 2 solutions, got " + std::to_string(pi_solutions.size()));
    }
    const Eigen::Index dim = pi_solutions.front().size();
    Vector mean = Vector::Zero(dim);
    for (const auto& s : pi_solutions) {
        if (s.size() != dim) raise(ErrorCode::LengthMismatch, "solutions differ in length");
        mean += s.pi();
    }
    mean /= static_cast<double>(n);

    // trace(Cov) = sum of per-coordinate variances; no need to form Cov.
    double total = 0.0;
    for (const auto& s : pi_solutions) total += (s.pi() - mean).squaredNorm();
    return total / static_cast<double>(n - 1);
}

CmfConfig SweepConfig::sweep_solver_defaults() {
    CmfConfig cfg;
    cfg.max_outer_iters = 100;
    cfg.inner_max_iters = 100;
    cfg.outer_tol = 1e-7;
    return cfg;
}

void SweepConfig::validate() const {
    if (lambdas.empty()) raise(ErrorCode::InvalidConfig, "lambda grid is empty");
    for (std::size_t l = 0; l + 1 < lambdas.size(); ++l) {
        if (!(lambdas[l] < lambdas[l + 1])) {
            raise(ErrorCode::InvalidConfig, "lambda grid must be strictly increasing");
        }
    }
    if (lambdas.front() < 0.0) raise(ErrorCode::InvalidConfig, "lambdas must be >= 0");
    if (n_instances < 1 || n_inits < 2) {
        raise(ErrorCode::InvalidConfig, "need n_instances >= 1 and n_inits >= 2");
    }
    if (num_sources < 1 || num_queries < 1) {
        raise(ErrorCode::InvalidConfig, "need num_sources >= 1 and num_queries >= 1");
    }
}

SweepResult run_regularization_sweep(const SweepConfig& cfg) {
    cfg.validate();
    const std::size_t n_lambdas = cfg.lambdas.size();
    const auto n_instances = static_cast<std::size_t>(cfg.n_instances);
    const double log_floor = std::log(1e-300);

    // Instance matrices and init streams depend only on the instance index,
    // so every lambda sees the same draws (paired comparison).
    std::vector<std::vector<double>> logs(n_lambdas,
                                          std::vector<double>(n_instances, 0.0));
    parallel_for(n_lambdas * n_instances, cfg.jobs, [&](std::size_t cell) {
        const std::size_t l = cell / n_instances;
        const std::size_t i = cell % n_instances;

        auto instance_seed = RandomStream::substream(cfg.seed, {stream_id::sweep, i, 0}).next_u64();
        auto solver_seed = RandomStream::substream(cfg.seed, {stream_id::sweep, i, 1}).next_u64();
        ProbabilityMatrix p =
            generate_uniform_matrix(cfg.num_sources, cfg.num_queries, instance_seed);

        CmfConfig solver = cfg.solver;
        solver.lambda_pi = cfg.lambdas[l];
        solver.lambda_ptilde = cfg.lambdas[l];
        solver.restarts = cfg.n_inits;
        solver.seed = solver_seed;
        solver.jobs = 1;

        auto solutions = run_restarts(p, solver);
        std::vector<MixtureWeights> pis;
        pis.reserve(solutions.size());
        for (auto& s : solutions) pis.push_back(std::move(s.pi));
        double variation = solution_variation(pis);
        logs[l][i] = variation > 0.0 ? std::max(std::log(variation), log_floor) : log_floor;
    });

    SweepResult result;
    result.lambdas = cfg.lambdas;
    result.log_variation = std::move(logs);
    for (std::size_t l = 0; l < n_lambdas; ++l) {
        const auto& row = result.log_variation[l];
        result.median_log_variation.push_back(percentile(row, 0.5));
        result.percentile_band.emplace_back(percentile(row, 0.05), percentile(row, 0.95));
    }
    return result;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double rank = 0.5 * static_cast<double>(i + j);  // zero-based average rank
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) raise(ErrorCode::LengthMismatch, "rank correlation input lengths");
    if (xs.size() < 2) raise(ErrorCode::OutOfRange, "rank correlation needs >= 2 points");
    auto rx = average_ranks(xs);
    auto ry = average_ranks(ys);
    const auto n = static_cast<double>(xs.size());
    double mean = (n - 1.0) / 2.0;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double dx = rx[i] - mean;
        double dy = ry[i] - mean;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if (vx == 0.0 || vy == 0.0) {
        raise(ErrorCode::OutOfRange, "rank correlation undefined for a constant sequence");
    }
    return cov / std::sqrt(vx * vy);
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
    out << "lambda,median_log_variation,p5,p95\n";
    for (std::size_t l = 0; l < result.lambdas.size(); ++l) {
        out << format_double(result.lambdas[l]) << ','
            << format_double(result.median_log_variation[l]) << ','
            << format_double(result.percentile_band[l].first) << ','
            << format_double(result.percentile_band[l].second) << '\n';
    }
}

void save_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoFailure, "cannot open " + path + " for writing");
    write_sweep_csv(result, out);
    if (!out) raise(ErrorCode::IoFailure, "write to " + path + " failed");
}

namespace {

struct PlotFrame {
    double x_min, x_max, y_min, y_max;
    static constexpr double width = 640.0, height = 420.0, margin = 56.0;

    double x(double v) const {
        return margin + (v - x_min) / (x_max - x_min) * (width - 2 * margin);
    }
    double y(double v) const {
        return height - margin - (v - y_min) / (y_max - y_min) * (height - 2 * margin);
    }
};

std::string svg_num(double v) {
    std::ostringstream s;
    s.precision(2);
    s << std::fixed << v;
    return s.str();
}

}  // namespace

std::string sweep_band_svg(const SweepResult& result) {
    const std::size_t n = result.lambdas.size();
    if (n == 0) raise(ErrorCode::OutOfRange, "cannot plot an empty sweep");

    // x axis is log10(lambda); a leading lambda = 0 sits one decade left of
    // the smallest positive value.
    double smallest_positive = 0.0;
    for (double l : result.lambdas) {
        if (l > 0.0) {
            smallest_positive = l;
            break;
        }
    }
    if (smallest_positive == 0.0) smallest_positive = 1.0;
    std::vector<double> xs;
    for (double l : result.lambdas) {
        xs.push_back(l > 0.0 ? std::log10(l) : std::log10(smallest_positive) - 1.0);
    }

    PlotFrame frame{xs.front(), xs.back(), 0.0, 0.0};
    double y_min = result.percentile_band[0].first, y_max = result.percentile_band[0].second;
    for (const auto& [lo, hi] : result.percentile_band) {
        y_min = std::min(y_min, lo);
        y_max = std::max(y_max, hi);
    }
    if (y_max - y_min < 1e-9) y_max = y_min + 1.0;
    double pad = 0.05 * (y_max - y_min);
    frame.y_min = y_min - pad;
    frame.y_max = y_max + pad;
    if (frame.x_max - frame.x_min < 1e-9) frame.x_max = frame.x_min + 1.0;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << PlotFrame::width
        << "\" height=\"" << PlotFrame::height << "\" viewBox=\"0 0 " << PlotFrame::width << ' '
        << PlotFrame::height << "\">\n";
    svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    svg << "  <polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
        svg << svg_num(frame.x(xs[i])) << ',' << svg_num(frame.y(result.percentile_band[i].first))
            << ' ';
    }
    for (std::size_t i = n; i-- > 0;) {
        svg << svg_num(frame.x(xs[i])) << ',' << svg_num(frame.y(result.percentile_band[i].second));
        if (i > 0) svg << ' ';
    }
    svg << "\"/>\n";

    svg << "  <polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
        svg << svg_num(frame.x(xs[i])) << ',' << svg_num(frame.y(result.median_log_variation[i]));
        if (i + 1 < n) svg << ' ';
    }
    svg << "\"/>\n";

    // Axes with tick labels at the data points.
    svg << "  <line x1=\"" << svg_num(PlotFrame::margin) << "\" y1=\""
        << svg_num(PlotFrame::height - PlotFrame::margin) << "\" x2=\""
        << svg_num(PlotFrame::width - PlotFrame::margin) << "\" y2=\""
        << svg_num(PlotFrame::height - PlotFrame::margin)
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg << "  <line x1=\"" << svg_num(PlotFrame::margin) << "\" y1=\"" << svg_num(PlotFrame::margin)
        << "\" x2=\"" << svg_num(PlotFrame::margin) << "\" y2=\""
        << svg_num(PlotFrame::height - PlotFrame::margin)
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (std::size_t i = 0; i < n; ++i) {
        svg << "  <text x=\"" << svg_num(frame.x(xs[i])) << "\" y=\""
            << svg_num(PlotFrame::height - PlotFrame::margin + 18.0)
            << "\" font-size=\"11\" text-anchor=\"middle\">" << format_double(result.lambdas[i])
            << "</text>\n";
    }
    svg << "  <text x=\"" << svg_num(PlotFrame::width / 2.0) << "\" y=\""
        << svg_num(PlotFrame::height - 12.0)
        << "\" font-size=\"13\" text-anchor=\"middle\">lambda</text>\n";
    svg << "  <text x=\"16\" y=\"" << svg_num(PlotFrame::height / 2.0)
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << svg_num(PlotFrame::height / 2.0)
        << ")\">log solution variation</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace ctxattr
