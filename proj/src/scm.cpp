#include "ctxattr/scm.hpp"

#include <bit>
#include <cmath>
#include <cstdint>

#include "ctxattr/parallel.hpp"

namespace ctxattr {

void SimilarityConfig::validate() const {
    if (idk_credit < 0.0 || idk_credit > 1.0) {
        raise(ErrorCode::InvalidConfig, "idk_credit must be in [0,1]");
    }
}

double similarity(const CategoricalAnswer& a, const CategoricalAnswer& b,
                  const SimilarityConfig& cfg) {
    if (cfg.mode == SimilarityMode::probabilistic) {
        return 1.0 - std::abs(a.yes_probability - b.yes_probability);
    }
    if (a.label == b.label) return 1.0;
    bool one_idk = (a.label == AnswerLabel::IDontKnow) != (b.label == AnswerLabel::IDontKnow);
    return one_idk ? cfg.idk_credit : 0.0;
}

double coalition_score(const std::vector<CategoricalAnswer>& no_context,
                       const std::vector<CategoricalAnswer>& with_context,
                       const SimilarityConfig& cfg) {
    if (no_context.size() != with_context.size()) {
        raise(ErrorCode::LengthMismatch, "answer lists have lengths " +
                                             std::to_string(no_context.size()) + " and " +
                                             std::to_string(with_context.size()));
    }
    if (no_context.empty()) raise(ErrorCode::LengthMismatch, "answer lists are empty");
    double sum = 0.0;
    for (std::size_t j = 0; j < no_context.size(); ++j) {
        sum += similarity(no_context[j], with_context[j], cfg);
    }
    return sum / static_cast<double>(no_context.size());
}

namespace {

// Exact in uint64 up to 20!.
std::uint64_t factorial_u64(int n) {
    std::uint64_t f = 1;
    for (int i = 2; i <= n; ++i) f *= static_cast<std::uint64_t>(i);
    return f;
}

}  // namespace

double shapley_weight(int subset_size, int num_datasets) {
    if (num_datasets < 1 || num_datasets > 20 || subset_size < 0 ||
        subset_size > num_datasets - 1) {
        raise(ErrorCode::OutOfRange, "shapley_weight(|S|=" + std::to_string(subset_size) +
                                         ", K=" + std::to_string(num_datasets) + ")");
    }
    return static_cast<double>(factorial_u64(subset_size) *
                               factorial_u64(num_datasets - subset_size - 1)) /
           static_cast<double>(factorial_u64(num_datasets));
}

double residual_gain(double s_with, double s_without) { return s_with - s_without; }

Vector shapley_values_dense(const std::vector<double>& scores_by_mask, int num_datasets) {
    const int k = num_datasets;
    if (k < 1 || scores_by_mask.size() != (std::size_t(1) << k)) {
        raise(ErrorCode::ShapeMismatch, "score table must cover all 2^K coalitions");
    }
    // Weights depend only on |S|.
    std::vector<double> weight(k);
    for (int s = 0; s < k; ++s) weight[s] = shapley_weight(s, k);

    Vector phi = Vector::Zero(k);
    for (int dataset = 1; dataset <= k; ++dataset) {
        const std::uint32_t bit = 1u << (dataset - 1);
        double sum = 0.0;
        for (std::uint32_t mask = 0; mask < scores_by_mask.size(); ++mask) {
            if (mask & bit) continue;
            sum += weight[std::popcount(mask)] *
                   residual_gain(scores_by_mask[mask | bit], scores_by_mask[mask]);
        }
        phi[dataset - 1] = sum;
    }
    return phi;
}

Vector shapley_values(const CoalitionScoreTable& table, int num_datasets) {
    std::vector<double> dense(std::size_t(1) << num_datasets);
    for (std::uint32_t mask = 0; mask < dense.size(); ++mask) {
        dense[mask] = table.score(Coalition::from_mask(mask));
    }
    return shapley_values_dense(dense, num_datasets);
}

ShapleyResult run_scm(LLMBackend& backend, const Retriever& retriever,
                      const std::vector<std::string>& queries, int num_datasets,
                      const ScmConfig& cfg, CoalitionJournal* journal) {
    cfg.similarity.validate();
    if (num_datasets < 1) raise(ErrorCode::OutOfRange, "need at least one dataset");
    if (queries.empty()) raise(ErrorCode::InsufficientQueries, "need at least one query");
    if (num_datasets > cfg.max_coalition_k) {
        raise(ErrorCode::CoalitionBudgetExceeded,
              "K=" + std::to_string(num_datasets) + " exceeds the 2^K budget cap of " +
                  std::to_string(cfg.max_coalition_k));
    }
    if (retriever.num_datasets() < num_datasets) {
        raise(ErrorCode::EmptyIndex, "retriever indexes " +
                                         std::to_string(retriever.num_datasets()) +
                                         " datasets, need " + std::to_string(num_datasets));
    }

    const int k = num_datasets;
    const std::size_t m = queries.size();
    const std::size_t n_coalitions = std::size_t(1) << k;
    const auto tmpl = prompt_template(TemplateId::boolean_final);

    // Canonical no-context answers, one per query.
    std::vector<CategoricalAnswer> baseline(m);
    parallel_for(m, cfg.jobs, [&](std::size_t j) {
        std::string prompt = render_prompt(tmpl, queries[j], std::nullopt);
        try {
            baseline[j] = parse_answer(backend.generate(prompt, GenerationParams{}));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            raise(ErrorCode::BackendFailure,
                  std::string(e.what()) + " (query '" + queries[j] + "', no context)");
        }
    });

    // Per-query similarities for every nonempty coalition. sims[mask][j].
    std::vector<std::vector<double>> sims(n_coalitions);
    sims[0].assign(m, 1.0);  // an output compared with itself

    std::vector<std::uint32_t> todo;
    for (std::uint32_t mask = 1; mask < n_coalitions; ++mask) {
        Coalition coalition = Coalition::from_mask(mask);
        if (journal) {
            if (auto cached = journal->lookup(coalition); cached && cached->size() == m) {
                sims[mask] = *cached;
                continue;
            }
        }
        todo.push_back(mask);
    }

    parallel_for(todo.size(), cfg.jobs, [&](std::size_t t) {
        const std::uint32_t mask = todo[t];
        const Coalition coalition = Coalition::from_mask(mask);
        std::vector<double> row(m);
        for (std::size_t j = 0; j < m; ++j) {
            try {
                std::string context = retriever.retrieve(queries[j], coalition);
                std::string prompt = render_prompt(tmpl, queries[j], context);
                auto answer = parse_answer(backend.generate(prompt, GenerationParams{}));
                row[j] = similarity(baseline[j], answer, cfg.similarity);
            } catch (const Error& e) {
                raise(e.code(), std::string(e.what()) + " (query '" + queries[j] +
                                    "', coalition '" + coalition.key() + "')");
            } catch (const std::exception& e) {
                raise(ErrorCode::BackendFailure, std::string(e.what()) + " (query '" + queries[j] +
                                                     "', coalition '" + coalition.key() + "')");
            }
        }
        sims[mask] = row;
        if (journal) journal->record(coalition, row);
    });

    // Shapley per query, then average over the m queries.
    Matrix per_query_phi(k, m);
    std::vector<double> query_scores(n_coalitions);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t mask = 0; mask < n_coalitions; ++mask) {
            query_scores[mask] = sims[mask][j];
        }
        per_query_phi.col(j) = shapley_values_dense(query_scores, k);
    }

    std::map<Coalition, double> mean_scores;
    for (std::size_t mask = 0; mask < n_coalitions; ++mask) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) sum += sims[mask][j];
        mean_scores[Coalition::from_mask(static_cast<std::uint32_t>(mask))] =
            sum / static_cast<double>(m);
    }

    ShapleyResult result{per_query_phi.rowwise().mean(), std::move(per_query_phi),
                         CoalitionScoreTable(std::move(mean_scores))};
    return result;
}

nlohmann::json shapley_result_to_json(const ShapleyResult& result) {
    nlohmann::json j;
    j["phi"] = std::vector<double>(result.phi.data(), result.phi.data() + result.phi.size());
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < result.per_query_phi.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < result.per_query_phi.cols(); ++c) {
            row.push_back(result.per_query_phi(r, c));
        }
        rows.push_back(std::move(row));
    }
    j["per_query_phi"] = std::move(rows);
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [coalition, score] : result.coalition_scores.entries()) {
        scores[coalition.key()] = score;
    }
    j["coalition_scores"] = std::move(scores);
    return j;
}

}  // namespace ctxattr
