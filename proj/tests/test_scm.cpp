#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "ctxattr/rag.hpp"
#include "ctxattr/rng.hpp"
#include "ctxattr/scm.hpp"
#include "test_oracles.hpp"

using namespace ctxattr;

namespace {

CategoricalAnswer answer(AnswerLabel label) {
    double p = label == AnswerLabel::Yes ? 1.0 : label == AnswerLabel::No ? 0.0 : 0.5;
    return CategoricalAnswer{label, p, ""};
}

class CountingBackend : public LLMBackend {
  public:
    explicit CountingBackend(LLMBackend& inner) : inner_(inner) {}
    std::string generate(const std::string& prompt, const GenerationParams& params) override {
        ++calls;
        return inner_.generate(prompt, params);
    }
    bool deterministic() const override { return true; }

    int calls = 0;

  private:
    LLMBackend& inner_;
};

class NeverCallBackend : public LLMBackend {
  public:
    std::string generate(const std::string&, const GenerationParams&) override {
        FAIL("backend must not be consulted");
        return "Yes";
    }
    bool deterministic() const override { return true; }
};

class MemoryJournal : public CoalitionJournal {
  public:
    std::optional<std::vector<double>> lookup(const Coalition& s) const override {
        auto it = entries.find(s);
        if (it == entries.end()) return std::nullopt;
        return it->second;
    }
    void record(const Coalition& s, const std::vector<double>& per_query_sims) override {
        entries[s] = per_query_sims;
    }

    std::map<Coalition, std::vector<double>> entries;
};

std::uint32_t swap_players_12(std::uint32_t mask) {
    std::uint32_t rest = mask & ~3u;
    std::uint32_t b1 = (mask >> 0) & 1u, b2 = (mask >> 1) & 1u;
    return rest | (b2 << 0) | (b1 << 1);
}

struct ScmFixture {
    ScmFixture()
        : index(VectorIndex::build(
              {{"birds", {"Sparrows and swallows migrate south in autumn every single year."}},
               {"oceans", {"The pacific ocean holds the deepest trench on the planet earth."}},
               {"metals", {"Copper conducts electricity better than iron or standard steel."}}},
              embedder, cfg)),
          retriever(index, embedder, cfg) {}

    HashEmbedder embedder;
    RetrievalConfig cfg;
    VectorIndex index;
    IndexRetriever retriever;
    std::vector<std::string> queries{"Do sparrows migrate in autumn", "Is copper a good conductor",
                                     "Is the pacific the deepest ocean"};
};

}  // namespace

TEST_CASE("similarity on categorical answers") {
    SimilarityConfig cfg;
    CHECK(similarity(answer(AnswerLabel::Yes), answer(AnswerLabel::Yes), cfg) == 1.0);
    CHECK(similarity(answer(AnswerLabel::Yes), answer(AnswerLabel::No), cfg) == 0.0);
    CHECK(similarity(answer(AnswerLabel::Yes), answer(AnswerLabel::IDontKnow), cfg) == 0.5);
    CHECK(similarity(answer(AnswerLabel::IDontKnow), answer(AnswerLabel::No), cfg) == 0.5);
    CHECK(similarity(answer(AnswerLabel::IDontKnow), answer(AnswerLabel::IDontKnow), cfg) == 1.0);

    cfg.idk_credit = 0.3;
    CHECK(similarity(answer(AnswerLabel::No), answer(AnswerLabel::IDontKnow), cfg) == 0.3);

    cfg.idk_credit = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("similarity in probabilistic mode") {
    SimilarityConfig cfg;
    cfg.mode = SimilarityMode::probabilistic;
    CategoricalAnswer a{AnswerLabel::Yes, 0.9, ""};
    CategoricalAnswer b{AnswerLabel::Yes, 0.6, ""};
    CHECK(similarity(a, b, cfg) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(similarity(a, a, cfg) == 1.0);
}

TEST_CASE("coalition_score averages per-query similarity") {
    SimilarityConfig cfg;
    std::vector<CategoricalAnswer> base = {answer(AnswerLabel::Yes), answer(AnswerLabel::No)};
    std::vector<CategoricalAnswer> with = {answer(AnswerLabel::Yes), answer(AnswerLabel::Yes)};
    CHECK(coalition_score(base, with, cfg) == doctest::Approx(0.5).epsilon(1e-12));

    with.pop_back();
    CHECK_THROWS_AS(coalition_score(base, with, cfg), Error);
    CHECK_THROWS_AS(coalition_score({}, {}, cfg), Error);
}

TEST_CASE("shapley weights") {
    CHECK(shapley_weight(1, 3) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(shapley_weight(0, 1) == 1.0);

    // Over all subsets of the other K-1 players the weights sum to one.
    for (int k = 1; k <= 6; ++k) {
        double total = 0.0;
        for (std::uint32_t mask = 0; mask < (1u << (k - 1)); ++mask) {
            total += shapley_weight(std::popcount(mask), k);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(shapley_weight(3, 3), Error);
    CHECK_THROWS_AS(shapley_weight(-1, 3), Error);
}

TEST_CASE("residual gain") {
    CHECK(residual_gain(0.54, 0.86) == doctest::Approx(-0.32).epsilon(1e-12));
    CHECK(residual_gain(0.72, 0.76) == doctest::Approx(-0.04).epsilon(1e-12));
    CHECK(residual_gain(0.9, 0.2) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("two-dataset table worked by hand") {
    std::map<Coalition, double> entries;
    entries[Coalition()] = 1.0;
    entries[Coalition::of({1})] = 0.8;
    entries[Coalition::of({2})] = 0.9;
    entries[Coalition::of({1, 2})] = 0.7;
    Vector phi = shapley_values(CoalitionScoreTable(entries), 2);
    CHECK(phi[0] == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(phi[1] == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("single dataset collapses to s1 minus the baseline") {
    std::vector<double> scores = {1.0, 0.62};
    Vector phi = shapley_values_dense(scores, 1);
    CHECK(phi[0] == doctest::Approx(-0.38).epsilon(1e-12));
}

TEST_CASE("shapley matches the permutation oracle on random tables") {
    RandomStream stream(808);
    for (int trial = 0; trial < 200; ++trial) {
        int k = 1 + static_cast<int>(stream.next_u64() % 5);
        std::vector<double> scores(std::size_t(1) << k);
        scores[0] = 1.0;
        for (std::size_t i = 1; i < scores.size(); ++i) scores[i] = stream.uniform();

        Vector phi = shapley_values_dense(scores, k);
        Vector want = test_oracle::shapley_by_permutations(scores, k);
        CHECK((phi - want).lpNorm<Eigen::Infinity>() < 1e-9);

        // Efficiency.
        CHECK(phi.sum() == doctest::Approx(scores.back() - scores[0]).epsilon(1e-12));
    }
}

TEST_CASE("symmetric players receive equal values") {
    RandomStream stream(809);
    for (int trial = 0; trial < 100; ++trial) {
        int k = 2 + static_cast<int>(stream.next_u64() % 4);
        std::vector<double> scores(std::size_t(1) << k);
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = stream.uniform();
        for (std::uint32_t mask = 0; mask < scores.size(); ++mask) {
            std::uint32_t twin = swap_players_12(mask);
            double avg = 0.5 * (scores[mask] + scores[twin]);
            scores[mask] = avg;
            scores[twin] = avg;
        }
        scores[0] = 1.0;
        Vector phi = shapley_values_dense(scores, k);
        CHECK(std::abs(phi[0] - phi[1]) < 1e-12);
    }
}

TEST_CASE("a dataset that never changes the score gets zero") {
    RandomStream stream(810);
    for (int trial = 0; trial < 100; ++trial) {
        int k = 2 + static_cast<int>(stream.next_u64() % 4);
        int dummy = 1 + static_cast<int>(stream.next_u64() % k);
        std::uint32_t bit = 1u << (dummy - 1);
        std::vector<double> scores(std::size_t(1) << k);
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = stream.uniform();
        scores[0] = 1.0;
        for (std::uint32_t mask = 0; mask < scores.size(); ++mask) {
            if (mask & bit) scores[mask] = scores[mask & ~bit];
        }
        Vector phi = shapley_values_dense(scores, k);
        CHECK(std::abs(phi[dummy - 1]) < 1e-12);
    }
}

TEST_CASE("run_scm end to end") {
    ScmFixture fx;
    HashBackend backend(11);
    ScmConfig cfg;
    ShapleyResult result = run_scm(backend, fx.retriever, fx.queries, 3, cfg);

    CHECK(result.phi.size() == 3);
    CHECK(result.per_query_phi.rows() == 3);
    CHECK(result.per_query_phi.cols() == 3);
    CHECK(result.coalition_scores.score(Coalition()) == 1.0);

    // Efficiency against the mean full-coalition score.
    double full = result.coalition_scores.score(Coalition::full(3));
    CHECK(std::abs(result.phi.sum() - (full - 1.0)) < 1e-9);

    // phi is the row mean of per_query_phi.
    for (int k = 0; k < 3; ++k) {
        CHECK(result.phi[k] ==
              doctest::Approx(result.per_query_phi.row(k).mean()).epsilon(1e-12));
    }

    // Same inputs, same result.
    ShapleyResult again = run_scm(backend, fx.retriever, fx.queries, 3, cfg);
    CHECK((result.phi - again.phi).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("duplicated datasets are symmetric end to end") {
    HashEmbedder embedder;
    RetrievalConfig rag_cfg;
    std::string shared = "Glaciers in the alps retreated by half a mile over the last century.";
    VectorIndex index = VectorIndex::build(
        {{"copy1", {shared}}, {"copy2", {shared}}, {"other", {"Bread rises because yeast."}}},
        embedder, rag_cfg);
    IndexRetriever retriever(index, embedder, rag_cfg);
    HashBackend backend(2);
    ScmConfig cfg;
    ShapleyResult result =
        run_scm(backend, retriever, {"Did alpine glaciers retreat", "Does yeast make bread rise"},
                3, cfg);
    CHECK(std::abs(result.phi[0] - result.phi[1]) < 1e-12);
}

TEST_CASE("journal caching skips answered coalitions") {
    ScmFixture fx;
    HashBackend inner(11);
    ScmConfig cfg;
    MemoryJournal journal;

    CountingBackend first(inner);
    ShapleyResult cold = run_scm(first, fx.retriever, fx.queries, 3, cfg, &journal);
    const int m = static_cast<int>(fx.queries.size());
    CHECK(first.calls == m + 7 * m);  // baseline plus every nonempty coalition
    CHECK(journal.entries.size() == 7);

    CountingBackend second(inner);
    ShapleyResult warm = run_scm(second, fx.retriever, fx.queries, 3, cfg, &journal);
    CHECK(second.calls == m);  // baseline only; coalition rows all cached
    CHECK((cold.phi - warm.phi).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("a partially filled journal resumes cleanly") {
    ScmFixture fx;
    HashBackend inner(11);
    ScmConfig cfg;

    MemoryJournal full_journal;
    ShapleyResult reference = run_scm(inner, fx.retriever, fx.queries, 3, cfg, &full_journal);

    MemoryJournal partial;
    int kept = 0;
    for (const auto& [coalition, sims] : full_journal.entries) {
        if (kept++ % 2 == 0) partial.entries[coalition] = sims;
    }
    CountingBackend counted(inner);
    ShapleyResult resumed = run_scm(counted, fx.retriever, fx.queries, 3, cfg, &partial);
    const int m = static_cast<int>(fx.queries.size());
    CHECK(counted.calls == m + 3 * m);  // baseline plus the 3 missing coalitions
    CHECK((reference.phi - resumed.phi).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("coalition budget is enforced before any model call") {
    ScmFixture fx;
    NeverCallBackend backend;
    ScmConfig cfg;
    std::vector<std::string> queries = {"q"};
    try {
        run_scm(backend, fx.retriever, queries, 13, cfg);
        FAIL("expected CoalitionBudgetExceeded");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::CoalitionBudgetExceeded);
    }
}

TEST_CASE("run_scm input validation") {
    ScmFixture fx;
    HashBackend backend(1);
    ScmConfig cfg;
    CHECK_THROWS_AS(run_scm(backend, fx.retriever, {}, 3, cfg), Error);
    try {
        run_scm(backend, fx.retriever, {"q"}, 4, cfg);  // index only has 3 datasets
        FAIL("expected EmptyIndex");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyIndex);
    }
}

TEST_CASE("shapley result serializes with stable keys") {
    ScmFixture fx;
    HashBackend backend(11);
    ScmConfig cfg;
    ShapleyResult result = run_scm(backend, fx.retriever, fx.queries, 2, cfg);
    nlohmann::json j = shapley_result_to_json(result);
    CHECK(j.contains("phi"));
    CHECK(j.contains("per_query_phi"));
    CHECK(j.contains("coalition_scores"));
    CHECK(j["phi"].size() == 2);
    CHECK(j["coalition_scores"].size() == 4);
    CHECK(j["coalition_scores"].contains(""));
    CHECK(j["coalition_scores"][""] == 1.0);
    CHECK(j["coalition_scores"].contains("1,2"));
}
