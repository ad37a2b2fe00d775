#include "ctxattr/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include <httplib.h>

#include "ctxattr/hash.hpp"
#include "ctxattr/oracle.hpp"

namespace ctxattr {

namespace fs = std::filesystem;

void RunConfig::apply_json(const nlohmann::json& j) {
    if (!j.is_object()) raise(ErrorCode::InvalidConfig, "config root must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "seed") seed = value.get<std::uint64_t>();
            else if (key == "jobs") jobs = value.get<int>();
            else if (key == "out") out_dir = value.get<std::string>();
            else if (key == "backend") backend = value.get<std::string>();
            else if (key == "datasets") datasets = value.get<std::vector<std::string>>();
            else if (key == "dataset_names") dataset_names = value.get<std::vector<std::string>>();
            else if (key == "queries") queries = value.get<std::vector<std::string>>();
            else if (key == "queries_file") queries_file = value.get<std::string>();
            else if (key == "similarity_mode") similarity_mode = value.get<std::string>();
            else if (key == "idk_credit") idk_credit = value.get<double>();
            else if (key == "chunk_size") chunk_size = value.get<int>();
            else if (key == "chunk_overlap") chunk_overlap = value.get<int>();
            else if (key == "top_k") top_k = value.get<int>();
            else if (key == "context_char_limit") context_char_limit = value.get<int>();
            else if (key == "per_dataset_quota") per_dataset_quota = value.get<bool>();
            else if (key == "lambda_pi") lambda_pi = value.get<double>();
            else if (key == "lambda_ptilde") lambda_ptilde = value.get<double>();
            else if (key == "max_outer_iters") max_outer_iters = value.get<int>();
            else if (key == "outer_tol") outer_tol = value.get<double>();
            else if (key == "inner_max_iters") inner_max_iters = value.get<int>();
            else if (key == "inner_tol") inner_tol = value.get<double>();
            else if (key == "restarts") restarts = value.get<int>();
            else if (key == "init_pi_jitter") init_pi_jitter = value.get<double>();
            else if (key == "init_ptilde_jitter") init_ptilde_jitter = value.get<double>();
            else if (key == "exact_ptilde_step") exact_ptilde_step = value.get<bool>();
            else if (key == "error_on_singular") error_on_singular = value.get<bool>();
            else if (key == "max_coalition_k") max_coalition_k = value.get<int>();
            else if (key == "journal") journal = value.get<std::string>();
            else if (key == "matrix_csv") matrix_csv = value.get<std::string>();
            else if (key == "fixture") fixture = value.get<std::string>();
            else if (key == "n_samples") n_samples = value.get<int>();
            else if (key == "n_boot") n_boot = value.get<int>();
            else if (key == "alpha") alpha = value.get<double>();
            else if (key == "cmf_bootstrap_mode") cmf_bootstrap_mode = value.get<std::string>();
            else if (key == "sweep_lambdas") sweep_lambdas = value.get<std::vector<double>>();
            else if (key == "sweep_instances") sweep_instances = value.get<int>();
            else if (key == "sweep_inits") sweep_inits = value.get<int>();
            else if (key == "sweep_sources") sweep_sources = value.get<int>();
            else if (key == "sweep_queries") sweep_queries = value.get<int>();
            else if (key == "sweep_max_outer_iters") sweep_max_outer_iters = value.get<int>();
            else if (key == "sweep_inner_max_iters") sweep_inner_max_iters = value.get<int>();
            else if (key == "sweep_outer_tol") sweep_outer_tol = value.get<double>();
            else if (key == "synth_sources") synth_sources = value.get<int>();
            else if (key == "synth_queries") synth_queries = value.get<int>();
            else if (key == "noise_sigma") noise_sigma = value.get<double>();
            else if (key == "pi_true") pi_true = value.get<std::vector<double>>();
            else raise(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::InvalidConfig, "config key '" + key + "': " + e.what());
        }
    }
}

nlohmann::json RunConfig::echo_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["backend"] = backend;
    j["datasets"] = datasets;
    j["dataset_names"] = dataset_names;
    j["queries"] = queries;
    j["queries_file"] = queries_file;
    j["similarity_mode"] = similarity_mode;
    j["idk_credit"] = idk_credit;
    j["chunk_size"] = chunk_size;
    j["chunk_overlap"] = chunk_overlap;
    j["top_k"] = top_k;
    j["context_char_limit"] = context_char_limit;
    j["per_dataset_quota"] = per_dataset_quota;
    j["lambda_pi"] = lambda_pi;
    j["lambda_ptilde"] = lambda_ptilde;
    j["max_outer_iters"] = max_outer_iters;
    j["outer_tol"] = outer_tol;
    j["inner_max_iters"] = inner_max_iters;
    j["inner_tol"] = inner_tol;
    j["restarts"] = restarts;
    j["init_pi_jitter"] = init_pi_jitter;
    j["init_ptilde_jitter"] = init_ptilde_jitter;
    j["exact_ptilde_step"] = exact_ptilde_step;
    j["error_on_singular"] = error_on_singular;
    j["max_coalition_k"] = max_coalition_k;
    j["matrix_csv"] = matrix_csv;
    j["fixture"] = fixture;
    j["n_samples"] = n_samples;
    j["n_boot"] = n_boot;
    j["alpha"] = alpha;
    j["cmf_bootstrap_mode"] = cmf_bootstrap_mode;
    j["sweep_lambdas"] = sweep_lambdas;
    j["sweep_instances"] = sweep_instances;
    j["sweep_inits"] = sweep_inits;
    j["sweep_sources"] = sweep_sources;
    j["sweep_queries"] = sweep_queries;
    j["sweep_max_outer_iters"] = sweep_max_outer_iters;
    j["sweep_inner_max_iters"] = sweep_inner_max_iters;
    j["sweep_outer_tol"] = sweep_outer_tol;
    j["synth_sources"] = synth_sources;
    j["synth_queries"] = synth_queries;
    j["noise_sigma"] = noise_sigma;
    j["pi_true"] = pi_true;
    return j;
}

SimilarityConfig RunConfig::similarity_config() const {
    SimilarityConfig cfg;
    if (similarity_mode == "categorical") cfg.mode = SimilarityMode::categorical;
    else if (similarity_mode == "probabilistic") cfg.mode = SimilarityMode::probabilistic;
    else raise(ErrorCode::InvalidConfig, "similarity_mode '" + similarity_mode + "'");
    cfg.idk_credit = idk_credit;
    cfg.validate();
    return cfg;
}

RetrievalConfig RunConfig::retrieval_config() const {
    RetrievalConfig cfg;
    cfg.chunk_size = chunk_size;
    cfg.chunk_overlap = chunk_overlap;
    cfg.top_k = top_k;
    cfg.context_char_limit = context_char_limit;
    cfg.per_dataset_quota = per_dataset_quota;
    cfg.validate();
    return cfg;
}

CmfConfig RunConfig::cmf_config() const {
    CmfConfig cfg;
    cfg.lambda_pi = lambda_pi;
    cfg.lambda_ptilde = lambda_ptilde;
    cfg.max_outer_iters = max_outer_iters;
    cfg.outer_tol = outer_tol;
    cfg.inner_max_iters = inner_max_iters;
    cfg.inner_tol = inner_tol;
    cfg.restarts = restarts;
    cfg.init_pi_jitter = init_pi_jitter;
    cfg.init_ptilde_jitter = init_ptilde_jitter;
    cfg.exact_ptilde_step = exact_ptilde_step;
    cfg.error_on_singular = error_on_singular;
    cfg.seed = seed;
    cfg.jobs = jobs;
    cfg.validate();
    return cfg;
}

SweepConfig RunConfig::sweep_config() const {
    SweepConfig cfg;
    cfg.lambdas = sweep_lambdas;
    cfg.n_instances = sweep_instances;
    cfg.n_inits = sweep_inits;
    cfg.num_sources = sweep_sources;
    cfg.num_queries = sweep_queries;
    cfg.seed = seed;
    cfg.jobs = jobs;
    cfg.solver.max_outer_iters = sweep_max_outer_iters;
    cfg.solver.inner_max_iters = sweep_inner_max_iters;
    cfg.solver.outer_tol = sweep_outer_tol;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::InvalidConfig, "cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::InvalidConfig, "cannot parse config '" + path + "': " + e.what());
    }
    RunConfig cfg;
    cfg.apply_json(j);
    return cfg;
}

namespace {

/// Minimal adapter for an HTTP text-generation service. Endpoint comes from
/// CTXATTR_LLM_URL; an optional bearer token from CTXATTR_LLM_KEY. Request
/// body {"prompt", "temperature", "sample_index"}, response body {"text"}.
class HttpBackend : public LLMBackend {
  public:
    HttpBackend() {
        const char* url = std::getenv("CTXATTR_LLM_URL");
        if (!url || !*url) {
            raise(ErrorCode::InvalidConfig, "backend 'http' requires CTXATTR_LLM_URL");
        }
        std::string full(url);
        auto scheme_end = full.find("://");
        auto path_start = full.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        if (path_start == std::string::npos) {
            base_ = full;
            path_ = "/generate";
        } else {
            base_ = full.substr(0, path_start);
            path_ = full.substr(path_start);
        }
        if (const char* key = std::getenv("CTXATTR_LLM_KEY"); key && *key) {
            bearer_ = key;
        }
    }

    std::string generate(const std::string& prompt, const GenerationParams& params) override {
        httplib::Client client(base_);
        client.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (!bearer_.empty()) headers.emplace("Authorization", "Bearer " + bearer_);
        nlohmann::json body{{"prompt", prompt},
                            {"temperature", params.temperature},
                            {"sample_index", params.sample_index}};
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) raise(ErrorCode::BackendFailure, "no response from " + base_ + path_);
        if (res->status != 200) {
            raise(ErrorCode::BackendFailure,
                  "HTTP " + std::to_string(res->status) + " from " + base_ + path_);
        }
        try {
            return nlohmann::json::parse(res->body).at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::BackendFailure, std::string("bad response body: ") + e.what());
        }
    }

    bool deterministic() const override { return false; }

  private:
    std::string base_;
    std::string path_;
    std::string bearer_;
};

std::unique_ptr<LLMBackend> make_backend(const std::string& spec, std::uint64_t seed) {
    if (spec == "mock") return std::make_unique<HashBackend>(seed);
    if (spec.rfind("static:", 0) == 0) {
        return std::make_unique<StaticBackend>(spec.substr(7));
    }
    if (spec.rfind("fixture:", 0) == 0) {
        return mock_backend_from_instance(load_instance_json(spec.substr(8)));
    }
    if (spec == "http") return std::make_unique<HttpBackend>();
    raise(ErrorCode::InvalidConfig,
          "backend '" + spec + "' (expected mock, static:<text>, fixture:<path>, or http)");
}

/// Append-only JSONL cache of per-coalition similarity rows. Line 1 is a
/// header binding the journal to the run's fingerprint; a journal written
/// under a different fingerprint is refused rather than silently reused.
class JsonlJournal : public CoalitionJournal {
  public:
    JsonlJournal(std::string path, std::uint64_t fingerprint, std::size_t num_queries)
        : path_(std::move(path)) {
        std::ifstream in(path_);
        bool has_header = false;
        if (in) {
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
                if (j.is_discarded()) break;  // truncated tail from an interrupted run
                if (!has_header) {
                    if (!j.contains("fingerprint")) break;
                    if (j["fingerprint"].get<std::string>() != std::to_string(fingerprint)) {
                        raise(ErrorCode::InvalidConfig,
                              "journal '" + path_ +
                                  "' belongs to a different run configuration; remove it to "
                                  "start over");
                    }
                    has_header = true;
                    continue;
                }
                if (!j.contains("coalition") || !j.contains("sims")) break;
                auto sims = j["sims"].get<std::vector<double>>();
                if (sims.size() != num_queries) break;
                cache_[Coalition::parse_key(j["coalition"].get<std::string>())] = std::move(sims);
            }
        }
        out_.open(path_, std::ios::app);
        if (!out_) raise(ErrorCode::IoFailure, "cannot open journal '" + path_ + "'");
        if (!has_header) {
            nlohmann::json header{{"fingerprint", std::to_string(fingerprint)},
                                  {"queries", num_queries}};
            std::lock_guard<std::mutex> lock(mutex_);
            out_ << header.dump() << '\n' << std::flush;
        }
    }

    std::optional<std::vector<double>> lookup(const Coalition& s) const override {
        auto it = cache_.find(s);
        if (it == cache_.end()) return std::nullopt;
        return it->second;
    }

    void record(const Coalition& s, const std::vector<double>& per_query_sims) override {
        nlohmann::json j{{"coalition", s.key()}, {"sims", per_query_sims}};
        std::lock_guard<std::mutex> lock(mutex_);
        out_ << j.dump() << '\n' << std::flush;
    }

    std::size_t cached() const { return cache_.size(); }

  private:
    std::string path_;
    std::map<Coalition, std::vector<double>> cache_;
    std::ofstream out_;
    std::mutex mutex_;
};

std::vector<std::string> resolve_queries(const RunConfig& cfg) {
    std::vector<std::string> queries = cfg.queries;
    if (!cfg.queries_file.empty()) {
        std::ifstream in(cfg.queries_file);
        if (!in) raise(ErrorCode::IoFailure, "cannot open queries file '" + cfg.queries_file + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) queries.push_back(line);
        }
    }
    return queries;
}

std::vector<std::string> dataset_labels(const RunConfig& cfg) {
    std::vector<std::string> labels = cfg.dataset_names;
    if (labels.size() > cfg.datasets.size()) {
        raise(ErrorCode::InvalidConfig, "more dataset_names than datasets");
    }
    for (std::size_t i = labels.size(); i < cfg.datasets.size(); ++i) {
        labels.push_back(fs::path(cfg.datasets[i]).filename().string());
    }
    return labels;
}

VectorIndex build_corpus_index(const RunConfig& cfg, const Embedder& embedder) {
    auto labels = dataset_labels(cfg);
    std::vector<std::pair<std::string, std::vector<std::string>>> corpus;
    for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
        corpus.emplace_back(labels[i], read_text_dir(cfg.datasets[i]));
    }
    return VectorIndex::build(corpus, embedder, cfg.retrieval_config());
}

std::uint64_t run_fingerprint(const RunConfig& cfg, const std::vector<std::string>& queries,
                              const std::vector<std::string>& labels) {
    std::uint64_t h = fnv1a64(cfg.backend);
    h = fnv1a64(cfg.similarity_mode, h);
    h = fnv1a64(format_double(cfg.idk_credit), h);
    for (const auto& q : queries) h = fnv1a64(q + "\n", h);
    for (const auto& l : labels) h = fnv1a64(l + "\n", h);
    return h;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoFailure, "cannot open " + path + " for writing");
    out << content;
    if (!out) raise(ErrorCode::IoFailure, "write to " + path + " failed");
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

std::string ensure_out_dir(const RunConfig& cfg) {
    std::string out = cfg.out_dir.empty() ? "." : cfg.out_dir;
    fs::create_directories(out);
    return out;
}

nlohmann::json report_to_json(const AttributionReport& report,
                              const std::vector<std::string>& labels) {
    nlohmann::json j;
    j["method"] = report.method == AttributionMethod::SCM ? "SCM" : "CMF";
    j["labels"] = labels;
    j["scores"] =
        std::vector<double>(report.scores.data(), report.scores.data() + report.scores.size());
    j["ci_lower"] = std::vector<double>(report.ci_lower.data(),
                                        report.ci_lower.data() + report.ci_lower.size());
    j["ci_upper"] = std::vector<double>(report.ci_upper.data(),
                                        report.ci_upper.data() + report.ci_upper.size());
    if (report.normalized_contributions) {
        j["normalized_contributions"] = *report.normalized_contributions;
    }
    if (report.top_source_ratio) j["top_source_ratio"] = *report.top_source_ratio;
    j["diagnostics"] = {{"objective_trace", report.diagnostics.objective_trace},
                        {"restarts", report.diagnostics.restarts},
                        {"converged", report.diagnostics.converged}};
    return j;
}

/// Clip percentile CIs so they always bracket the point estimate (small-n
/// percentile bootstrap can exclude it).
void bracket_scores(AttributionReport& report) {
    for (Eigen::Index i = 0; i < report.scores.size(); ++i) {
        report.ci_lower[i] = std::min(report.ci_lower[i], report.scores[i]);
        report.ci_upper[i] = std::max(report.ci_upper[i], report.scores[i]);
    }
}

void print_table(const std::vector<std::string>& labels, const AttributionReport& report,
                 const char* score_name) {
    std::size_t width = 8;
    for (const auto& l : labels) width = std::max(width, l.size() + 2);
    std::cout << std::left << std::setw(static_cast<int>(width)) << "dataset" << std::right
              << std::setw(12) << score_name << std::setw(12) << "ci_lo" << std::setw(12)
              << "ci_hi";
    if (report.normalized_contributions) std::cout << std::setw(12) << "normalized";
    std::cout << '\n';
    std::cout << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto idx = static_cast<Eigen::Index>(i);
        std::cout << std::left << std::setw(static_cast<int>(width)) << labels[i] << std::right
                  << std::setw(12) << report.scores[idx] << std::setw(12) << report.ci_lower[idx]
                  << std::setw(12) << report.ci_upper[idx];
        if (report.normalized_contributions) {
            // Row 0 is the base model; it has no normalized share.
            if (i == 0) std::cout << std::setw(12) << "-";
            else std::cout << std::setw(12) << (*report.normalized_contributions)[i - 1];
        }
        std::cout << '\n';
    }
    std::cout.unsetf(std::ios::floatfield);
    std::cout << std::setprecision(6);
}

}  // namespace

int cmd_scm(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.queries = resolve_queries(cfg);
    cfg.queries_file.clear();

    if (cfg.datasets.empty()) raise(ErrorCode::InvalidConfig, "scm needs at least one --dataset");
    if (cfg.queries.empty()) raise(ErrorCode::InvalidConfig, "scm needs at least one query");
    const int k = static_cast<int>(cfg.datasets.size());
    if (k > cfg.max_coalition_k) {
        raise(ErrorCode::CoalitionBudgetExceeded,
              "K=" + std::to_string(k) + " exceeds the 2^K budget cap of " +
                  std::to_string(cfg.max_coalition_k));
    }
    for (const auto& dir : cfg.datasets) {
        if (!fs::is_directory(dir)) {
            raise(ErrorCode::IoFailure, "dataset path '" + dir + "' is not a directory");
        }
    }

    const std::string out = ensure_out_dir(cfg);
    auto labels = dataset_labels(cfg);
    HashEmbedder embedder;
    VectorIndex index = build_corpus_index(cfg, embedder);
    IndexRetriever retriever(index, embedder, cfg.retrieval_config(), cfg.jobs);
    auto backend = make_backend(cfg.backend, cfg.seed);

    std::string journal_path = cfg.journal.empty() ? out + "/scm_journal.jsonl" : cfg.journal;
    JsonlJournal journal(journal_path, run_fingerprint(cfg, cfg.queries, labels),
                         cfg.queries.size());
    if (journal.cached() > 0) {
        std::cerr << "resuming: " << journal.cached() << " coalition rows from " << journal_path
                  << '\n';
    }

    ScmConfig scm_cfg;
    scm_cfg.similarity = cfg.similarity_config();
    scm_cfg.max_coalition_k = cfg.max_coalition_k;
    scm_cfg.jobs = cfg.jobs;
    ShapleyResult result = run_scm(*backend, retriever, cfg.queries, k, scm_cfg, &journal);

    AttributionReport report;
    report.method = AttributionMethod::SCM;
    report.scores = result.phi;
    if (cfg.queries.size() >= 2) {
        auto ci = bootstrap_ci(result.per_query_phi, cfg.n_boot, cfg.alpha, cfg.seed, cfg.jobs);
        report.ci_lower = std::move(ci.lower);
        report.ci_upper = std::move(ci.upper);
    } else {
        report.ci_lower = result.phi;
        report.ci_upper = result.phi;
    }
    bracket_scores(report);
    report.diagnostics.converged = true;
    report.validate();

    nlohmann::json doc;
    doc["command"] = "scm";
    doc["config"] = cfg.echo_json();
    doc["report"] = report_to_json(report, labels);
    doc["shapley"] = shapley_result_to_json(result);
    write_json_file(out + "/scm_report.json", doc);

    print_table(labels, report, "phi");
    std::cout << "report: " << out << "/scm_report.json\n";
    return 0;
}

int cmd_cmf(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.queries = resolve_queries(cfg);
    cfg.queries_file.clear();
    const std::string out = ensure_out_dir(cfg);

    std::optional<ProbabilityMatrix> p;
    if (!cfg.matrix_csv.empty()) {
        p = load_probability_matrix_csv(cfg.matrix_csv);
    } else if (!cfg.fixture.empty()) {
        SyntheticInstance inst = load_instance_json(cfg.fixture);
        auto backend = mock_backend_from_instance(inst);
        auto retriever = retriever_from_instance(inst);
        p = collect_probability_matrix(*backend, *retriever, inst.observed.query_ids(),
                                       cfg.n_samples, cfg.jobs);
    } else if (!cfg.datasets.empty()) {
        if (cfg.queries.empty()) raise(ErrorCode::InvalidConfig, "cmf needs at least one query");
        for (const auto& dir : cfg.datasets) {
            if (!fs::is_directory(dir)) {
                raise(ErrorCode::IoFailure, "dataset path '" + dir + "' is not a directory");
            }
        }
        HashEmbedder embedder;
        VectorIndex index = build_corpus_index(cfg, embedder);
        IndexRetriever retriever(index, embedder, cfg.retrieval_config(), cfg.jobs);
        auto backend = make_backend(cfg.backend, cfg.seed);
        p = collect_probability_matrix(*backend, retriever, cfg.queries, cfg.n_samples, cfg.jobs);
    } else {
        raise(ErrorCode::InvalidConfig, "cmf needs --matrix, --fixture, or --dataset inputs");
    }

    CmfConfig solver = cfg.cmf_config();
    CmfSolution solution = solve_cmf(*p, solver);

    AttributionReport report;
    report.method = AttributionMethod::CMF;
    report.scores = solution.pi.pi();
    report.diagnostics.objective_trace = solution.objective_trace;
    report.diagnostics.restarts = solver.restarts;
    report.diagnostics.converged = solution.converged;

    const int k = p->num_sources();
    bool degenerate_base = solution.pi.base() >= 1.0 - 1e-12;
    if (!degenerate_base) {
        std::vector<double> normalized;
        int top = 1;
        for (int d = 1; d <= k; ++d) {
            normalized.push_back(normalized_contribution(solution.pi, d));
            if (solution.pi[d] > solution.pi[top]) top = d;
        }
        report.top_source_ratio = normalized[static_cast<std::size_t>(top - 1)];
        report.normalized_contributions = std::move(normalized);
    }

    if (cfg.cmf_bootstrap_mode == "none" || p->num_queries() < 2) {
        report.ci_lower = report.scores;
        report.ci_upper = report.scores;
    } else {
        CmfBootstrapMode mode;
        if (cfg.cmf_bootstrap_mode == "resolve") mode = CmfBootstrapMode::resolve;
        else if (cfg.cmf_bootstrap_mode == "restart_resample") {
            mode = CmfBootstrapMode::restart_resample;
        } else {
            raise(ErrorCode::InvalidConfig,
                  "cmf_bootstrap_mode '" + cfg.cmf_bootstrap_mode +
                      "' (expected resolve, restart_resample, or none)");
        }
        auto ci = bootstrap_cmf_ci(*p, solver, cfg.n_boot, cfg.alpha, cfg.seed, mode);
        report.ci_lower = std::move(ci.lower);
        report.ci_upper = std::move(ci.upper);
    }
    bracket_scores(report);
    report.validate();

    save_probability_matrix_csv(*p, out + "/cmf_matrix.csv");

    nlohmann::json doc;
    doc["command"] = "cmf";
    doc["config"] = cfg.echo_json();
    doc["report"] = report_to_json(report, p->row_labels());
    doc["solution"] = cmf_solution_to_json(solution);
    if (degenerate_base) doc["note"] = "normalized contributions undefined (pi_0 = 1)";
    write_json_file(out + "/cmf_report.json", doc);

    print_table(p->row_labels(), report, "pi");
    std::cout << "report: " << out << "/cmf_report.json\n";
    return 0;
}

int cmd_sweep(const RunConfig& cfg) {
    const std::string out = ensure_out_dir(cfg);
    SweepResult result = run_regularization_sweep(cfg.sweep_config());

    save_sweep_csv(result, out + "/sweep.csv");
    write_text_file(out + "/sweep.svg", sweep_band_svg(result));

    nlohmann::json doc;
    doc["command"] = "sweep";
    doc["config"] = cfg.echo_json();
    doc["result"]["lambdas"] = result.lambdas;
    doc["result"]["median_log_variation"] = result.median_log_variation;
    nlohmann::json band = nlohmann::json::array();
    for (const auto& [lo, hi] : result.percentile_band) band.push_back({lo, hi});
    doc["result"]["percentile_band"] = std::move(band);
    doc["result"]["log_variation"] = result.log_variation;
    write_json_file(out + "/sweep.json", doc);

    std::cout << "lambda      median_log_variation\n";
    std::cout << std::fixed << std::setprecision(4);
    for (std::size_t l = 0; l < result.lambdas.size(); ++l) {
        std::cout << std::left << std::setw(12) << result.lambdas[l] << std::right
                  << result.median_log_variation[l] << '\n';
    }
    std::cout.unsetf(std::ios::floatfield);
    std::cout << std::setprecision(6);
    std::cout << "artifacts: " << out << "/sweep.csv, " << out << "/sweep.svg\n";
    return 0;
}

int cmd_synth(const RunConfig& cfg) {
    const std::string out = ensure_out_dir(cfg);
    std::optional<MixtureWeights> pi;
    if (!cfg.pi_true.empty()) {
        Vector v = Eigen::Map<const Vector>(cfg.pi_true.data(),
                                            static_cast<Eigen::Index>(cfg.pi_true.size()));
        pi = MixtureWeights(std::move(v));
    }
    SyntheticInstance inst =
        generate_instance(cfg.synth_sources, cfg.synth_queries, pi, cfg.noise_sigma, cfg.seed);

    nlohmann::json doc = instance_to_json(inst);
    doc["config"] = cfg.echo_json();
    write_json_file(out + "/instance.json", doc);
    save_probability_matrix_csv(inst.observed, out + "/instance_matrix.csv");

    std::cout << "instance: K=" << cfg.synth_sources << " m=" << cfg.synth_queries
              << " noise_sigma=" << cfg.noise_sigma << '\n';
    std::cout << "artifacts: " << out << "/instance.json, " << out << "/instance_matrix.csv\n";
    return 0;
}

}  // namespace ctxattr
