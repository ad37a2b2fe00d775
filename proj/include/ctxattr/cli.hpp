#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ctxattr/cmf.hpp"
#include "ctxattr/core.hpp"
#include "ctxattr/rag.hpp"
#include "ctxattr/scm.hpp"
#include "ctxattr/stats.hpp"

namespace ctxattr {

/// Fully-resolved run parameters. Field names double as the JSON config keys
/// and (dashed) flag names; flag values override file values. The echo
/// written into every output artifact covers everything that affects
/// results — jobs and output locations are deliberately left out so the
/// artifacts are byte-identical regardless of parallelism and destination.
struct RunConfig {
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string out_dir = "out";
    /// "mock" (hash-based deterministic answers), "static:<text>",
    /// "fixture:<path>" (replay a synthetic instance), or "http" (POST to
    /// $CTXATTR_LLM_URL).
    std::string backend = "mock";
    std::vector<std::string> datasets;       // one text directory per dataset
    std::vector<std::string> dataset_names;  // optional labels, default dir basename
    std::vector<std::string> queries;
    std::string queries_file;  // one query per line, appended to `queries`

    std::string similarity_mode = "categorical";  // or "probabilistic"
    double idk_credit = 0.5;

    int chunk_size = 512;
    int chunk_overlap = 0;
    int top_k = 3;
    int context_char_limit = 2000;
    bool per_dataset_quota = false;

    double lambda_pi = 0.1;
    double lambda_ptilde = 0.1;
    int max_outer_iters = 1000;
    double outer_tol = 1e-6;
    int inner_max_iters = 500;
    double inner_tol = 1e-8;
    int restarts = 10;
    double init_pi_jitter = 0.01;
    double init_ptilde_jitter = 0.05;
    bool exact_ptilde_step = false;
    bool error_on_singular = false;

    int max_coalition_k = 12;
    std::string journal;  // coalition journal path; "" -> <out>/scm_journal.jsonl

    std::string matrix_csv;  // cmf: probability matrix input, skips collection
    std::string fixture;     // cmf: synthetic-instance input
    int n_samples = 1;

    int n_boot = 200;
    double alpha = 0.05;
    std::string cmf_bootstrap_mode = "resolve";  // "resolve" | "restart_resample" | "none"

    std::vector<double> sweep_lambdas{0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    int sweep_instances = 20;
    int sweep_inits = 100;
    int sweep_sources = 3;
    int sweep_queries = 5;
    int sweep_max_outer_iters = 100;
    int sweep_inner_max_iters = 100;
    double sweep_outer_tol = 1e-7;

    int synth_sources = 2;
    int synth_queries = 10;
    double noise_sigma = 0.0;
    std::vector<double> pi_true;  // optional planted mixture for synth

    /// Overlay values from a JSON config object. Unknown keys are rejected.
    void apply_json(const nlohmann::json& j);
    /// The reproducibility echo (everything except jobs and output paths).
    nlohmann::json echo_json() const;

    SimilarityConfig similarity_config() const;
    RetrievalConfig retrieval_config() const;
    CmfConfig cmf_config() const;
    SweepConfig sweep_config() const;
};

RunConfig load_run_config(const std::string& path);

/// Exact 2^K Shapley attribution over the configured corpus; writes
/// <out>/scm_report.json and a phi table to stdout. Scores are journaled for
/// resume.
int cmd_scm(const RunConfig& cfg);

/// Collect (or load) the probability matrix, factorize, bootstrap; writes
/// <out>/cmf_report.json, <out>/cmf_matrix.csv and a table to stdout.
int cmd_cmf(const RunConfig& cfg);

/// Regularization sweep; writes <out>/sweep.json, <out>/sweep.csv and
/// <out>/sweep.svg.
int cmd_sweep(const RunConfig& cfg);

/// Generate a synthetic instance; writes <out>/instance.json and
/// <out>/instance_matrix.csv.
int cmd_synth(const RunConfig& cfg);

}  // namespace ctxattr
