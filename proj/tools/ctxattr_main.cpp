#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ctxattr/cli.hpp"

namespace {

using ctxattr::RunConfig;

// Every RunConfig field gets a flag so the JSON config and the command line
// stay interchangeable; flags win because the bound variables are only
// touched when the flag is present.
void bind_options(CLI::App& app, RunConfig& cfg) {
    app.add_option("--seed", cfg.seed, "RNG seed");
    app.add_option("--jobs", cfg.jobs, "parallel worker bound (1 = serial)");
    app.add_option("--out", cfg.out_dir, "output directory");
    app.add_option("--backend", cfg.backend,
                   "mock | static:<text> | fixture:<path> | http");
    app.add_option("--dataset", cfg.datasets, "dataset text directory (repeatable)");
    app.add_option("--dataset-name", cfg.dataset_names, "label for the matching --dataset");
    app.add_option("--query", cfg.queries, "query string (repeatable)");
    app.add_option("--queries-file", cfg.queries_file, "file with one query per line");

    app.add_option("--similarity-mode", cfg.similarity_mode, "categorical | probabilistic");
    app.add_option("--idk-credit", cfg.idk_credit, "similarity when one side is IDK");

    app.add_option("--chunk-size", cfg.chunk_size, "max chunk characters");
    app.add_option("--chunk-overlap", cfg.chunk_overlap, "chunk overlap characters");
    app.add_option("--top-k", cfg.top_k, "retrieved chunks per prompt");
    app.add_option("--context-char-limit", cfg.context_char_limit, "context truncation");
    app.add_flag("--per-dataset-quota", cfg.per_dataset_quota,
                 "round-robin chunks across coalition members");

    app.add_option("--lambda-pi", cfg.lambda_pi, "entropy regularizer weight");
    app.add_option("--lambda-ptilde", cfg.lambda_ptilde, "center-pull weight");
    app.add_option("--max-outer-iters", cfg.max_outer_iters, "outer iteration cap");
    app.add_option("--outer-tol", cfg.outer_tol, "relative outer decrease tolerance");
    app.add_option("--inner-max-iters", cfg.inner_max_iters, "pi-step iteration cap");
    app.add_option("--inner-tol", cfg.inner_tol, "pi-step movement tolerance");
    app.add_option("--restarts", cfg.restarts, "random restarts");
    app.add_option("--init-pi-jitter", cfg.init_pi_jitter, "pi init jitter");
    app.add_option("--init-ptilde-jitter", cfg.init_ptilde_jitter, "latent init jitter");
    app.add_flag("--exact-ptilde-step", cfg.exact_ptilde_step,
                 "coordinate-descent latent step instead of ridge+clamp");
    app.add_flag("--error-on-singular", cfg.error_on_singular,
                 "fail on rank-deficient latent systems at lambda_ptilde=0");

    app.add_option("--max-coalition-k", cfg.max_coalition_k, "2^K enumeration cap");
    app.add_option("--journal", cfg.journal, "coalition journal path (scm resume)");

    app.add_option("--matrix", cfg.matrix_csv, "probability matrix CSV input (cmf)");
    app.add_option("--fixture", cfg.fixture, "synthetic instance JSON input (cmf)");
    app.add_option("--n-samples", cfg.n_samples, "samples per probability estimate");

    app.add_option("--n-boot", cfg.n_boot, "bootstrap replicates");
    app.add_option("--alpha", cfg.alpha, "CI significance level");
    app.add_option("--cmf-bootstrap-mode", cfg.cmf_bootstrap_mode,
                   "resolve | restart_resample | none");

    app.add_option("--sweep-lambdas", cfg.sweep_lambdas, "regularization grid");
    app.add_option("--sweep-instances", cfg.sweep_instances, "instances per lambda");
    app.add_option("--sweep-inits", cfg.sweep_inits, "initializations per instance");
    app.add_option("--sweep-sources", cfg.sweep_sources, "sweep K");
    app.add_option("--sweep-queries", cfg.sweep_queries, "sweep m");
    app.add_option("--sweep-max-outer-iters", cfg.sweep_max_outer_iters,
                   "outer cap inside the sweep");
    app.add_option("--sweep-inner-max-iters", cfg.sweep_inner_max_iters,
                   "pi-step cap inside the sweep");
    app.add_option("--sweep-outer-tol", cfg.sweep_outer_tol, "outer tolerance inside the sweep");

    app.add_option("--K,--synth-sources", cfg.synth_sources, "synthetic dataset count");
    app.add_option("--m,--synth-queries", cfg.synth_queries, "synthetic query count");
    app.add_option("--noise-sigma", cfg.noise_sigma, "Gaussian noise level");
    app.add_option("--pi-true", cfg.pi_true, "planted mixture weights");
}

}  // namespace

int main(int argc, char** argv) {
    // Pass 1: pick up --config so file values sit under the flag overrides.
    std::string config_path;
    {
        CLI::App pre;
        pre.allow_extras();
        pre.set_help_flag();
        pre.add_option("--config", config_path);
        try {
            pre.parse(argc, argv);
        } catch (const CLI::ParseError&) {
            // Full diagnostics come from the real parse below.
        }
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = ctxattr::load_run_config(config_path);
    } catch (const ctxattr::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    CLI::App app{"Training-data attribution toolkit: Shapley over context coalitions (scm) "
                 "and structured mixture factorization (cmf)."};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_echo;  // re-registered so it shows in --help
    app.add_option("--config", config_echo, "JSON config file (flags override it)");
    bind_options(app, cfg);

    auto* scm = app.add_subcommand("scm", "exact Shapley attribution over 2^K coalitions");
    auto* cmf = app.add_subcommand("cmf", "structured mixture factorization attribution");
    auto* sweep = app.add_subcommand("sweep", "regularization sweep over synthetic instances");
    auto* synth = app.add_subcommand("synth", "generate a synthetic instance fixture");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (scm->parsed()) return ctxattr::cmd_scm(cfg);
        if (cmf->parsed()) return ctxattr::cmd_cmf(cfg);
        if (sweep->parsed()) return ctxattr::cmd_sweep(cfg);
        if (synth->parsed()) return ctxattr::cmd_synth(cfg);
    } catch (const ctxattr::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        bool config_error = e.code() == ctxattr::ErrorCode::InvalidConfig ||
                            e.code() == ctxattr::ErrorCode::CoalitionBudgetExceeded;
        return config_error ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
