#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ctxattr/cmf.hpp"
#include "ctxattr/oracle.hpp"
#include "ctxattr/parallel.hpp"
#include "ctxattr/rag.hpp"
#include "ctxattr/rng.hpp"
#include "ctxattr/stats.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn) {
    auto start = Clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-24s serial %9.1f ms   jobs=%d %9.1f ms   speedup %.2fx   identical %s\n", name,
                serial_ms, ctxattr::hardware_jobs(), parallel_ms, serial_ms / parallel_ms,
                identical ? "yes" : "NO");
}

void bench_restarts() {
    auto inst = ctxattr::generate_instance(4, 40, std::nullopt, 0.02, 7);
    ctxattr::CmfConfig cfg;
    cfg.restarts = 24;
    cfg.max_outer_iters = 200;

    std::vector<ctxattr::CmfSolution> serial, parallel;
    cfg.jobs = 1;
    double t_serial = time_ms([&] { serial = ctxattr::run_restarts(inst.observed, cfg); });
    cfg.jobs = ctxattr::hardware_jobs();
    double t_parallel = time_ms([&] { parallel = ctxattr::run_restarts(inst.observed, cfg); });

    bool identical = serial.size() == parallel.size();
    for (std::size_t r = 0; identical && r < serial.size(); ++r) {
        identical = serial[r].objective == parallel[r].objective &&
                    serial[r].pi.pi() == parallel[r].pi.pi();
    }
    report("cmf restarts", t_serial, t_parallel, identical);
}

void bench_sweep() {
    ctxattr::SweepConfig cfg;
    cfg.n_instances = 4;
    cfg.n_inits = 24;

    ctxattr::SweepResult serial, parallel;
    cfg.jobs = 1;
    double t_serial = time_ms([&] { serial = ctxattr::run_regularization_sweep(cfg); });
    cfg.jobs = ctxattr::hardware_jobs();
    double t_parallel = time_ms([&] { parallel = ctxattr::run_regularization_sweep(cfg); });

    report("regularization sweep", t_serial, t_parallel,
           serial.median_log_variation == parallel.median_log_variation &&
               serial.log_variation == parallel.log_variation);
}

void bench_bootstrap() {
    ctxattr::RandomStream stream(11);
    ctxattr::Matrix scores(6, 400);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        for (Eigen::Index j = 0; j < scores.cols(); ++j) scores(i, j) = stream.uniform();
    }

    ctxattr::BootstrapCi serial, parallel;
    double t_serial =
        time_ms([&] { serial = ctxattr::bootstrap_ci(scores, 20000, 0.05, 3, 1); });
    double t_parallel = time_ms(
        [&] { parallel = ctxattr::bootstrap_ci(scores, 20000, 0.05, 3, ctxattr::hardware_jobs()); });

    report("bootstrap replicates", t_serial, t_parallel,
           serial.lower == parallel.lower && serial.upper == parallel.upper);
}

void bench_retrieval() {
    ctxattr::RandomStream stream(5);
    std::vector<std::pair<std::string, std::vector<std::string>>> corpus;
    for (int d = 0; d < 3; ++d) {
        std::vector<std::string> docs;
        for (int i = 0; i < 40; ++i) {
            std::string doc;
            for (int w = 0; w < 600; ++w) {
                doc += "tok" + std::to_string(stream.next_u64() % 512);
                doc += (w % 13 == 12) ? ".\n" : " ";
            }
            docs.push_back(std::move(doc));
        }
        corpus.emplace_back("d" + std::to_string(d), std::move(docs));
    }
    ctxattr::RetrievalConfig cfg;
    ctxattr::HashEmbedder embedder;
    auto index = ctxattr::VectorIndex::build(corpus, embedder, cfg);
    auto coalition = ctxattr::Coalition::full(3);

    std::vector<std::string> queries;
    for (int q = 0; q < 200; ++q) {
        queries.push_back("tok" + std::to_string(q * 7 % 512) + " tok" +
                          std::to_string(q * 31 % 512));
    }

    std::vector<std::string> serial(queries.size()), parallel(queries.size());
    double t_serial = time_ms([&] {
        for (std::size_t q = 0; q < queries.size(); ++q) {
            serial[q] = index.retrieve(queries[q], coalition, cfg, embedder, 1);
        }
    });
    double t_parallel = time_ms([&] {
        for (std::size_t q = 0; q < queries.size(); ++q) {
            parallel[q] =
                index.retrieve(queries[q], coalition, cfg, embedder, ctxattr::hardware_jobs());
        }
    });

    report("retrieval scan", t_serial, t_parallel, serial == parallel);
}

}  // namespace

int main() {
    std::printf("hardware jobs: %d\n", ctxattr::hardware_jobs());
    bench_restarts();
    bench_sweep();
    bench_bootstrap();
    bench_retrieval();
    return 0;
}
