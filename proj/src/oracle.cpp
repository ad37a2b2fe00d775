#include "ctxattr/oracle.hpp"

#include <cmath>
#include <fstream>

#include "ctxattr/rng.hpp"

namespace ctxattr {

namespace {

std::vector<std::string> row_labels_for(int k) {
    std::vector<std::string> labels{"none"};
    for (int i = 1; i <= k; ++i) labels.push_back("D" + std::to_string(i));
    return labels;
}

std::vector<std::string> query_ids_for(int m) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(m));
    for (int j = 1; j <= m; ++j) ids.push_back("q" + std::to_string(j));
    return ids;
}

void check_dims(int k, int m) {
    if (k < 1) raise(ErrorCode::InvalidConfig, "need at least one dataset, got K=" + std::to_string(k));
    if (m < 1) raise(ErrorCode::InvalidConfig, "need at least one query, got m=" + std::to_string(m));
}

}  // namespace

SyntheticInstance generate_instance(int k, int m, const std::optional<MixtureWeights>& pi_true,
                                    double noise_sigma, std::uint64_t seed) {
    check_dims(k, m);
    if (noise_sigma < 0.0) raise(ErrorCode::InvalidConfig, "noise_sigma must be >= 0");
    if (pi_true && pi_true->size() != k + 1) {
        raise(ErrorCode::ShapeMismatch, "pi_true has " + std::to_string(pi_true->size()) +
                                            " entries, expected " + std::to_string(k + 1));
    }

    auto pt_stream = RandomStream::substream(seed, {stream_id::instance, 0});
    auto pi_stream = RandomStream::substream(seed, {stream_id::instance, 1});
    auto noise_stream = RandomStream::substream(seed, {stream_id::instance, 2});

    Matrix ptilde(k + 1, m);
    for (Eigen::Index i = 0; i < ptilde.rows(); ++i) {
        for (Eigen::Index j = 0; j < ptilde.cols(); ++j) ptilde(i, j) = pt_stream.uniform();
    }

    Vector pi_vec;
    if (pi_true) {
        pi_vec = pi_true->pi();
    } else {
        // Normalized exponentials give a uniform draw on the simplex.
        pi_vec.resize(k + 1);
        double total = 0.0;
        for (Eigen::Index i = 0; i < pi_vec.size(); ++i) {
            double u = pi_stream.uniform();
            if (u <= 0.0) u = 0x1.0p-53;
            pi_vec[i] = -std::log(u);
            total += pi_vec[i];
        }
        pi_vec /= total;
    }
    MixtureWeights pi(pi_vec);

    Matrix observed = build_mixing_matrix(pi) * ptilde;
    if (noise_sigma > 0.0) {
        for (Eigen::Index i = 0; i < observed.rows(); ++i) {
            for (Eigen::Index j = 0; j < observed.cols(); ++j) {
                observed(i, j) += noise_sigma * noise_stream.normal();
            }
        }
    }
    observed = box_clamp(observed, 0.0, 1.0);

    return SyntheticInstance{std::move(pi), LatentMatrix(std::move(ptilde)),
                             ProbabilityMatrix(std::move(observed), row_labels_for(k),
                                               query_ids_for(m)),
                             noise_sigma, seed};
}

ProbabilityMatrix generate_uniform_matrix(int k, int m, std::uint64_t seed) {
    check_dims(k, m);
    auto stream = RandomStream::substream(seed, {stream_id::instance, 3});
    Matrix values(k + 1, m);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) values(i, j) = stream.uniform();
    }
    return ProbabilityMatrix(std::move(values), row_labels_for(k), query_ids_for(m));
}

double recovery_error(const MixtureWeights& pi_hat, const MixtureWeights& pi_true) {
    if (pi_hat.size() != pi_true.size()) {
        raise(ErrorCode::LengthMismatch, "mixture lengths " + std::to_string(pi_hat.size()) +
                                             " vs " + std::to_string(pi_true.size()));
    }
    return (pi_hat.pi() - pi_true.pi()).lpNorm<Eigen::Infinity>();
}

namespace {

/// Replays observed[row][query] for prompts produced by render_prompt over
/// contexts from the companion retriever.
class InstanceBackend : public LLMBackend {
  public:
    explicit InstanceBackend(const SyntheticInstance& inst) : observed_(inst.observed) {}

    std::string generate(const std::string& prompt, const GenerationParams&) override {
        double p = lookup(prompt);
        if (p > 0.5) return "Yes";
        if (p < 0.5) return "No";
        return "I don't know";
    }

    bool deterministic() const override { return true; }

    std::optional<double> yes_probability(const std::string& prompt) override {
        return lookup(prompt);
    }

  private:
    double lookup(const std::string& prompt) const {
        // Longest matching "<question>?" wins, so query ids that are proper
        // prefixes of one another ("q1" / "q10") resolve correctly.
        int query = -1;
        std::size_t best_len = 0;
        const auto& ids = observed_.query_ids();
        for (std::size_t j = 0; j < ids.size(); ++j) {
            std::string needle = ids[j] + "?";
            if (needle.size() > best_len && prompt.find(needle) != std::string::npos) {
                query = static_cast<int>(j);
                best_len = needle.size();
            }
        }
        if (query < 0) {
            raise(ErrorCode::BackendFailure, "prompt matches no known query of the instance");
        }

        int row = 0;
        best_len = 0;
        const auto& labels = observed_.row_labels();
        for (std::size_t i = 1; i < labels.size(); ++i) {
            std::string marker = "[source:" + labels[i] + "]";
            if (marker.size() > best_len && prompt.find(marker) != std::string::npos) {
                row = static_cast<int>(i);
                best_len = marker.size();
            }
        }
        return observed_.values()(row, query);
    }

    ProbabilityMatrix observed_;
};

class InstanceRetriever : public Retriever {
  public:
    explicit InstanceRetriever(std::vector<std::string> labels) : labels_(std::move(labels)) {}

    std::string retrieve(const std::string&, const Coalition& datasets) const override {
        if (datasets.size() != 1) {
            raise(ErrorCode::OutOfRange,
                  "instance retriever serves singleton coalitions, got {" + datasets.key() + "}");
        }
        int k = datasets.members().front();
        if (k >= static_cast<int>(labels_.size())) {
            raise(ErrorCode::OutOfRange, "dataset index " + std::to_string(k));
        }
        return "[source:" + labels_[static_cast<std::size_t>(k)] + "]";
    }

    int num_datasets() const override { return static_cast<int>(labels_.size()) - 1; }

    std::vector<std::string> dataset_ids() const override {
        return {labels_.begin() + 1, labels_.end()};
    }

  private:
    std::vector<std::string> labels_;  // includes the "none" row label at 0
};

}  // namespace

std::unique_ptr<LLMBackend> mock_backend_from_instance(const SyntheticInstance& inst) {
    return std::make_unique<InstanceBackend>(inst);
}

std::unique_ptr<Retriever> retriever_from_instance(const SyntheticInstance& inst) {
    return std::make_unique<InstanceRetriever>(inst.observed.row_labels());
}

nlohmann::json instance_to_json(const SyntheticInstance& inst) {
    nlohmann::json j;
    j["noise_sigma"] = inst.noise_sigma;
    j["seed"] = inst.seed;
    j["pi_true"] = std::vector<double>(inst.pi_true.pi().data(),
                                       inst.pi_true.pi().data() + inst.pi_true.size());
    auto matrix_rows = [](const Matrix& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    j["ptilde_true"] = matrix_rows(inst.ptilde_true.values());
    j["observed"] = matrix_rows(inst.observed.values());
    j["row_labels"] = inst.observed.row_labels();
    j["query_ids"] = inst.observed.query_ids();
    return j;
}

namespace {

Matrix matrix_from_json(const nlohmann::json& rows) {
    if (!rows.is_array() || rows.empty()) {
        raise(ErrorCode::IoFailure, "instance matrix must be a non-empty array of rows");
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto m = static_cast<Eigen::Index>(rows.at(0).size());
    Matrix out(n, m);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = rows.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != m) {
            raise(ErrorCode::IoFailure, "instance matrix rows have unequal lengths");
        }
        for (Eigen::Index c = 0; c < m; ++c) out(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return out;
}

}  // namespace

SyntheticInstance instance_from_json(const nlohmann::json& j) {
    try {
        auto pi_raw = j.at("pi_true").get<std::vector<double>>();
        Vector pi_vec = Eigen::Map<const Vector>(pi_raw.data(),
                                                 static_cast<Eigen::Index>(pi_raw.size()));
        return SyntheticInstance{
            MixtureWeights(std::move(pi_vec)),
            LatentMatrix(matrix_from_json(j.at("ptilde_true"))),
            ProbabilityMatrix(matrix_from_json(j.at("observed")),
                              j.at("row_labels").get<std::vector<std::string>>(),
                              j.at("query_ids").get<std::vector<std::string>>()),
            j.at("noise_sigma").get<double>(), j.at("seed").get<std::uint64_t>()};
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoFailure, std::string("malformed instance fixture: ") + e.what());
    }
}

void save_instance_json(const SyntheticInstance& inst, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoFailure, "cannot open " + path + " for writing");
    out << instance_to_json(inst).dump(2) << '\n';
    if (!out) raise(ErrorCode::IoFailure, "write to " + path + " failed");
}

SyntheticInstance load_instance_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoFailure, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoFailure, std::string("cannot parse ") + path + ": " + e.what());
    }
    return instance_from_json(j);
}

}  // namespace ctxattr
