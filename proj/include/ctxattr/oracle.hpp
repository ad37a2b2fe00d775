#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxattr/cmf.hpp"
#include "ctxattr/core.hpp"
#include "ctxattr/llm.hpp"
#include "ctxattr/rag.hpp"

namespace ctxattr {

/// Synthetic ground truth: a planted mixture (pi_true, ptilde_true) and the
/// observed matrix derived from it. With noise_sigma = 0 the observed matrix
/// equals build_mixing_matrix(pi_true) * ptilde_true exactly.
struct SyntheticInstance {
    MixtureWeights pi_true;
    LatentMatrix ptilde_true;
    ProbabilityMatrix observed;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Draw ptilde uniform on [0,1]^{(K+1) x m} and pi uniform on the simplex
/// (normalized exponentials) unless given, then observe
/// P = Pi ptilde + N(0, noise_sigma^2) clamped to [0,1]. Rows are labeled
/// "none", "D1".."DK"; queries "q1".."qm".
SyntheticInstance generate_instance(int k, int m, const std::optional<MixtureWeights>& pi_true,
                                    double noise_sigma, std::uint64_t seed);

/// Unstructured variant: every observed entry drawn uniform on [0,1], no
/// planted mixture. Same labeling scheme.
ProbabilityMatrix generate_uniform_matrix(int k, int m, std::uint64_t seed);

/// L-infinity distance between mixture estimates.
double recovery_error(const MixtureWeights& pi_hat, const MixtureWeights& pi_true);

/// Deterministic backend that replays an instance's observed probabilities.
/// It recovers the query from the rendered prompt (question text before the
/// answer cue) and the context row from the retriever's "[source:<label>]"
/// marker; prompts without a marker map to the no-context row. The direct
/// yes-probability channel returns observed[row][query] exactly; generated
/// text is "Yes" above 1/2, "No" below, "I don't know" at exactly 1/2.
std::unique_ptr<LLMBackend> mock_backend_from_instance(const SyntheticInstance& inst);

/// Companion context provider: singleton coalition {k} yields the marker
/// "[source:<label_k>]" that the mock backend looks up. Only singletons are
/// meaningful for an instance, so anything else is OutOfRange.
std::unique_ptr<Retriever> retriever_from_instance(const SyntheticInstance& inst);

nlohmann::json instance_to_json(const SyntheticInstance& inst);
SyntheticInstance instance_from_json(const nlohmann::json& j);
void save_instance_json(const SyntheticInstance& inst, const std::string& path);
SyntheticInstance load_instance_json(const std::string& path);

}  // namespace ctxattr
