#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctxattr/error.hpp"

namespace ctxattr {

enum class TemplateId {
    boolean_final,
    general,
    contextual,
    summarization,
    opinion,
    detail,
    factcheck,
};

/// Prompt text with {context} and {question} placeholders. boolean_final is
/// the only template the algorithms use; the rest are shipped for
/// experimentation.
struct PromptTemplate {
    TemplateId id = TemplateId::boolean_final;
    std::string text;
};

PromptTemplate prompt_template(TemplateId id);

enum class AnswerLabel { Yes, No, IDontKnow };

/// Parsed categorical answer plus its yes-probability under the single-shot
/// mapping (Yes -> 1, No -> 0, IDontKnow -> 0.5).
struct CategoricalAnswer {
    AnswerLabel label = AnswerLabel::IDontKnow;
    double yes_probability = 0.5;
    std::string raw_text;
};

struct GenerationParams {
    double temperature = 0.0;
    /// Distinguishes repeated samples of the same prompt; deterministic
    /// backends ignore it.
    std::uint64_t sample_index = 0;
};

/// Text-generation boundary. A backend receives a prompt and sampling
/// parameters and returns raw text. Implementations must tolerate concurrent
/// generate() calls.
class LLMBackend {
  public:
    virtual ~LLMBackend() = default;

    virtual std::string generate(const std::string& prompt, const GenerationParams& params) = 0;
    virtual bool deterministic() const = 0;

    /// Optional direct channel for backends that can report P(answer = Yes)
    /// without text generation (e.g. the synthetic mock). nullopt when
    /// unsupported.
    virtual std::optional<double> yes_probability(const std::string& prompt) {
        (void)prompt;
        return std::nullopt;
    }
};

/// Deterministic mock that always returns the same text.
class StaticBackend : public LLMBackend {
  public:
    explicit StaticBackend(std::string reply) : reply_(std::move(reply)) {}

    std::string generate(const std::string&, const GenerationParams&) override { return reply_; }
    bool deterministic() const override { return true; }

  private:
    std::string reply_;
};

/// Cycles through a fixed list of replies keyed by sample index.
class ScriptedBackend : public LLMBackend {
  public:
    explicit ScriptedBackend(std::vector<std::string> replies);

    std::string generate(const std::string&, const GenerationParams& params) override;
    bool deterministic() const override { return false; }

  private:
    std::vector<std::string> replies_;
};

/// Deterministic mock whose answer is a stable hash of the prompt text.
/// Useful for end-to-end runs that need varied but reproducible answers.
class HashBackend : public LLMBackend {
  public:
    explicit HashBackend(std::uint64_t salt = 0) : salt_(salt) {}

    std::string generate(const std::string& prompt, const GenerationParams&) override;
    bool deterministic() const override { return true; }

  private:
    std::uint64_t salt_;
};

// ---- Operations ------------------------------------------------------------

/// Render the template with the question and optional context. With context:
/// context block, instruction, question, "The answer to this question is".
/// Without context the context block and the context instruction clause are
/// omitted.
std::string render_prompt(const PromptTemplate& tmpl, const std::string& question,
                          const std::optional<std::string>& context);

/// Case-insensitive scan of the leading 64 characters after normalization:
/// leading "yes" token -> Yes, leading "no" token -> No, any "i don't know" /
/// "i do not know" / "unknown" -> IDontKnow. Anything else falls back to
/// IDontKnow and invokes the warning hook.
CategoricalAnswer parse_answer(const std::string& raw);

/// Replaces the default unparseable-answer warning hook (stderr). Returns the
/// previous hook. Pass nullptr to silence.
using WarnHook = std::function<void(const std::string&)>;
WarnHook set_parse_warn_hook(WarnHook hook);

/// Strict variant: throws Unparseable instead of defaulting to IDontKnow.
CategoricalAnswer parse_answer_strict(const std::string& raw);

/// n_samples = 1: single-shot mapping of the canonical answer. n_samples > 1:
/// fraction of sampled answers parsed as Yes, IDontKnow counting 0.5 each.
/// Backends exposing the direct probability channel short-circuit sampling.
double estimate_probability(LLMBackend& backend, const std::string& prompt, int n_samples);

}  // namespace ctxattr
