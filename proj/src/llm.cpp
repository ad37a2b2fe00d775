#include "ctxattr/llm.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <mutex>

#include "ctxattr/hash.hpp"
#include "ctxattr/rng.hpp"

namespace ctxattr {

namespace {

constexpr const char* kAnswerCue = "? The answer to this question is";

const char* template_body(TemplateId id) {
    switch (id) {
        case TemplateId::boolean_final:
            return "Given the context below, answer the question that follows with only 'Yes', "
                   "'No', or 'I don't know' if the context is insufficient.\n{question}? The "
                   "answer to this question is";
        case TemplateId::general:
            return "Read the context provided and answer the following question: {question}";
        case TemplateId::contextual:
            return "Based on the information in the context, what can you conclude about the "
                   "following question? {question}";
        case TemplateId::summarization:
            return "After considering the context below, summarize your answer to this question: "
                   "{question}";
        case TemplateId::opinion:
            return "Given the details in the context, what is your opinion on the following "
                   "question: {question}";
        case TemplateId::detail:
            return "Extract relevant information from the context to answer this question: "
                   "{question}";
        case TemplateId::factcheck:
            return "Using the context provided, verify the accuracy of the following statement: "
                   "{question}";
    }
    return "";
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::mutex g_warn_mutex;
WarnHook g_warn_hook = [](const std::string& raw) {
    std::fprintf(stderr, "warning: unparseable answer treated as IDontKnow: %.64s\n", raw.c_str());
};

void warn_unparseable(const std::string& raw) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    if (g_warn_hook) g_warn_hook(raw);
}

// Lowercase, drop apostrophes, fold everything else non-alphanumeric to a
// single space. "I don't know" and "i dont know" normalize identically.
std::string normalize_answer(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char ch : raw) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (c == '\'') continue;
        if (std::isalnum(c)) {
            if (pending_space && !out.empty()) out += ' ';
            pending_space = false;
            out += static_cast<char>(std::tolower(c));
        } else {
            pending_space = true;
        }
    }
    return out;
}

std::optional<AnswerLabel> classify_answer(const std::string& raw) {
    std::string norm = normalize_answer(raw).substr(0, 64);
    if (norm.starts_with("yes")) return AnswerLabel::Yes;
    if (norm.starts_with("no") && !norm.starts_with("not")) return AnswerLabel::No;
    if (norm.find("i dont know") != std::string::npos ||
        norm.find("i do not know") != std::string::npos ||
        norm.find("unknown") != std::string::npos) {
        return AnswerLabel::IDontKnow;
    }
    return std::nullopt;
}

CategoricalAnswer make_answer(AnswerLabel label, const std::string& raw) {
    double p = label == AnswerLabel::Yes ? 1.0 : label == AnswerLabel::No ? 0.0 : 0.5;
    return CategoricalAnswer{label, p, raw};
}

}  // namespace

PromptTemplate prompt_template(TemplateId id) {
    return PromptTemplate{id, std::string("{context}\n\n") + template_body(id)};
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& question,
                          const std::optional<std::string>& context) {
    if (question.empty()) raise(ErrorCode::EmptyQuestion, "question must be nonempty");
    if (context.has_value()) {
        std::string out = replace_all(tmpl.text, "{context}", *context);
        return replace_all(out, "{question}", question);
    }
    if (tmpl.id == TemplateId::boolean_final) {
        return "Answer the question that follows with only 'Yes', 'No', or 'I don't know'.\n" +
               question + kAnswerCue;
    }
    std::string body = tmpl.text;
    if (auto pos = body.find("{context}\n\n"); pos != std::string::npos) body.erase(pos, 11);
    body = replace_all(body, "{context}", "");
    return replace_all(body, "{question}", question);
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {
    if (replies_.empty()) raise(ErrorCode::InvalidConfig, "scripted backend needs >= 1 reply");
}

std::string ScriptedBackend::generate(const std::string&, const GenerationParams& params) {
    return replies_[params.sample_index % replies_.size()];
}

std::string HashBackend::generate(const std::string& prompt, const GenerationParams&) {
    std::uint64_t h = RandomStream::mix(fnv1a64(prompt) ^ salt_);
    switch (h % 8) {
        case 0:
        case 1:
        case 2:
        case 3: return "Yes";
        case 4:
        case 5:
        case 6: return "No";
        default: return "I don't know";
    }
}

WarnHook set_parse_warn_hook(WarnHook hook) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    std::swap(g_warn_hook, hook);
    return hook;
}

CategoricalAnswer parse_answer(const std::string& raw) {
    if (auto label = classify_answer(raw)) return make_answer(*label, raw);
    warn_unparseable(raw);
    return make_answer(AnswerLabel::IDontKnow, raw);
}

CategoricalAnswer parse_answer_strict(const std::string& raw) {
    if (auto label = classify_answer(raw)) return make_answer(*label, raw);
    raise(ErrorCode::Unparseable, "cannot classify answer '" + raw.substr(0, 64) + "'");
}

double estimate_probability(LLMBackend& backend, const std::string& prompt, int n_samples) {
    if (n_samples < 1) raise(ErrorCode::InvalidConfig, "n_samples must be >= 1");
    try {
        if (auto direct = backend.yes_probability(prompt)) {
            return std::clamp(*direct, 0.0, 1.0);
        }
        if (n_samples == 1) {
            return parse_answer(backend.generate(prompt, GenerationParams{})).yes_probability;
        }
        double sum = 0.0;
        for (int i = 0; i < n_samples; ++i) {
            GenerationParams params{1.0, static_cast<std::uint64_t>(i)};
            sum += parse_answer(backend.generate(prompt, params)).yes_probability;
        }
        return sum / n_samples;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        raise(ErrorCode::BackendFailure, e.what());
    }
}

}  // namespace ctxattr
