#include "debiaslab/target_selection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "debiaslab/error.hpp"

namespace debiaslab {

namespace {

// Words of `text` with their byte spans; punctuation stays attached to its
// word here because only whitespace delimits the common-prefix comparison.
std::vector<std::pair<std::string, size_t>> whitespace_words(const std::string& text) {
    std::vector<std::pair<std::string, size_t>> words;
    size_t i = 0;
    while (i < text.size()) {
        if (std::isspace(static_cast<unsigned char>(text[i])) != 0) {
            ++i;
            continue;
        }
        size_t begin = i;
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])) == 0) ++i;
        words.emplace_back(text.substr(begin, i - begin), begin);
    }
    return words;
}

} // namespace

std::vector<std::string> longest_common_prefix(const std::vector<std::string>& tokens_a,
                                               const std::vector<std::string>& tokens_b) {
    std::vector<std::string> prefix;
    size_t n = std::min(tokens_a.size(), tokens_b.size());
    for (size_t i = 0; i < n; ++i) {
        if (tokens_a[i] != tokens_b[i]) break;
        prefix.push_back(tokens_a[i]);
    }
    return prefix;
}

EditRequest rule_based_mask(const SentencePair& pair, const PosFilterConfig& config,
                            const ModelHandle& model, const PosTagger& tagger,
                            const SubjectMatchConfig& match, RuleSelectionAudit* audit) {
    if (config.excluded_tags.empty()) {
        throw Error(ErrorCode::invalid_input, "excluded_tags must be nonempty");
    }
    const std::string& less = pair.sentence_less;
    auto words_less = whitespace_words(less);
    auto words_more = whitespace_words(pair.sentence_more);
    std::vector<std::string> toks_less, toks_more;
    for (auto& [w, off] : words_less) toks_less.push_back(w);
    for (auto& [w, off] : words_more) toks_more.push_back(w);
    std::vector<std::string> common = longest_common_prefix(toks_less, toks_more);

    // Byte length of the common word prefix within sentence_less.
    size_t common_end = 0;
    if (!common.empty()) {
        auto& last = words_less[common.size() - 1];
        common_end = last.second + last.first.size();
    }

    auto [subj_prompt, subj_target] = split_prompt_target(less, pair.subject, match);
    bool use_common = common_end >= subj_prompt.size();
    size_t split_at = use_common ? common_end : subj_prompt.size();
    std::string prompt = less.substr(0, split_at);
    std::string target = less.substr(split_at);
    if (target.empty() || model.tokenizer().count(target) == 0) {
        throw Error(ErrorCode::invalid_input,
                    "pair " + pair.case_id + " has an empty target after the common-prefix split");
    }

    std::vector<TaggedToken> tags = tagger.tag(target);
    if (tags.empty()) {
        throw Error(ErrorCode::tagging_error, "tagger produced no tokens for: " + target);
    }

    // Token-level mask: each target token inherits the tag of the tagged
    // word covering it; whitespace attaches to the following word.
    std::vector<int> target_ids = model.tokenizer().encode(target);
    std::vector<TokenSpan> spans = model.tokenizer().encode_with_offsets(target);
    std::vector<bool> mask(target_ids.size(), false);
    for (size_t t = 0; t < spans.size(); ++t) {
        size_t byte = spans[t].byte_begin;
        // Find the tagged word this byte belongs to; bytes before the first
        // word (or between words) attach to the next word.
        const TaggedToken* owner = nullptr;
        for (const TaggedToken& tok : tags) {
            if (byte < tok.byte_end) {
                owner = &tok;
                break;
            }
        }
        if (owner == nullptr) owner = &tags.back();
        mask[t] = config.excluded_tags.count(owner->tag) == 0;
    }

    bool any_true = std::any_of(mask.begin(), mask.end(), [](bool b) { return b; });
    bool fallback = !any_true;
    if (fallback) {
        std::fill(mask.begin(), mask.end(), true);
    }

    EditRequest req;
    req.case_id = pair.case_id;
    req.prompt = prompt;
    req.target = target;
    req.loss_mask = mask;
    // Subject span within the (possibly longer) prompt.
    size_t subj_begin = find_subject(prompt, pair.subject, match);
    if (subj_begin == std::string::npos) {
        throw Error(ErrorCode::subject_not_found,
                    "subject '" + pair.subject + "' not inside the derived prompt");
    }
    std::vector<TokenSpan> prompt_spans = model.tokenizer().encode_with_offsets(prompt);
    int tok_begin = -1, tok_end = -1;
    for (size_t i = 0; i < prompt_spans.size(); ++i) {
        if (prompt_spans[i].byte_end > subj_begin &&
            prompt_spans[i].byte_begin < subj_begin + pair.subject.size()) {
            if (tok_begin < 0) tok_begin = static_cast<int>(i);
            tok_end = static_cast<int>(i) + 1;
        }
    }
    req.subject_span = {tok_begin, tok_end};

    if (audit != nullptr) {
        audit->case_id = pair.case_id;
        audit->used_common_prefix = use_common;
        audit->all_true_fallback = fallback;
        audit->target_tags = tags;
    }
    return req;
}

std::pair<EditRequest, TraceResult> causal_trace_mask(const ModelHandle& model,
                                                      const EditRequest& request,
                                                      const CausalTraceConfig& config) {
    if (request.target.empty()) {
        throw Error(ErrorCode::invalid_input, "causal trace needs a nonempty target");
    }
    if (config.top_k < 1 || config.num_samples < 1) {
        throw Error(ErrorCode::invalid_input, "top_k and num_samples must be positive");
    }
    const std::string sentence = request.prompt + request.target;
    const int n_prompt = static_cast<int>(model.tokenizer().count(request.prompt));
    const int n_total = static_cast<int>(model.tokenizer().count(sentence));
    const int n_target = n_total - n_prompt;
    auto [subj_begin, subj_end] = request.subject_span;
    if (subj_begin < 0 || subj_end <= subj_begin || subj_end > n_prompt) {
        throw Error(ErrorCode::invalid_input, "invalid subject span");
    }

    std::vector<double> all_clean = model.per_token_probs(sentence, nullptr);
    TraceResult trace;
    trace.baseline.assign(all_clean.begin() + n_prompt, all_clean.end());
    trace.num_noise_samples = config.num_samples;

    double sigma2;
    if (config.sigma_sample.empty()) {
        sigma2 = model.embedding_component_variance({sentence});
    } else {
        sigma2 = model.embedding_component_variance(config.sigma_sample);
    }
    const double applied_sigma = config.sigma_multiplier * std::sqrt(sigma2);
    trace.noise_sigma = applied_sigma;

    std::vector<int> subject_positions;
    for (int p = subj_begin; p < subj_end; ++p) subject_positions.push_back(p);

    std::vector<double> corrupted_sum(static_cast<size_t>(n_target), 0.0);
    std::mt19937_64 rng(config.noise_seed);
    const int d = model.hidden_dim();
    for (int s = 0; s < config.num_samples; ++s) {
        EmbeddingNoise noise;
        noise.text_positions = subject_positions;
        noise.noise =
            trace_noise_sample(d, static_cast<int>(subject_positions.size()), applied_sigma, rng);
        std::vector<double> probs = model.per_token_probs(sentence, &noise);
        for (int t = 0; t < n_target; ++t) {
            corrupted_sum[static_cast<size_t>(t)] += probs[static_cast<size_t>(n_prompt + t)];
        }
    }
    trace.corrupted.resize(static_cast<size_t>(n_target));
    trace.reduction.resize(static_cast<size_t>(n_target));
    for (int t = 0; t < n_target; ++t) {
        trace.corrupted[t] = corrupted_sum[t] / static_cast<double>(config.num_samples);
        trace.reduction[t] = trace.baseline[t] - trace.corrupted[t];
    }

    // Top-k positions by reduction; ties break to the earliest position.
    std::vector<int> order(static_cast<size_t>(n_target));
    for (int i = 0; i < n_target; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return trace.reduction[static_cast<size_t>(a)] > trace.reduction[static_cast<size_t>(b)];
    });
    const int keep = std::min(config.top_k, n_target);
    std::vector<bool> mask(static_cast<size_t>(n_target), false);
    for (int i = 0; i < keep; ++i) mask[static_cast<size_t>(order[i])] = true;

    EditRequest out = request;
    out.loss_mask = mask;
    return {out, trace};
}

Eigen::MatrixXd trace_noise_sample(int hidden_dim, int n_positions, double sigma,
                                   std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd noise(hidden_dim, n_positions);
    for (int c = 0; c < n_positions; ++c) {
        for (int r = 0; r < hidden_dim; ++r) {
            noise(r, c) = sigma * normal(rng);
        }
    }
    return noise;
}

} // namespace debiaslab

