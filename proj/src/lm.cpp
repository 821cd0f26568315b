#include "sifd/lm.hpp"

#include <cmath>

#include "sifd/common.hpp"

namespace sifd {

const char* pass_kind_name(PassKind kind) {
    return kind == PassKind::conditional ? "conditional" : "unconditional";
}

PassKind parse_pass_kind(const std::string& name) {
    if (name == "conditional") {
        return PassKind::conditional;
    }
    if (name == "unconditional") {
        return PassKind::unconditional;
    }
    throw DataError("unknown pass kind: '" + name + "'");
}

double logprob_from_logits(const float* logits, size_t n, size_t target) {
    float max_logit = logits[0];
    for (size_t v = 1; v < n; ++v) {
        max_logit = std::max(max_logit, logits[v]);
    }
    double sum = 0.0;
    for (size_t v = 0; v < n; ++v) {
        sum += static_cast<double>(std::exp(static_cast<double>(logits[v] - max_logit)));
    }
    double lse = static_cast<double>(max_logit) + std::log(sum);
    return static_cast<double>(logits[target]) - lse;
}

std::vector<LogProbVector> EmbeddingBackend::forward_logprobs_batched(
        const std::vector<EmbeddingMatrix>& embs, const std::vector<int32_t>& targets,
        size_t predict_from) const {
    if (!embs.empty()) {
        for (const EmbeddingMatrix& e : embs) {
            if (e.rows != embs.front().rows || e.dim != embs.front().dim) {
                throw BackendError("batched forward: embedding shapes differ within the batch");
            }
        }
    }
    std::vector<LogProbVector> out;
    out.reserve(embs.size());
    for (const EmbeddingMatrix& e : embs) {
        out.push_back(forward_logprobs(e, targets, predict_from));
    }
    return out;
}

std::vector<int32_t> EmbeddingBackend::checked_tokens(const TokenizedSample& sample,
                                                      bool with_instruction) const {
    std::vector<int32_t> tokens;
    if (with_instruction) {
        tokens = sample.instr_tokens;
        tokens.insert(tokens.end(), sample.resp_tokens.begin(), sample.resp_tokens.end());
    } else {
        tokens = sample.resp_tokens;
    }
    const int32_t vocab = vocab_size();
    for (int32_t t : tokens) {
        if (t < 0 || t >= vocab) {
            throw BackendError("sample '" + sample.id + "': token id " + std::to_string(t) +
                               " is outside the backend vocabulary (" + std::to_string(vocab) +
                               ")");
        }
    }
    if (tokens.size() > context_cap()) {
        throw BackendError("sample '" + sample.id + "': sequence of " +
                           std::to_string(tokens.size()) + " tokens exceeds the context cap of " +
                           std::to_string(context_cap()));
    }
    return tokens;
}

LogProbVector EmbeddingBackend::conditional_logprobs(const TokenizedSample& sample) const {
    std::vector<int32_t> tokens = checked_tokens(sample, /*with_instruction=*/true);
    return forward_logprobs(embed(tokens), tokens, sample.instruction_len());
}

LogProbVector EmbeddingBackend::unconditional_logprobs(const TokenizedSample& sample) const {
    std::vector<int32_t> tokens = checked_tokens(sample, /*with_instruction=*/false);
    return forward_logprobs(embed(tokens), tokens, 0);
}

}  // namespace sifd
