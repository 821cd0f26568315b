#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sifd/corpus.hpp"

namespace sifd {

// Row-major (rows x dim) float matrix of pre-forward token representations.
// This is exactly the tensor noise injection targets: row t already contains
// token embedding + positional term for whatever backend produced it.
struct EmbeddingMatrix {
    size_t rows = 0;
    size_t dim = 0;
    std::vector<float> data;

    EmbeddingMatrix() = default;
    EmbeddingMatrix(size_t r, size_t d) : rows(r), dim(d), data(r * d, 0.0f) {}

    float* row(size_t r) { return data.data() + r * dim; }
    const float* row(size_t r) const { return data.data() + r * dim; }
};

// Per-position log P(realized next token | prefix). Entries are <= 0, finite.
using LogProbVector = std::vector<double>;

enum class PassKind { conditional, unconditional };

const char* pass_kind_name(PassKind kind);
PassKind parse_pass_kind(const std::string& name);

// log softmax(logits)[target], accumulated in double for the normalization sum.
double logprob_from_logits(const float* logits, size_t n, size_t target);

// A scoring model: produces per-response-token log-probs for the pass over
// [instruction || response] and the pass over the response alone.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string name() const = 0;
    // Empty string means the backend accepts any tokenizer (ids must still be
    // inside its vocabulary); nonempty must match the dataset fingerprint.
    virtual std::string tokenizer_fingerprint() const = 0;
    virtual bool has_embeddings() const = 0;

    // Both return a vector of length sample.response_len().
    virtual LogProbVector conditional_logprobs(const TokenizedSample& sample) const = 0;
    virtual LogProbVector unconditional_logprobs(const TokenizedSample& sample) const = 0;
};

// A backend that exposes its embedding layer, so callers can perturb the
// pre-forward representation and push it back through the model.
class EmbeddingBackend : public Backend {
public:
    bool has_embeddings() const override { return true; }

    virtual int32_t vocab_size() const = 0;
    virtual size_t embedding_dim() const = 0;
    virtual size_t context_cap() const = 0;

    // Row t = exact pre-forward representation of tokens[t] at position t.
    virtual EmbeddingMatrix embed(const std::vector<int32_t>& tokens) const = 0;

    // Entry j is log P(targets[predict_from + j] | rows 0..predict_from+j-1).
    // predict_from == rows yields an empty vector.
    virtual LogProbVector forward_logprobs(const EmbeddingMatrix& emb,
                                           const std::vector<int32_t>& targets,
                                           size_t predict_from) const = 0;

    // Result i must match forward_logprobs on embs[i] within 1e-6 per entry.
    virtual std::vector<LogProbVector> forward_logprobs_batched(
            const std::vector<EmbeddingMatrix>& embs, const std::vector<int32_t>& targets,
            size_t predict_from) const;

    LogProbVector conditional_logprobs(const TokenizedSample& sample) const override;
    LogProbVector unconditional_logprobs(const TokenizedSample& sample) const override;

protected:
    // Shared precondition checks for the default pass implementations.
    std::vector<int32_t> checked_tokens(const TokenizedSample& sample, bool with_instruction) const;
};

}  // namespace sifd
