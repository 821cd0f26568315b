#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sifd/lm.hpp"

namespace sifd {

struct TinyLMConfig {
    int32_t vocab_size = 256;
    size_t d_model = 32;
    size_t n_layers = 2;
    size_t n_heads = 4;
    size_t context_cap = 512;
    uint64_t weight_seed = 2024;

    size_t d_mlp() const { return 4 * d_model; }
    size_t head_dim() const { return d_model / n_heads; }
};

// Deterministic pre-LN causal transformer, weights generated from weight_seed
// so every platform reproduces the same model without shipping weight files.
//
// Weight generation (the seed IS the model; order matters):
//   rng = SplitMix(weight_seed), each entry = scale * rng.next_symmetric()
//   1. token embeddings   [vocab][d]      scale 0.25   (also the tied unembedding)
//   2. positional table   [context][d]    scale 0.10   (added in embed())
//   3. begin-of-sequence row [d]          scale 0.10   (internal; no positional term)
//   4. per layer, in order: wq wk wv wo   [d][d]       scale 1/sqrt(d)
//                           w_up          [4d][d]      scale 1/sqrt(d)
//                           w_down        [d][4d]      scale 1/sqrt(4d)
// Blocks: x += attn(ln(x)); x += mlp(ln(x)); final ln before the tied readout.
// Layer norms carry no affine parameters. No biases anywhere. GELU is the tanh
// approximation. All linear algebra runs in float with a fixed summation
// order; log-softmax normalization sums are accumulated in double.
class TinyLM final : public EmbeddingBackend {
public:
    explicit TinyLM(const TinyLMConfig& cfg = TinyLMConfig{});

    const TinyLMConfig& config() const { return cfg_; }

    std::string name() const override;
    std::string tokenizer_fingerprint() const override { return {}; }

    int32_t vocab_size() const override { return cfg_.vocab_size; }
    size_t embedding_dim() const override { return cfg_.d_model; }
    size_t context_cap() const override { return cfg_.context_cap; }

    EmbeddingMatrix embed(const std::vector<int32_t>& tokens) const override;

    LogProbVector forward_logprobs(const EmbeddingMatrix& emb,
                                   const std::vector<int32_t>& targets,
                                   size_t predict_from) const override;

    std::vector<LogProbVector> forward_logprobs_batched(const std::vector<EmbeddingMatrix>& embs,
                                                        const std::vector<int32_t>& targets,
                                                        size_t predict_from) const override;

    // Full next-token log-distribution after consuming emb rows [0, position).
    // position == 0 is the cold-start prediction; position may equal emb.rows.
    LogProbVector log_distribution(const EmbeddingMatrix& emb, size_t position) const;

private:
    struct Layer {
        std::vector<float> wq, wk, wv, wo;  // [d][d]
        std::vector<float> w_up;            // [4d][d]
        std::vector<float> w_down;          // [d][4d]
    };

    void validate_forward_args(const EmbeddingMatrix& emb, const std::vector<int32_t>& targets,
                               size_t predict_from) const;

    // Runs the stack over batch b of internal sequences (BOS + the first
    // n_ctx-1 rows of embs[b]) and returns post-final-LN states [B][n_ctx][d].
    // Internal row r is exactly the context that predicts visible position r.
    std::vector<float> hidden_states(const std::vector<const EmbeddingMatrix*>& embs,
                                     size_t n_ctx) const;

    TinyLMConfig cfg_;
    std::vector<float> tok_emb_;  // [vocab][d]
    std::vector<float> pos_emb_;  // [context][d]
    std::vector<float> bos_;      // [d]
    std::vector<Layer> layers_;
};

}  // namespace sifd
