#include "sifd/tinylm.hpp"

#include <cmath>
#include <sstream>

#include "sifd/common.hpp"

namespace sifd {

namespace {

// Multi-accumulator dot product: the summation order is fixed by the source,
// independent of n, so results are reproducible and the 8 lanes vectorize
// without any reassociation license.
float dot_f(const float* a, const float* b, size_t n) {
    float acc[8] = {0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (size_t lane = 0; lane < 8; ++lane) {
            acc[lane] += a[i + lane] * b[i + lane];
        }
    }
    float tail = 0.0f;
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    float head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    return head + tail;
}

void layer_norm_row(const float* in, float* out, size_t d) {
    double mean = 0.0;
    for (size_t c = 0; c < d; ++c) {
        mean += static_cast<double>(in[c]);
    }
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t c = 0; c < d; ++c) {
        double diff = static_cast<double>(in[c]) - mean;
        var += diff * diff;
    }
    var /= static_cast<double>(d);
    float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-5));
    float mean_f = static_cast<float>(mean);
    for (size_t c = 0; c < d; ++c) {
        out[c] = (in[c] - mean_f) * inv;
    }
}

float gelu(float x) {
    return 0.5f * x * (1.0f + std::tanh(0.7978845608028654f * (x + 0.044715f * x * x * x)));
}

// out[r] = W * in[r] for every row; W is [d_out][d_in] row-major.
void matvec_rows(const float* in, float* out, const float* w, size_t n_rows, size_t d_in,
                 size_t d_out) {
    for (size_t r = 0; r < n_rows; ++r) {
        const float* src = in + r * d_in;
        float* dst = out + r * d_out;
        for (size_t o = 0; o < d_out; ++o) {
            dst[o] = dot_f(src, w + o * d_in, d_in);
        }
    }
}

}  // namespace

TinyLM::TinyLM(const TinyLMConfig& cfg) : cfg_(cfg) {
    if (cfg_.vocab_size < 2) {
        throw UsageError("tinylm: vocab_size must be at least 2");
    }
    if (cfg_.d_model == 0 || cfg_.n_heads == 0 || cfg_.d_model % cfg_.n_heads != 0) {
        throw UsageError("tinylm: n_heads must divide d_model");
    }
    if (cfg_.n_layers == 0 || cfg_.context_cap == 0) {
        throw UsageError("tinylm: n_layers and context_cap must be positive");
    }
    const size_t d = cfg_.d_model;
    const size_t mlp = cfg_.d_mlp();
    SplitMix rng(cfg_.weight_seed);
    auto fill = [&rng](std::vector<float>& dst, size_t n, double scale) {
        dst.resize(n);
        for (size_t i = 0; i < n; ++i) {
            dst[i] = static_cast<float>(scale * rng.next_symmetric());
        }
    };
    fill(tok_emb_, static_cast<size_t>(cfg_.vocab_size) * d, 0.25);
    fill(pos_emb_, cfg_.context_cap * d, 0.10);
    fill(bos_, d, 0.10);
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double down_scale = 1.0 / std::sqrt(static_cast<double>(mlp));
    layers_.resize(cfg_.n_layers);
    for (Layer& layer : layers_) {
        fill(layer.wq, d * d, proj_scale);
        fill(layer.wk, d * d, proj_scale);
        fill(layer.wv, d * d, proj_scale);
        fill(layer.wo, d * d, proj_scale);
        fill(layer.w_up, mlp * d, proj_scale);
        fill(layer.w_down, d * mlp, down_scale);
    }
}

std::string TinyLM::name() const {
    std::ostringstream ss;
    ss << "tinylm-v1-s" << cfg_.weight_seed << "-v" << cfg_.vocab_size << "-d" << cfg_.d_model
       << "-l" << cfg_.n_layers << "-h" << cfg_.n_heads << "-c" << cfg_.context_cap;
    return ss.str();
}

EmbeddingMatrix TinyLM::embed(const std::vector<int32_t>& tokens) const {
    if (tokens.size() > cfg_.context_cap) {
        throw BackendError("sequence of " + std::to_string(tokens.size()) +
                           " tokens exceeds the context cap of " +
                           std::to_string(cfg_.context_cap));
    }
    const size_t d = cfg_.d_model;
    EmbeddingMatrix out(tokens.size(), d);
    for (size_t t = 0; t < tokens.size(); ++t) {
        int32_t id = tokens[t];
        if (id < 0 || id >= cfg_.vocab_size) {
            throw BackendError("token id " + std::to_string(id) +
                               " is outside the vocabulary of " +
                               std::to_string(cfg_.vocab_size));
        }
        const float* te = tok_emb_.data() + static_cast<size_t>(id) * d;
        const float* pe = pos_emb_.data() + t * d;
        float* row = out.row(t);
        for (size_t c = 0; c < d; ++c) {
            row[c] = te[c] + pe[c];
        }
    }
    return out;
}

void TinyLM::validate_forward_args(const EmbeddingMatrix& emb, const std::vector<int32_t>& targets,
                                   size_t predict_from) const {
    if (emb.dim != cfg_.d_model) {
        throw BackendError("embedding dim " + std::to_string(emb.dim) +
                           " does not match the model dim " + std::to_string(cfg_.d_model));
    }
    if (emb.rows > cfg_.context_cap) {
        throw BackendError("sequence of " + std::to_string(emb.rows) +
                           " rows exceeds the context cap of " + std::to_string(cfg_.context_cap));
    }
    if (targets.size() != emb.rows) {
        throw BackendError("targets length " + std::to_string(targets.size()) +
                           " does not match embedding rows " + std::to_string(emb.rows));
    }
    if (predict_from > emb.rows) {
        throw UsageError("predict_from " + std::to_string(predict_from) +
                         " is out of range for " + std::to_string(emb.rows) + " rows");
    }
    for (int32_t id : targets) {
        if (id < 0 || id >= cfg_.vocab_size) {
            throw BackendError("target id " + std::to_string(id) +
                               " is outside the vocabulary of " + std::to_string(cfg_.vocab_size));
        }
    }
    for (float v : emb.data) {
        if (!std::isfinite(v)) {
            throw BackendError("embedding contains non-finite values");
        }
    }
}

std::vector<float> TinyLM::hidden_states(const std::vector<const EmbeddingMatrix*>& embs,
                                         size_t n_ctx) const {
    const size_t d = cfg_.d_model;
    const size_t mlp = cfg_.d_mlp();
    const size_t n_heads = cfg_.n_heads;
    const size_t hd = cfg_.head_dim();
    const float att_scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));
    const size_t batch = embs.size();
    const size_t total_rows = batch * n_ctx;

    // Internal row 0 is the BOS state; row r > 0 carries visible row r-1.
    std::vector<float> h(total_rows * d);
    for (size_t b = 0; b < batch; ++b) {
        float* seq = h.data() + b * n_ctx * d;
        for (size_t c = 0; c < d; ++c) {
            seq[c] = bos_[c];
        }
        for (size_t r = 1; r < n_ctx; ++r) {
            const float* src = embs[b]->row(r - 1);
            float* dst = seq + r * d;
            for (size_t c = 0; c < d; ++c) {
                dst[c] = src[c];
            }
        }
    }

    std::vector<float> normed(total_rows * d);
    std::vector<float> q(total_rows * d);
    std::vector<float> k(total_rows * d);
    std::vector<float> v(total_rows * d);
    std::vector<float> att(total_rows * d);
    std::vector<float> up(n_ctx * mlp);
    std::vector<float> scores(n_ctx);

    for (const Layer& layer : layers_) {
        for (size_t r = 0; r < total_rows; ++r) {
            layer_norm_row(h.data() + r * d, normed.data() + r * d, d);
        }
        matvec_rows(normed.data(), q.data(), layer.wq.data(), total_rows, d, d);
        matvec_rows(normed.data(), k.data(), layer.wk.data(), total_rows, d, d);
        matvec_rows(normed.data(), v.data(), layer.wv.data(), total_rows, d, d);

        for (size_t b = 0; b < batch; ++b) {
            const size_t base = b * n_ctx;
            for (size_t i = 0; i < n_ctx; ++i) {
                for (size_t head = 0; head < n_heads; ++head) {
                    const size_t off = head * hd;
                    const float* qi = q.data() + (base + i) * d + off;
                    float max_score = 0.0f;
                    for (size_t j = 0; j <= i; ++j) {
                        float s = dot_f(qi, k.data() + (base + j) * d + off, hd) * att_scale;
                        scores[j] = s;
                        max_score = j == 0 ? s : std::max(max_score, s);
                    }
                    double denom = 0.0;
                    for (size_t j = 0; j <= i; ++j) {
                        scores[j] = std::exp(scores[j] - max_score);
                        denom += static_cast<double>(scores[j]);
                    }
                    const float inv_denom = static_cast<float>(1.0 / denom);
                    float* out = att.data() + (base + i) * d + off;
                    for (size_t c = 0; c < hd; ++c) {
                        out[c] = 0.0f;
                    }
                    for (size_t j = 0; j <= i; ++j) {
                        const float p = scores[j] * inv_denom;
                        const float* vj = v.data() + (base + j) * d + off;
                        for (size_t c = 0; c < hd; ++c) {
                            out[c] += p * vj[c];
                        }
                    }
                }
            }
        }
        for (size_t r = 0; r < total_rows; ++r) {
            const float* src = att.data() + r * d;
            float* dst = h.data() + r * d;
            for (size_t o = 0; o < d; ++o) {
                dst[o] += dot_f(src, layer.wo.data() + o * d, d);
            }
        }

        for (size_t r = 0; r < total_rows; ++r) {
            layer_norm_row(h.data() + r * d, normed.data() + r * d, d);
        }
        for (size_t b = 0; b < batch; ++b) {
            const size_t base = b * n_ctx;
            matvec_rows(normed.data() + base * d, up.data(), layer.w_up.data(), n_ctx, d, mlp);
            for (size_t i = 0; i < n_ctx * mlp; ++i) {
                up[i] = gelu(up[i]);
            }
            for (size_t r = 0; r < n_ctx; ++r) {
                const float* src = up.data() + r * mlp;
                float* dst = h.data() + (base + r) * d;
                for (size_t o = 0; o < d; ++o) {
                    dst[o] += dot_f(src, layer.w_down.data() + o * mlp, mlp);
                }
            }
        }
    }

    for (size_t r = 0; r < total_rows; ++r) {
        layer_norm_row(h.data() + r * d, normed.data() + r * d, d);
    }
    return normed;
}

LogProbVector TinyLM::forward_logprobs(const EmbeddingMatrix& emb,
                                       const std::vector<int32_t>& targets,
                                       size_t predict_from) const {
    std::vector<LogProbVector> got =
            forward_logprobs_batched({emb}, targets, predict_from);
    return std::move(got.front());
}

std::vector<LogProbVector> TinyLM::forward_logprobs_batched(
        const std::vector<EmbeddingMatrix>& embs, const std::vector<int32_t>& targets,
        size_t predict_from) const {
    if (embs.empty()) {
        return {};
    }
    for (const EmbeddingMatrix& e : embs) {
        if (e.rows != embs.front().rows || e.dim != embs.front().dim) {
            throw BackendError("batched forward: embedding shapes differ within the batch");
        }
        validate_forward_args(e, targets, predict_from);
    }
    const size_t batch = embs.size();
    const size_t n_scored = targets.size() - predict_from;
    std::vector<LogProbVector> out(batch);
    if (n_scored == 0) {
        return out;
    }

    // Only internal rows [0, S) are ever read: row S-1 predicts the final
    // target, so the last visible row never enters the computation.
    const size_t n_ctx = targets.size();
    std::vector<const EmbeddingMatrix*> ptrs(batch);
    for (size_t b = 0; b < batch; ++b) {
        ptrs[b] = &embs[b];
    }
    std::vector<float> states = hidden_states(ptrs, n_ctx);

    const size_t d = cfg_.d_model;
    const size_t vocab = static_cast<size_t>(cfg_.vocab_size);
    std::vector<float> logits(vocab);
    for (size_t b = 0; b < batch; ++b) {
        LogProbVector& dst = out[b];
        dst.reserve(n_scored);
        for (size_t pos = predict_from; pos < targets.size(); ++pos) {
            const float* state = states.data() + (b * n_ctx + pos) * d;
            for (size_t t = 0; t < vocab; ++t) {
                logits[t] = dot_f(state, tok_emb_.data() + t * d, d);
            }
            dst.push_back(logprob_from_logits(logits.data(), vocab,
                                              static_cast<size_t>(targets[pos])));
        }
    }
    return out;
}

LogProbVector TinyLM::log_distribution(const EmbeddingMatrix& emb, size_t position) const {
    if (emb.dim != cfg_.d_model) {
        throw BackendError("embedding dim " + std::to_string(emb.dim) +
                           " does not match the model dim " + std::to_string(cfg_.d_model));
    }
    if (position > emb.rows || emb.rows > cfg_.context_cap) {
        throw UsageError("position " + std::to_string(position) + " is out of range for " +
                         std::to_string(emb.rows) + " rows");
    }
    for (float x : emb.data) {
        if (!std::isfinite(x)) {
            throw BackendError("embedding contains non-finite values");
        }
    }
    std::vector<float> states = hidden_states({&emb}, position + 1);
    const size_t d = cfg_.d_model;
    const size_t vocab = static_cast<size_t>(cfg_.vocab_size);
    const float* state = states.data() + position * d;
    std::vector<float> logits(vocab);
    float max_logit = 0.0f;
    for (size_t t = 0; t < vocab; ++t) {
        logits[t] = dot_f(state, tok_emb_.data() + t * d, d);
        max_logit = t == 0 ? logits[t] : std::max(max_logit, logits[t]);
    }
    double sum = 0.0;
    for (size_t t = 0; t < vocab; ++t) {
        sum += std::exp(static_cast<double>(logits[t] - max_logit));
    }
    const double lse = static_cast<double>(max_logit) + std::log(sum);
    LogProbVector out(vocab);
    for (size_t t = 0; t < vocab; ++t) {
        out[t] = static_cast<double>(logits[t]) - lse;
    }
    return out;
}

}  // namespace sifd
