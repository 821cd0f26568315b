#include "sifd/perturbation.hpp"

#include <cmath>

#include "sifd/common.hpp"

namespace sifd {

double noise_epsilon(double alpha, size_t rows, size_t dim) {
    if (alpha < 0.0) {
        throw UsageError("noise scale alpha must be nonnegative");
    }
    if (rows == 0 || dim == 0) {
        throw UsageError("noise shape must be nonempty");
    }
    return alpha / std::sqrt(static_cast<double>(rows) * static_cast<double>(dim));
}

EmbeddingMatrix draw_noise(const NoiseSpec& spec, const std::string& sample_id, size_t index,
                           size_t rows, size_t dim) {
    if (index >= spec.M) {
        throw UsageError("perturbation index " + std::to_string(index) +
                         " is out of range for M=" + std::to_string(spec.M));
    }
    const double eps = noise_epsilon(spec.alpha, rows, dim);
    SplitMix rng(derive_stream_key(spec.seed, sample_id, index));
    EmbeddingMatrix noise(rows, dim);
    for (float& v : noise.data) {
        v = static_cast<float>(eps * rng.next_symmetric());
    }
    return noise;
}

std::vector<std::vector<double>> perturbed_deltas(const EmbeddingBackend& backend,
                                                  const TokenizedSample& sample,
                                                  const NoiseSpec& spec) {
    const size_t L = sample.instruction_len();
    const size_t T = sample.response_len();
    const size_t d = backend.embedding_dim();

    std::vector<int32_t> full_tokens = sample.instr_tokens;
    full_tokens.insert(full_tokens.end(), sample.resp_tokens.begin(), sample.resp_tokens.end());

    const EmbeddingMatrix emb_full = backend.embed(full_tokens);
    const EmbeddingMatrix emb_resp = backend.embed(sample.resp_tokens);

    std::vector<EmbeddingMatrix> cond_batch(spec.M, emb_full);
    std::vector<EmbeddingMatrix> uncond_batch(spec.M, emb_resp);
    for (size_t i = 0; i < spec.M; ++i) {
        const EmbeddingMatrix noise = draw_noise(spec, sample.id, i, L + T, d);
        float* cond = cond_batch[i].data.data();
        for (size_t j = 0; j < noise.data.size(); ++j) {
            cond[j] += noise.data[j];
        }
        float* uncond = uncond_batch[i].data.data();
        const float* resp_noise = noise.data.data() + L * d;
        for (size_t j = 0; j < T * d; ++j) {
            uncond[j] += resp_noise[j];
        }
    }

    std::vector<LogProbVector> cond =
            backend.forward_logprobs_batched(cond_batch, full_tokens, L);
    std::vector<LogProbVector> uncond =
            backend.forward_logprobs_batched(uncond_batch, sample.resp_tokens, 0);

    std::vector<std::vector<double>> deltas(spec.M, std::vector<double>(T));
    for (size_t i = 0; i < spec.M; ++i) {
        for (size_t t = 0; t < T; ++t) {
            deltas[i][t] = cond[i][t] - uncond[i][t];
        }
    }
    return deltas;
}

NeighborhoodStats stats_from_scores(const std::string& sample_id,
                                    std::vector<std::optional<double>> scores) {
    NeighborhoodStats stats;
    stats.sample_id = sample_id;
    for (const std::optional<double>& s : scores) {
        if (s.has_value()) {
            ++stats.m_effective;
        } else {
            ++stats.undefined_count;
        }
    }
    if (stats.m_effective > 0) {
        // All-equal scores (the alpha = 0 case in particular) must yield an
        // exactly zero variance, not a rounding residue of the mean.
        bool all_equal = true;
        std::optional<double> first;
        for (const std::optional<double>& s : scores) {
            if (!s.has_value()) {
                continue;
            }
            if (!first.has_value()) {
                first = s;
            } else if (*s != *first) {
                all_equal = false;
                break;
            }
        }
        if (all_equal) {
            stats.mu_hat = *first;
            stats.sigma2_hat = 0.0;
        } else {
            double sum = 0.0;
            for (const std::optional<double>& s : scores) {
                if (s.has_value()) {
                    sum += *s;
                }
            }
            const double mu = sum / static_cast<double>(stats.m_effective);
            double acc = 0.0;
            for (const std::optional<double>& s : scores) {
                if (s.has_value()) {
                    const double diff = *s - mu;
                    acc += diff * diff;
                }
            }
            stats.mu_hat = mu;
            stats.sigma2_hat = acc / static_cast<double>(stats.m_effective);
        }
    }
    stats.per_perturbation = std::move(scores);
    return stats;
}

NeighborhoodStats neighborhood_stats(const Backend& backend, const TokenizedSample& sample,
                                     const GateThreshold& gate, const NoiseSpec& spec) {
    if (spec.M == 0) {
        throw UsageError("neighborhood statistics require at least one perturbation (M >= 1)");
    }
    if (!backend.has_embeddings()) {
        throw BackendError("perturbation requires embedding access; backend '" + backend.name() +
                           "' only serves stored log-probs");
    }
    const auto* emb_backend = dynamic_cast<const EmbeddingBackend*>(&backend);
    if (emb_backend == nullptr) {
        throw BackendError("perturbation requires embedding access");
    }
    std::vector<std::vector<double>> deltas = perturbed_deltas(*emb_backend, sample, spec);
    std::vector<std::optional<double>> scores;
    scores.reserve(spec.M);
    for (const std::vector<double>& delta : deltas) {
        scores.push_back(compute_sifd(delta, gate.tau).sifd);
    }
    return stats_from_scores(sample.id, std::move(scores));
}

}  // namespace sifd
