#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sifd/lm.hpp"
#include "sifd/scoring.hpp"

namespace sifd {

struct NoiseSpec {
    double alpha = 5.0;
    size_t M = 30;
    uint64_t seed = 0;
};

// Per-sample noise radius: alpha / sqrt((L+T) * d). Recomputed per sample;
// depends on this sample's length, so it must never be cached across samples.
double noise_epsilon(double alpha, size_t rows, size_t dim);

// rows x dim matrix, entries i.i.d. uniform on [-epsilon, epsilon], fully
// determined by (spec.seed, sample_id, index) regardless of worker schedule.
EmbeddingMatrix draw_noise(const NoiseSpec& spec, const std::string& sample_id, size_t index,
                           size_t rows, size_t dim);

struct NeighborhoodStats {
    std::string sample_id;
    std::optional<double> mu_hat;
    std::optional<double> sigma2_hat;
    size_t m_effective = 0;
    size_t undefined_count = 0;
    // One entry per perturbation; absent where no token passed the gate.
    std::vector<std::optional<double>> per_perturbation;
};

// Delta vectors (length T) for all M perturbations of one sample, pushed
// through the backend as two M-sized batches. Perturbation i applies noise
// rows [0, L+T) to the conditional pass and the SAME rows [L, L+T) to the
// unconditional pass, so both passes visit the same neighbor.
std::vector<std::vector<double>> perturbed_deltas(const EmbeddingBackend& backend,
                                                  const TokenizedSample& sample,
                                                  const NoiseSpec& spec);

// Mean and population variance (divisor = number of defined scores) with an
// exact zero-variance short-circuit when all defined scores are equal.
NeighborhoodStats stats_from_scores(const std::string& sample_id,
                                    std::vector<std::optional<double>> scores);

NeighborhoodStats neighborhood_stats(const Backend& backend, const TokenizedSample& sample,
                                     const GateThreshold& gate, const NoiseSpec& spec);

}  // namespace sifd
