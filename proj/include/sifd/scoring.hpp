#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sifd/lm.hpp"

namespace sifd {

// Per-response-token log-probs from both passes and their difference
// delta[t] = logp_cond[t] - logp_uncond[t], the conditioning gain at token t.
struct DeltaTrace {
    std::string sample_id;
    LogProbVector logp_cond;
    LogProbVector logp_uncond;
    std::vector<double> delta;

    size_t response_len() const { return delta.size(); }
};

// |delta| cutoff realizing the dataset-global top-k% rank criterion. Ties at
// tau are all included, so selected_tokens may exceed the exact k% count.
struct GateThreshold {
    double k = 100.0;
    double tau = 0.0;
    size_t total_tokens = 0;
    size_t selected_tokens = 0;
};

enum class DiscardReason { none, ifd_ge_one, no_selected_tokens, backend_error };

const char* discard_reason_name(DiscardReason reason);
DiscardReason parse_discard_reason(const std::string& name);

struct ScoreRecord {
    std::string sample_id;
    size_t L = 0;
    size_t T = 0;
    std::optional<double> ifd;
    std::optional<double> sifd;
    size_t selected_token_count = 0;
    std::optional<double> mu_hat;
    std::optional<double> sigma2_hat;
    size_t m_effective = 0;
    size_t undefined_count = 0;
    bool discarded = false;
    DiscardReason reason = DiscardReason::none;
};

// Runs both passes; backend errors are rethrown with the sample id attached.
DeltaTrace compute_delta_trace(const Backend& backend, const TokenizedSample& sample);

// exp(-mean(delta)): the perplexity ratio PPL(y|x)/PPL(y) in log space.
double compute_ifd(const DeltaTrace& trace);

GateThreshold compute_gate(const std::vector<DeltaTrace>& traces, double k);

// Core quantile: consumes the |delta| pool directly (the pipeline gathers it
// across samples; the per-perturbation re-rank path calls this per index).
GateThreshold compute_gate_from_abs(std::vector<double> abs_values, double k);

struct SifdResult {
    std::optional<double> sifd;
    size_t selected_token_count = 0;
};

// exp of minus the mean delta over tokens with |delta| >= tau; absent when no
// token passes the gate.
SifdResult compute_sifd(const std::vector<double>& delta, double tau);
SifdResult compute_sifd(const DeltaTrace& trace, const GateThreshold& gate);

}  // namespace sifd
