#include "sifd/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "sifd/common.hpp"

namespace sifd {

const char* discard_reason_name(DiscardReason reason) {
    switch (reason) {
        case DiscardReason::none:
            return "none";
        case DiscardReason::ifd_ge_one:
            return "ifd_ge_one";
        case DiscardReason::no_selected_tokens:
            return "no_selected_tokens";
        case DiscardReason::backend_error:
            return "backend_error";
    }
    return "none";
}

DiscardReason parse_discard_reason(const std::string& name) {
    if (name == "none") {
        return DiscardReason::none;
    }
    if (name == "ifd_ge_one") {
        return DiscardReason::ifd_ge_one;
    }
    if (name == "no_selected_tokens") {
        return DiscardReason::no_selected_tokens;
    }
    if (name == "backend_error") {
        return DiscardReason::backend_error;
    }
    throw DataError("unknown discard reason: '" + name + "'");
}

DeltaTrace compute_delta_trace(const Backend& backend, const TokenizedSample& sample) {
    DeltaTrace trace;
    trace.sample_id = sample.id;
    try {
        trace.logp_cond = backend.conditional_logprobs(sample);
        trace.logp_uncond = backend.unconditional_logprobs(sample);
    } catch (const BackendError& e) {
        std::string msg = e.what();
        if (msg.find("'" + sample.id + "'") == std::string::npos) {
            throw BackendError("sample '" + sample.id + "': " + msg);
        }
        throw;
    }
    const size_t T = sample.response_len();
    if (trace.logp_cond.size() != T || trace.logp_uncond.size() != T) {
        throw BackendError("sample '" + sample.id + "': backend returned " +
                           std::to_string(trace.logp_cond.size()) + "/" +
                           std::to_string(trace.logp_uncond.size()) + " log-probs for " +
                           std::to_string(T) + " response tokens");
    }
    trace.delta.resize(T);
    for (size_t t = 0; t < T; ++t) {
        trace.delta[t] = trace.logp_cond[t] - trace.logp_uncond[t];
    }
    return trace;
}

double compute_ifd(const DeltaTrace& trace) {
    if (trace.delta.empty()) {
        throw UsageError("IFD is undefined for an empty response");
    }
    double sum = 0.0;
    for (double d : trace.delta) {
        sum += d;
    }
    return std::exp(-(sum / static_cast<double>(trace.delta.size())));
}

GateThreshold compute_gate_from_abs(std::vector<double> abs_values, double k) {
    if (!(k > 0.0) || k > 100.0) {
        throw UsageError("token ratio k must be in (0, 100], got " + std::to_string(k));
    }
    if (abs_values.empty()) {
        throw DataError("gate computation requires at least one response token");
    }
    GateThreshold gate;
    gate.k = k;
    gate.total_tokens = abs_values.size();
    if (k == 100.0) {
        gate.tau = 0.0;
        gate.selected_tokens = abs_values.size();
        return gate;
    }
    const double exact = k / 100.0 * static_cast<double>(abs_values.size());
    size_t m = static_cast<size_t>(std::llround(exact));
    m = std::max<size_t>(1, std::min(m, abs_values.size()));
    std::nth_element(abs_values.begin(), abs_values.begin() + (m - 1), abs_values.end(),
                     std::greater<double>());
    gate.tau = abs_values[m - 1];
    gate.selected_tokens = 0;
    for (double v : abs_values) {
        if (v >= gate.tau) {
            ++gate.selected_tokens;
        }
    }
    return gate;
}

GateThreshold compute_gate(const std::vector<DeltaTrace>& traces, double k) {
    std::vector<double> abs_values;
    size_t total = 0;
    for (const DeltaTrace& tr : traces) {
        total += tr.delta.size();
    }
    abs_values.reserve(total);
    for (const DeltaTrace& tr : traces) {
        for (double d : tr.delta) {
            abs_values.push_back(std::fabs(d));
        }
    }
    return compute_gate_from_abs(std::move(abs_values), k);
}

SifdResult compute_sifd(const std::vector<double>& delta, double tau) {
    double sum = 0.0;
    size_t count = 0;
    for (double d : delta) {
        if (std::fabs(d) >= tau) {
            sum += d;
            ++count;
        }
    }
    if (count == 0) {
        return {std::nullopt, 0};
    }
    return {std::exp(-(sum / static_cast<double>(count))), count};
}

SifdResult compute_sifd(const DeltaTrace& trace, const GateThreshold& gate) {
    return compute_sifd(trace.delta, gate.tau);
}

}  // namespace sifd
