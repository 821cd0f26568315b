// Acceptance gate: one self-checking criterion per line, independent oracles.
// Prints progress to stderr, the canonical [PASS]/[FAIL]/[SKIP] block to
// stdout, and exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sifd/common.hpp"
#include "sifd/corpus.hpp"
#include "sifd/logprob_cache.hpp"
#include "sifd/perturbation.hpp"
#include "sifd/pipeline.hpp"
#include "sifd/scoring.hpp"
#include "sifd/selection.hpp"
#include "sifd/tinylm.hpp"
#include "sifd/tokenizer.hpp"

#include "test_helpers.hpp"

using namespace sifd;
using namespace sifd::testing;

namespace {

struct Fail : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Outcome {
    std::string status;  // "PASS", "FAIL", or "SKIP"
    std::string detail;
};

void ensure(bool ok, const std::string& msg) {
    if (!ok) {
        throw Fail(msg);
    }
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Timing of the 8-worker leg of the determinism run, shared with criterion 9.
std::optional<double> g_eight_worker_seconds;

// --- 1. At k=100 the gated score must equal the plain ratio per sample. ----

Outcome criterion_full_width_reduction() {
    const auto start = std::chrono::steady_clock::now();
    const auto tokenizer = make_builtin_tokenizer();
    const Dataset ds = make_dataset(synth_samples(120, 11), *tokenizer);
    const TinyLM lm;
    ScoreParams params;
    params.k = 100.0;
    params.alpha = 5.0;
    params.M = 0;
    params.seed = 1;
    const ScoreOutcome out = run_scoring(ds, lm, params, 4);

    size_t checked = 0;
    double max_diff = 0.0;
    for (const ScoreRecord& r : out.records) {
        ensure(r.ifd.has_value() && r.sifd.has_value(),
               "sample " + r.sample_id + " has no score at k=100");
        max_diff = std::max(max_diff, std::fabs(*r.sifd - *r.ifd));
        ++checked;
    }
    const double secs = seconds_since(start);
    ensure(checked >= 100, "needs >= 100 samples, scored " + std::to_string(checked));
    ensure(max_diff <= 1e-12, "max |S-IFD_100 - IFD| = " + num(max_diff) + " > 1e-12");
    ensure(secs < 10.0, "took " + num(secs) + "s, budget 10s");
    return {"PASS", std::to_string(checked) + " samples, max |S-IFD_100 - IFD| = " +
                            num(max_diff) + ", " + num(secs) + "s"};
}

// --- 2. A trace whose per-token gain is uniformly 0.01 scores exp(-0.01). --

Outcome criterion_uniform_gain_value() {
    DeltaTrace trace;
    trace.sample_id = "uniform-gain";
    trace.delta.assign(50, 0.01);
    const double ifd = compute_ifd(trace);
    const double expected = std::exp(-0.01);
    const double diff = std::fabs(ifd - expected);
    ensure(diff <= 1e-12, "IFD = " + num(ifd) + ", |IFD - exp(-0.01)| = " + num(diff));
    return {"PASS", "IFD = 0.990049834 within 1e-12 of exp(-0.01)"};
}

// --- 3. Mean squared Frobenius norm of the noise approaches alpha^2/3. -----

Outcome criterion_noise_geometry() {
    const auto start = std::chrono::steady_clock::now();
    const size_t rows = 20, dim = 12, draws = 10000;
    const double alpha = 5.0;
    NoiseSpec spec;
    spec.alpha = alpha;
    spec.M = draws;
    spec.seed = 123;

    double sum_sq = 0.0;
    for (size_t i = 0; i < draws; ++i) {
        const EmbeddingMatrix noise = draw_noise(spec, "noise-geometry", i, rows, dim);
        double sq = 0.0;
        for (float v : noise.data) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
        sum_sq += sq;
    }
    const double mean_sq = sum_sq / static_cast<double>(draws);
    const double target = alpha * alpha / 3.0;
    const double rel = std::fabs(mean_sq - target) / target;
    const double secs = seconds_since(start);
    ensure(rel <= 0.02, "mean ||noise||_F^2 = " + num(mean_sq) + " vs " + num(target) +
                                " (rel err " + num(rel) + " > 2%)");
    ensure(secs < 5.0, "took " + num(secs) + "s, budget 5s");
    return {"PASS", "mean ||noise||_F^2 = " + num(mean_sq) + " vs alpha^2/3 = " + num(target) +
                            " (rel err " + num(rel) + "), " + num(secs) + "s"};
}

// --- 4. The batched perturbation path must match a per-matrix loop. --------

Outcome criterion_batched_vs_loop() {
    const auto tokenizer = make_builtin_tokenizer();
    const Dataset ds = make_dataset(synth_samples(20, 4), *tokenizer);
    const TinyLM lm;

    std::vector<DeltaTrace> traces;
    for (const TokenizedSample& s : ds.samples) {
        traces.push_back(compute_delta_trace(lm, s));
    }
    const GateThreshold gate = compute_gate(traces, 75.0);

    NoiseSpec spec;
    spec.alpha = 5.0;
    spec.M = 30;
    spec.seed = 2;

    double max_score_diff = 0.0;
    double max_stat_diff = 0.0;
    for (const TokenizedSample& s : ds.samples) {
        // Production path: batched forwards inside neighborhood_stats.
        const NeighborhoodStats prod = neighborhood_stats(lm, s, gate, spec);

        // Oracle: one forward per perturbation, scores accumulated by hand.
        const size_t L = s.instruction_len();
        const size_t T = s.response_len();
        const size_t d = lm.embedding_dim();
        std::vector<int32_t> full = s.instr_tokens;
        full.insert(full.end(), s.resp_tokens.begin(), s.resp_tokens.end());

        std::vector<std::optional<double>> oracle_scores;
        for (size_t i = 0; i < spec.M; ++i) {
            const EmbeddingMatrix noise = draw_noise(spec, s.id, i, L + T, d);
            EmbeddingMatrix cond_emb = lm.embed(full);
            for (size_t j = 0; j < noise.data.size(); ++j) {
                cond_emb.data[j] += noise.data[j];
            }
            EmbeddingMatrix uncond_emb = lm.embed(s.resp_tokens);
            for (size_t j = 0; j < T * d; ++j) {
                uncond_emb.data[j] += noise.data[L * d + j];
            }
            const LogProbVector cond = lm.forward_logprobs(cond_emb, full, L);
            const LogProbVector uncond = lm.forward_logprobs(uncond_emb, s.resp_tokens, 0);

            double sum = 0.0;
            size_t count = 0;
            for (size_t t = 0; t < T; ++t) {
                const double delta = cond[t] - uncond[t];
                if (std::fabs(delta) >= gate.tau) {
                    sum += delta;
                    ++count;
                }
            }
            if (count == 0) {
                oracle_scores.emplace_back();
            } else {
                oracle_scores.emplace_back(std::exp(-(sum / static_cast<double>(count))));
            }
        }

        ensure(prod.per_perturbation.size() == spec.M, "per-perturbation score count mismatch");
        size_t defined = 0;
        double mean = 0.0;
        for (size_t i = 0; i < spec.M; ++i) {
            const auto& a = prod.per_perturbation[i];
            const auto& b = oracle_scores[i];
            ensure(a.has_value() == b.has_value(),
                   "sample " + s.id + " perturbation " + std::to_string(i) +
                           ": defined/undefined mismatch between batched and loop paths");
            if (a.has_value()) {
                const double diff = std::fabs(*a - *b);
                max_score_diff = std::max(max_score_diff, diff);
                ensure(diff <= 1e-6, "sample " + s.id + " perturbation " + std::to_string(i) +
                                             ": batched vs loop S-IFD diff " + num(diff));
                mean += *b;
                ++defined;
            }
        }
        ensure(prod.m_effective == defined, "m_effective mismatch for " + s.id);
        if (defined > 0) {
            mean /= static_cast<double>(defined);
            double var = 0.0;
            for (const auto& b : oracle_scores) {
                if (b.has_value()) {
                    var += (*b - mean) * (*b - mean);
                }
            }
            var /= static_cast<double>(defined);
            const double mu_diff = std::fabs(*prod.mu_hat - mean);
            const double var_diff = std::fabs(*prod.sigma2_hat - var);
            max_stat_diff = std::max({max_stat_diff, mu_diff, var_diff});
            ensure(mu_diff <= 1e-8, "sample " + s.id + ": mu_hat diff " + num(mu_diff));
            ensure(var_diff <= 1e-8, "sample " + s.id + ": sigma2_hat diff " + num(var_diff));
        } else {
            ensure(!prod.mu_hat.has_value(), "mu_hat defined with zero effective scores");
        }
    }
    return {"PASS", "20 samples x M=30: max score diff = " + num(max_score_diff) +
                            " (<=1e-6), max stat diff = " + num(max_stat_diff) + " (<=1e-8)"};
}

// --- 5. Two-stage selection equals a brute-force double sort. --------------

Outcome criterion_selection_oracle() {
    SplitMix rng(2025);
    const double mu_grid[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    const double sigma_grid[] = {0.0, 0.05, 0.1, 0.15};
    const double sifd_grid[] = {0.1, 0.2, 0.3, 0.45, 0.6, 0.75, 0.9, 0.95};
    const double ifd_grid[] = {0.3, 0.6, 0.9, 1.0, 1.2};
    const double gamma_grid[] = {1.0, 1.5, 2.0};

    size_t total_records = 0;
    for (int table = 0; table < 200; ++table) {
        const size_t n = 50 + rng.next_below(951);  // 50..1000
        std::vector<ScoreRecord> records;
        records.reserve(n);
        for (size_t i = 0; i < n; ++i) {
            ScoreRecord r;
            r.sample_id = "r" + std::to_string(i);
            r.T = 1 + rng.next_below(30);
            if (i >= 8 && rng.next_below(10) == 0) {
                r.discarded = true;
                r.reason = DiscardReason::backend_error;
                records.push_back(std::move(r));
                continue;
            }
            r.ifd = ifd_grid[i < 8 ? 0 : rng.next_below(5)];
            r.sifd = sifd_grid[rng.next_below(8)];
            r.mu_hat = mu_grid[rng.next_below(6)];
            r.sigma2_hat = sigma_grid[rng.next_below(4)];
            if (*r.ifd >= 1.0) {
                r.discarded = true;
                r.reason = DiscardReason::ifd_ge_one;
            }
            records.push_back(std::move(r));
        }

        SelectionConfig cfg;
        cfg.gamma = gamma_grid[rng.next_below(3)];
        cfg.tie_break = (table % 2 == 0) ? TieBreak::clean_score_then_id : TieBreak::mu_then_id;
        cfg.filter_ifd_ge_one = (table % 3 != 0);

        // Mirror of the documented eligibility rule.
        std::vector<const ScoreRecord*> eligible;
        for (const ScoreRecord& r : records) {
            const bool high_ifd = r.reason == DiscardReason::ifd_ge_one;
            if (r.discarded && !(high_ifd && !cfg.filter_ifd_ge_one)) {
                continue;
            }
            if (cfg.filter_ifd_ge_one && r.ifd.has_value() && *r.ifd >= 1.0) {
                continue;
            }
            eligible.push_back(&r);
        }
        const size_t max_b = static_cast<size_t>(
                std::floor(static_cast<double>(eligible.size()) / cfg.gamma + 1e-12));
        ensure(max_b >= 1, "degenerate table generated (no feasible budget)");
        cfg.budget_b = 1 + rng.next_below(max_b);

        const double width = cfg.gamma * static_cast<double>(cfg.budget_b);
        const double snapped = std::nearbyint(width);
        const size_t n1 = (std::fabs(width - snapped) <= 1e-9)
                                  ? static_cast<size_t>(snapped)
                                  : static_cast<size_t>(std::ceil(width));

        const auto secondary = [&](const ScoreRecord* r) {
            return cfg.tie_break == TieBreak::clean_score_then_id ? *r->sifd : *r->mu_hat;
        };
        std::vector<const ScoreRecord*> pool = eligible;
        std::sort(pool.begin(), pool.end(), [&](const ScoreRecord* a, const ScoreRecord* b) {
            if (*a->mu_hat != *b->mu_hat) {
                return *a->mu_hat > *b->mu_hat;
            }
            if (secondary(a) != secondary(b)) {
                return secondary(a) > secondary(b);
            }
            return a->sample_id < b->sample_id;
        });
        pool.resize(n1);
        std::sort(pool.begin(), pool.end(), [&](const ScoreRecord* a, const ScoreRecord* b) {
            if (*a->sigma2_hat != *b->sigma2_hat) {
                return *a->sigma2_hat < *b->sigma2_hat;
            }
            if (secondary(a) != secondary(b)) {
                return secondary(a) > secondary(b);
            }
            return a->sample_id < b->sample_id;
        });
        pool.resize(cfg.budget_b);
        std::vector<std::string> expected;
        for (const ScoreRecord* r : pool) {
            expected.push_back(r->sample_id);
        }
        std::sort(expected.begin(), expected.end());

        const SelectionResult result = hierarchical_select(records, cfg);
        std::vector<std::string> got = result.selected_ids;
        std::sort(got.begin(), got.end());
        ensure(got == expected, "table " + std::to_string(table) + " (n=" + std::to_string(n) +
                                        ", b=" + std::to_string(cfg.budget_b) +
                                        "): selected set differs from brute force");
        total_records += n;
    }
    return {"PASS", "200/200 tables match (" + std::to_string(total_records) +
                            " records, both tie policies, filter on and off)"};
}

// --- 6. The gate realizes the requested token fraction; tau is monotone. ---

Outcome criterion_gate_coverage() {
    SplitMix rng(77);
    std::vector<DeltaTrace> traces;
    size_t total = 0;
    while (total < 100000) {
        DeltaTrace tr;
        tr.sample_id = "g" + std::to_string(traces.size());
        const size_t T = 5 + rng.next_below(11);
        tr.delta.resize(T);
        for (double& d : tr.delta) {
            d = rng.next_unit() * 1.2 - 0.6;
            if (rng.next_below(10) < 3) {  // inject exact ties on a coarse grid
                d = std::nearbyint(d / 0.05) * 0.05;
            }
        }
        total += T;
        traces.push_back(std::move(tr));
    }

    std::vector<double> pool;
    pool.reserve(total);
    for (const DeltaTrace& tr : traces) {
        for (double d : tr.delta) {
            pool.push_back(std::fabs(d));
        }
    }

    std::string report;
    double prev_tau = std::numeric_limits<double>::infinity();
    for (double k : {25.0, 50.0, 75.0, 100.0}) {
        const GateThreshold gate = compute_gate(traces, k);
        ensure(gate.total_tokens == total, "gate token count mismatch");

        size_t ge_tau = 0, ties = 0;
        for (double v : pool) {
            if (v >= gate.tau) {
                ++ge_tau;
            }
            if (v == gate.tau) {
                ++ties;
            }
        }
        ensure(gate.selected_tokens == ge_tau, "selected_tokens disagrees with direct count");

        const double exact = k / 100.0 * static_cast<double>(total);
        size_t m = static_cast<size_t>(std::llround(exact));
        m = std::max<size_t>(1, std::min(m, total));
        if (k == 100.0) {
            ensure(gate.tau == 0.0, "tau at k=100 must be exactly 0");
            ensure(gate.selected_tokens == total, "k=100 must select every token");
        } else {
            ensure(gate.selected_tokens >= m && gate.selected_tokens <= m + ties,
                   "k=" + num(k) + ": selected " + std::to_string(gate.selected_tokens) +
                           " outside [" + std::to_string(m) + ", " + std::to_string(m + ties) +
                           "]");
        }
        const double frac_err =
                std::fabs(static_cast<double>(gate.selected_tokens) - exact);
        ensure(frac_err <= 1.0 + static_cast<double>(ties),
               "k=" + num(k) + ": fraction misses by " + num(frac_err) + " tokens beyond ties");
        ensure(gate.tau <= prev_tau, "tau must be non-increasing in k");
        prev_tau = gate.tau;
        if (!report.empty()) {
            report += ", ";
        }
        report += "k=" + num(k) + ": " +
                  num(100.0 * static_cast<double>(gate.selected_tokens) /
                      static_cast<double>(total)) +
                  "%";
    }
    return {"PASS", std::to_string(total) + " tokens; " + report + "; tau monotone"};
}

// --- 7. alpha = 0 collapses every neighborhood onto the clean score. -------

Outcome criterion_zero_noise_fixed_point() {
    const auto tokenizer = make_builtin_tokenizer();
    const Dataset ds = make_dataset(synth_samples(50, 31), *tokenizer);
    const TinyLM lm;
    ScoreParams params;
    params.k = 75.0;
    params.alpha = 0.0;
    params.M = 5;
    params.seed = 3;
    const ScoreOutcome out = run_scoring(ds, lm, params, 4);

    size_t with_score = 0;
    for (const ScoreRecord& r : out.records) {
        ensure(r.reason != DiscardReason::backend_error, "unexpected backend error");
        if (r.sifd.has_value()) {
            ensure(r.mu_hat.has_value() && r.sigma2_hat.has_value(),
                   "sample " + r.sample_id + " lost its neighborhood stats");
            ensure(*r.mu_hat == *r.sifd,
                   "sample " + r.sample_id + ": mu_hat != clean S-IFD at alpha=0");
            ensure(*r.sigma2_hat == 0.0,
                   "sample " + r.sample_id + ": sigma2_hat = " + num(*r.sigma2_hat) + " != 0");
            ensure(r.m_effective == 5 && r.undefined_count == 0,
                   "sample " + r.sample_id + ": wrong effective perturbation count");
            ++with_score;
        } else {
            ensure(!r.mu_hat.has_value() && !r.sigma2_hat.has_value(),
                   "sample " + r.sample_id + ": stats defined without a clean score");
        }
    }
    ensure(with_score > 0, "no sample produced a defined score");
    return {"PASS", std::to_string(with_score) +
                            " scored samples: mu_hat == clean S-IFD bitwise, sigma2_hat == 0"};
}

// --- 8 & 9. Worker-count determinism on 10k samples, with the 8-worker -----
// leg timed against the desk-scale budget.

Outcome criterion_worker_determinism() {
    TempDir dir;
    const std::string data = write_jsonl(dir, "corpus.jsonl", synth_samples(10000, 2026));

    RunConfig cfg;
    cfg.dataset_path = data;
    cfg.budget = "2%";
    cfg.seed = 0;  // defaults otherwise: k=75, alpha=5, M=30, gamma=2

    RunConfig one = cfg;
    one.workers = 1;
    one.output_dir = dir.file("one");
    const auto t1 = std::chrono::steady_clock::now();
    cmd_score(one);
    cmd_select(one, "");
    const double secs_one = seconds_since(t1);

    RunConfig eight = cfg;
    eight.workers = 8;
    eight.output_dir = dir.file("eight");
    const auto t8 = std::chrono::steady_clock::now();
    cmd_score(eight);
    cmd_select(eight, "");
    g_eight_worker_seconds = seconds_since(t8);

    for (const char* name : {"score_table.tsv", "gate.txt", "selected.jsonl", "audit.csv",
                             "manifest.txt", "config.txt"}) {
        const std::string a = read_file(one.output_dir + "/" + name);
        const std::string b = read_file(eight.output_dir + "/" + name);
        ensure(!a.empty(), std::string(name) + " missing from the 1-worker run");
        ensure(a == b, std::string(name) + " differs between 1 and 8 workers");
    }
    return {"PASS", "10000 samples, M=30: all six artifacts byte-identical (1 worker " +
                            num(secs_one) + "s, 8 workers " + num(*g_eight_worker_seconds) +
                            "s)"};
}

Outcome criterion_throughput() {
    ensure(g_eight_worker_seconds.has_value(),
           "8-worker timing unavailable (determinism run did not finish)");
    const double secs = *g_eight_worker_seconds;
    const unsigned cores = std::thread::hardware_concurrency();
    if (cores < 8) {
        // The target presumes an 8-core host; with fewer cores the 8 workers
        // time-slice and the wall clock measures the hardware, not the code.
        return {"SKIP", "target presumes 8 hardware cores, this host has " +
                                std::to_string(cores) + "; 8-worker leg took " + num(secs) +
                                "s wall here"};
    }
    ensure(secs < 120.0, "8-worker pipeline took " + num(secs) + "s, soft budget 120s");
    return {"PASS", "10k samples scored and selected in " + num(secs) + "s on 8 workers (< 120s)"};
}

// --- 10. Optional: external log-prob cache over a real dataset. ------------

Outcome criterion_external_band() {
    const char* cache_path = std::getenv("SIFD_GPT2_CACHE");
    const char* data_path = std::getenv("SIFD_ALPACA_JSONL");
    if (cache_path == nullptr || data_path == nullptr) {
        return {"SKIP", "set SIFD_GPT2_CACHE and SIFD_ALPACA_JSONL to run the band check"};
    }
    const LogProbCache cache = LogProbCache::load(cache_path);
    const std::vector<Sample> samples = read_samples_jsonl(data_path);

    size_t tokens = 0, small = 0, used = 0, missing = 0;
    for (const Sample& s : samples) {
        try {
            const LogProbVector& cond = cache.lookup(s.id, PassKind::conditional);
            const LogProbVector& uncond = cache.lookup(s.id, PassKind::unconditional);
            ensure(cond.size() == uncond.size(),
                   "sample " + s.id + ": pass lengths differ in the cache");
            for (size_t t = 0; t < cond.size(); ++t) {
                if (std::fabs(cond[t] - uncond[t]) <= 0.01) {
                    ++small;
                }
            }
            tokens += cond.size();
            ++used;
        } catch (const BackendError&) {
            ++missing;
        }
    }
    ensure(used > 0, "the cache shares no sample ids with the dataset");
    const double fraction = static_cast<double>(small) / static_cast<double>(tokens);
    ensure(fraction >= 0.20 && fraction <= 0.25,
           "|delta| <= 0.01 fraction = " + num(fraction) + " outside [0.20, 0.25] (" +
                   std::to_string(used) + " samples, " + std::to_string(missing) + " missing)");
    return {"PASS", "|delta| <= 0.01 fraction = " + num(fraction) + " over " +
                            std::to_string(tokens) + " tokens from " + std::to_string(used) +
                            " samples"};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
            {1, "k=100 selective score reduces to plain IFD", criterion_full_width_reduction},
            {2, "uniform 0.01-gain trace scores exp(-0.01)", criterion_uniform_gain_value},
            {3, "mean squared noise norm tracks alpha^2/3", criterion_noise_geometry},
            {4, "batched perturbation matches per-sample loop oracle", criterion_batched_vs_loop},
            {5, "hierarchical selection matches brute-force reference",
             criterion_selection_oracle},
            {6, "gate realizes requested token fraction, tau monotone in k",
             criterion_gate_coverage},
            {7, "alpha=0 collapses neighborhood stats onto the clean score",
             criterion_zero_noise_fixed_point},
            {8, "byte-identical outputs across 1 vs 8 workers", criterion_worker_determinism},
            {9, "10k-sample pipeline under the desk-scale time budget", criterion_throughput},
            {10, "external cache small-|delta| token band (optional)", criterion_external_band},
    };

    std::vector<Outcome> results;
    for (const Criterion& c : criteria) {
        std::cerr << "[ .. ] running " << c.id << ": " << c.name << std::endl;
        Outcome outcome;
        try {
            outcome = c.run();
        } catch (const std::exception& e) {
            outcome = {"FAIL", e.what()};
        }
        std::cerr << "[ " << outcome.status << " ] " << c.id << std::endl;
        results.push_back(std::move(outcome));
    }

    int failures = 0, skips = 0;
    std::cout << "\n";
    for (size_t i = 0; i < results.size(); ++i) {
        std::cout << "[" << results[i].status << "] " << criteria[i].id << ": "
                  << criteria[i].name << " (" << results[i].detail << ")\n";
        failures += results[i].status == "FAIL";
        skips += results[i].status == "SKIP";
    }
    std::cout << (std::size(criteria) - failures - skips) << " passed, " << failures
              << " failed, " << skips << " skipped" << std::endl;
    return failures > 0 ? 1 : 0;
}
