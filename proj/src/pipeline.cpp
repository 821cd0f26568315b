#include "sifd/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json.hpp"

#include "sifd/common.hpp"
#include "sifd/logprob_cache.hpp"
#include "sifd/tinylm.hpp"
#include "sifd/tokenizer.hpp"

namespace sifd {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) {
        return "";
    }
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw UsageError("config key '" + key + "': expected true/false, got '" + value + "'");
}

uint64_t parse_u64(const std::string& value, const std::string& key) {
    uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw UsageError("config key '" + key + "': expected an unsigned integer, got '" + value +
                         "'");
    }
    return out;
}

int32_t parse_i32(const std::string& value, const std::string& key) {
    int32_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw UsageError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
    return out;
}

// Template text travels through one-line config values; escape the two
// whitespace characters that matter plus the backslash itself.
std::string escape_template(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\':
                out += "\\\\";
                break;
            case '\n':
                out += "\\n";
                break;
            case '\t':
                out += "\\t";
                break;
            default:
                out.push_back(c);
        }
    }
    return out;
}

std::string unescape_template(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 == s.size()) {
            out.push_back(s[i]);
            continue;
        }
        ++i;
        switch (s[i]) {
            case 'n':
                out.push_back('\n');
                break;
            case 't':
                out.push_back('\t');
                break;
            case '\\':
                out.push_back('\\');
                break;
            default:
                out.push_back('\\');
                out.push_back(s[i]);
        }
    }
    return out;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "dataset") {
        cfg.dataset_path = value;
    } else if (key == "backend") {
        cfg.backend = value;
    } else if (key == "cache_path") {
        cfg.cache_path = value;
    } else if (key == "template") {
        cfg.template_text = unescape_template(value);
    } else if (key == "append_separator") {
        cfg.append_separator = parse_bool(value, key);
    } else if (key == "separator_id") {
        cfg.separator_id = parse_i32(value, key);
    } else if (key == "k") {
        cfg.k = parse_double(value, "config key 'k'");
    } else if (key == "alpha") {
        cfg.alpha = parse_double(value, "config key 'alpha'");
    } else if (key == "M") {
        cfg.M = static_cast<size_t>(parse_u64(value, key));
    } else if (key == "gamma") {
        cfg.gamma = parse_double(value, "config key 'gamma'");
    } else if (key == "budget") {
        cfg.budget = value;
    } else if (key == "seed") {
        cfg.seed = parse_u64(value, key);
    } else if (key == "output_dir") {
        cfg.output_dir = value;
    } else if (key == "tie_break") {
        cfg.tie_break = parse_tie_break(value);
    } else if (key == "filter_ifd_ge_one") {
        cfg.filter_ifd_ge_one = parse_bool(value, key);
    } else if (key == "dump_traces") {
        cfg.dump_traces = parse_bool(value, key);
    } else if (key == "rerank_per_perturbation") {
        cfg.rerank_per_perturbation = parse_bool(value, key);
    } else if (key == "tinylm_vocab") {
        cfg.tinylm.vocab_size = parse_i32(value, key);
    } else if (key == "tinylm_dim") {
        cfg.tinylm.d_model = static_cast<size_t>(parse_u64(value, key));
    } else if (key == "tinylm_layers") {
        cfg.tinylm.n_layers = static_cast<size_t>(parse_u64(value, key));
    } else if (key == "tinylm_heads") {
        cfg.tinylm.n_heads = static_cast<size_t>(parse_u64(value, key));
    } else if (key == "tinylm_context") {
        cfg.tinylm.context_cap = static_cast<size_t>(parse_u64(value, key));
    } else if (key == "tinylm_weight_seed") {
        cfg.tinylm.weight_seed = parse_u64(value, key);
    } else if (key == "workers") {
        throw UsageError(
                "'workers' is a command-line-only flag (-j); it cannot live in a config file "
                "because it must not affect outputs");
    } else {
        throw UsageError("unknown config key '" + key + "'");
    }
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    out += "\"";
    return out;
}

std::string opt_str(const std::optional<double>& v) {
    return v.has_value() ? format_double(*v) : std::string();
}

std::optional<double> opt_from(const std::string& s, const std::string& what) {
    if (s.empty()) {
        return std::nullopt;
    }
    return parse_double(s, what);
}

double elapsed_s(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

void write_selected_jsonl(const std::string& path, const std::vector<std::string>& selected_ids,
                          const std::vector<Sample>& raw) {
    std::unordered_map<std::string, const Sample*> by_id;
    by_id.reserve(raw.size());
    for (const Sample& s : raw) {
        by_id[s.id] = &s;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write selection output: " + path);
    }
    for (const std::string& id : selected_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DataError("selected id '" + id + "' is not present in the dataset file");
        }
        nlohmann::json j;
        j["id"] = it->second->id;
        j["instruction"] = it->second->instruction;
        j["response"] = it->second->response;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw DataError("failed while writing selection output: " + path);
    }
}

void write_audit_csv(const std::string& path, const std::vector<AuditRow>& audit) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write audit file: " + path);
    }
    out << "id,mu_hat,sigma2_hat,eligible,reason,stage1_rank,stage2_rank\n";
    for (const AuditRow& row : audit) {
        out << csv_escape(row.sample_id) << ',' << opt_str(row.mu_hat) << ','
            << opt_str(row.sigma2_hat) << ',' << (row.eligible ? '1' : '0') << ','
            << discard_reason_name(row.reason) << ',';
        if (row.stage1_rank > 0) {
            out << row.stage1_rank;
        }
        out << ',';
        if (row.stage2_rank > 0) {
            out << row.stage2_rank;
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("failed while writing audit file: " + path);
    }
}

void print_selection_summary(const std::vector<ScoreRecord>& records,
                             const SelectionResult& result, size_t budget, double gamma,
                             const std::string& out_dir) {
    size_t ifd_ge_one = 0;
    size_t no_tokens = 0;
    size_t backend_err = 0;
    for (const ScoreRecord& r : records) {
        switch (r.reason) {
            case DiscardReason::ifd_ge_one:
                ++ifd_ge_one;
                break;
            case DiscardReason::no_selected_tokens:
                ++no_tokens;
                break;
            case DiscardReason::backend_error:
                ++backend_err;
                break;
            case DiscardReason::none:
                break;
        }
    }
    std::cout << "selected " << result.selected_ids.size() << " of " << records.size()
              << " samples (budget=" << budget << ", gamma=" << format_double(gamma)
              << ", stage1=" << result.stage1_ids.size() << ", eligible=" << result.eligible_count
              << ")\n";
    std::cout << "discards: ifd_ge_one=" << ifd_ge_one << " no_selected_tokens=" << no_tokens
              << " backend_error=" << backend_err << "\n";
    std::cout << "wrote " << out_dir << "/selected.jsonl and " << out_dir << "/audit.csv\n";
}

void check_table_fingerprint(const ScoreTableData& table, const std::string& fingerprint) {
    auto it = table.meta.find("dataset_fingerprint");
    if (it == table.meta.end()) {
        throw DataError("score table has no dataset_fingerprint metadata");
    }
    if (it->second != fingerprint) {
        throw DataError("score table was computed on a different dataset or template: table has "
                        "fingerprint " +
                        it->second + ", the current dataset has " + fingerprint);
    }
}

}  // namespace

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file: " + path);
    }
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') {
            continue;
        }
        size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config file " + path + " line " + std::to_string(line_no) +
                             ": expected key=value");
        }
        apply_config_entry(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "dataset=" << cfg.dataset_path << '\n';
    out << "backend=" << cfg.backend << '\n';
    out << "cache_path=" << cfg.cache_path << '\n';
    out << "template=" << escape_template(cfg.template_text) << '\n';
    out << "append_separator=" << (cfg.append_separator ? "true" : "false") << '\n';
    out << "separator_id=" << cfg.separator_id << '\n';
    out << "k=" << format_double(cfg.k) << '\n';
    out << "alpha=" << format_double(cfg.alpha) << '\n';
    out << "M=" << cfg.M << '\n';
    out << "gamma=" << format_double(cfg.gamma) << '\n';
    out << "budget=" << cfg.budget << '\n';
    out << "seed=" << cfg.seed << '\n';
    out << "tie_break=" << tie_break_name(cfg.tie_break) << '\n';
    out << "filter_ifd_ge_one=" << (cfg.filter_ifd_ge_one ? "true" : "false") << '\n';
    out << "dump_traces=" << (cfg.dump_traces ? "true" : "false") << '\n';
    out << "rerank_per_perturbation=" << (cfg.rerank_per_perturbation ? "true" : "false") << '\n';
    out << "tinylm_vocab=" << cfg.tinylm.vocab_size << '\n';
    out << "tinylm_dim=" << cfg.tinylm.d_model << '\n';
    out << "tinylm_layers=" << cfg.tinylm.n_layers << '\n';
    out << "tinylm_heads=" << cfg.tinylm.n_heads << '\n';
    out << "tinylm_context=" << cfg.tinylm.context_cap << '\n';
    out << "tinylm_weight_seed=" << cfg.tinylm.weight_seed << '\n';
    return out.str();
}

TemplateSpec template_spec_from(const RunConfig& cfg) {
    TemplateSpec tpl;
    tpl.text = cfg.template_text;
    tpl.append_separator = cfg.append_separator;
    tpl.separator_id = cfg.separator_id;
    return tpl;
}

std::unique_ptr<Backend> make_backend(const RunConfig& cfg) {
    if (cfg.backend == "tinylm") {
        return std::make_unique<TinyLM>(cfg.tinylm);
    }
    if (cfg.backend == "cache") {
        if (cfg.cache_path.empty()) {
            throw UsageError("backend 'cache' requires cache_path (--cache <file>)");
        }
        return std::make_unique<LogProbCache>(LogProbCache::load(cfg.cache_path));
    }
    throw UsageError("unknown backend '" + cfg.backend + "' (expected tinylm or cache)");
}

size_t parse_budget(const std::string& budget, size_t dataset_size) {
    if (budget.empty()) {
        throw UsageError("selection budget is required (--budget <count> or --budget <percent>%)");
    }
    if (budget.back() == '%') {
        const double pct =
                parse_double(budget.substr(0, budget.size() - 1), "budget percentage");
        if (!(pct > 0.0) || pct > 100.0) {
            throw UsageError("budget percentage must be in (0, 100], got '" + budget + "'");
        }
        const auto b = static_cast<size_t>(
                std::llround(pct / 100.0 * static_cast<double>(dataset_size)));
        if (b == 0) {
            throw UsageError("budget '" + budget + "' rounds to zero of " +
                             std::to_string(dataset_size) + " samples");
        }
        return b;
    }
    const uint64_t b = parse_u64(budget, "budget");
    if (b == 0) {
        throw UsageError("selection budget must be positive");
    }
    return static_cast<size_t>(b);
}

void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& body) {
    if (n == 0) {
        return;
    }
    size_t resolved = workers;
    if (resolved == 0) {
        resolved = std::thread::hardware_concurrency();
        if (resolved == 0) {
            resolved = 1;
        }
    }
    resolved = std::min(resolved, n);
    if (resolved <= 1) {
        for (size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                next.store(n);  // drain remaining work
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(resolved);
    for (size_t t = 0; t < resolved; ++t) {
        threads.emplace_back(worker);
    }
    for (std::thread& t : threads) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

ScoreOutcome run_scoring(const Dataset& dataset, const Backend& backend, const ScoreParams& params,
                         size_t workers) {
    if (dataset.size() == 0) {
        throw DataError("dataset is empty");
    }
    if (!(params.k > 0.0) || params.k > 100.0) {
        throw UsageError("token ratio k must be in (0, 100], got " + format_double(params.k));
    }
    if (params.alpha < 0.0) {
        throw UsageError("noise scale alpha must be nonnegative");
    }
    const std::string backend_fp = backend.tokenizer_fingerprint();
    if (!backend_fp.empty() && backend_fp != dataset.tokenizer_fingerprint) {
        throw DataError("tokenizer mismatch: backend expects '" + backend_fp +
                        "' but the dataset was tokenized with '" + dataset.tokenizer_fingerprint +
                        "'");
    }
    if (params.M > 0 && !backend.has_embeddings()) {
        throw BackendError("perturbation requires embedding access; backend '" + backend.name() +
                           "' only serves stored log-probs (rerun with M=0)");
    }

    const size_t n = dataset.size();
    ScoreOutcome out;
    out.traces.resize(n);
    out.errors.assign(n, std::string());
    out.records.resize(n);

    auto t_start = std::chrono::steady_clock::now();
    std::atomic<size_t> done{0};
    const size_t step = std::max<size_t>(1, n / 10);
    parallel_for(n, workers, [&](size_t i) {
        try {
            out.traces[i] = compute_delta_trace(backend, dataset.samples[i]);
        } catch (const BackendError& e) {
            out.errors[i] = e.what();
        }
        const size_t v = done.fetch_add(1) + 1;
        if (v % step == 0 && v < n) {
            std::fprintf(stderr, "[score] clean pass %zu/%zu\n", v, n);
        }
    });
    std::fprintf(stderr, "[score] clean pass over %zu samples done in %.2fs\n", n,
                 elapsed_s(t_start));

    std::vector<double> abs_pool;
    {
        size_t total = 0;
        for (const auto& tr : out.traces) {
            if (tr.has_value()) {
                total += tr->delta.size();
            }
        }
        abs_pool.reserve(total);
        for (const auto& tr : out.traces) {
            if (!tr.has_value()) {
                continue;
            }
            for (double d : tr->delta) {
                abs_pool.push_back(std::fabs(d));
            }
        }
    }
    if (abs_pool.empty()) {
        std::string first = "(none)";
        for (const std::string& e : out.errors) {
            if (!e.empty()) {
                first = e;
                break;
            }
        }
        throw DataError("no sample could be scored; first backend error: " + first);
    }
    out.gate = compute_gate_from_abs(std::move(abs_pool), params.k);
    std::fprintf(stderr, "[score] gate: tau=%s, %zu/%zu tokens selected (k=%s)\n",
                 format_double(out.gate.tau).c_str(), out.gate.selected_tokens,
                 out.gate.total_tokens, format_double(params.k).c_str());

    // Clean scores and the clean-score discard rule.
    for (size_t i = 0; i < n; ++i) {
        ScoreRecord& r = out.records[i];
        r.sample_id = dataset.samples[i].id;
        r.L = dataset.samples[i].instruction_len();
        r.T = dataset.samples[i].response_len();
        if (!out.errors[i].empty()) {
            r.discarded = true;
            r.reason = DiscardReason::backend_error;
            continue;
        }
        const DeltaTrace& trace = *out.traces[i];
        r.ifd = compute_ifd(trace);
        SifdResult sr = compute_sifd(trace, out.gate);
        r.sifd = sr.sifd;
        r.selected_token_count = sr.selected_token_count;
        if (!r.sifd.has_value()) {
            r.discarded = true;
            r.reason = DiscardReason::no_selected_tokens;
        } else if (*r.sifd >= 1.0) {
            // The rule tests the clean selective score; neighborhood stats are
            // still computed below so the selection-time filter stays togglable.
            r.discarded = true;
            r.reason = DiscardReason::ifd_ge_one;
        }
    }

    if (params.M > 0) {
        const NoiseSpec noise{params.alpha, params.M, params.seed};
        std::vector<std::optional<NeighborhoodStats>> stats(n);
        auto t_perturb = std::chrono::steady_clock::now();
        done.store(0);

        if (!params.rerank_per_perturbation) {
            parallel_for(n, workers, [&](size_t i) {
                const ScoreRecord& r = out.records[i];
                if (r.reason != DiscardReason::none && r.reason != DiscardReason::ifd_ge_one) {
                    return;
                }
                try {
                    stats[i] = neighborhood_stats(backend, dataset.samples[i], out.gate, noise);
                } catch (const BackendError& e) {
                    out.errors[i] = e.what();
                }
                const size_t v = done.fetch_add(1) + 1;
                if (v % step == 0 && v < n) {
                    std::fprintf(stderr, "[score] perturbation pass %zu/%zu\n", v, n);
                }
            });
        } else {
            const auto* emb_backend = dynamic_cast<const EmbeddingBackend*>(&backend);
            if (emb_backend == nullptr) {
                throw BackendError("perturbation requires embedding access");
            }
            // Every scoreable sample contributes to the per-perturbation
            // pools, exactly as every sample contributed to the clean gate.
            std::vector<std::vector<std::vector<double>>> all_deltas(n);
            parallel_for(n, workers, [&](size_t i) {
                if (!out.traces[i].has_value() || !out.errors[i].empty()) {
                    return;
                }
                try {
                    all_deltas[i] = perturbed_deltas(*emb_backend, dataset.samples[i], noise);
                } catch (const BackendError& e) {
                    out.errors[i] = e.what();
                }
                const size_t v = done.fetch_add(1) + 1;
                if (v % step == 0 && v < n) {
                    std::fprintf(stderr, "[score] perturbation pass %zu/%zu\n", v, n);
                }
            });
            out.rerank_gates.resize(params.M);
            for (size_t m = 0; m < params.M; ++m) {
                std::vector<double> pool;
                for (size_t i = 0; i < n; ++i) {
                    if (all_deltas[i].size() != params.M) {
                        continue;
                    }
                    for (double d : all_deltas[i][m]) {
                        pool.push_back(std::fabs(d));
                    }
                }
                if (pool.empty()) {
                    throw DataError("re-rank gate " + std::to_string(m) +
                                    ": no perturbed tokens available");
                }
                out.rerank_gates[m] = compute_gate_from_abs(std::move(pool), params.k);
            }
            parallel_for(n, workers, [&](size_t i) {
                const ScoreRecord& r = out.records[i];
                if (all_deltas[i].size() != params.M || !r.sifd.has_value()) {
                    return;
                }
                std::vector<std::optional<double>> scores;
                scores.reserve(params.M);
                for (size_t m = 0; m < params.M; ++m) {
                    scores.push_back(compute_sifd(all_deltas[i][m], out.rerank_gates[m].tau).sifd);
                }
                stats[i] = stats_from_scores(r.sample_id, std::move(scores));
            });
        }

        for (size_t i = 0; i < n; ++i) {
            ScoreRecord& r = out.records[i];
            if (!out.errors[i].empty() && r.reason != DiscardReason::backend_error) {
                r.discarded = true;
                r.reason = DiscardReason::backend_error;
                r.mu_hat.reset();
                r.sigma2_hat.reset();
                continue;
            }
            if (!stats[i].has_value()) {
                continue;
            }
            const NeighborhoodStats& s = *stats[i];
            r.mu_hat = s.mu_hat;
            r.sigma2_hat = s.sigma2_hat;
            r.m_effective = s.m_effective;
            r.undefined_count = s.undefined_count;
            if (s.m_effective == 0) {
                // Unusable even with the clean-score filter toggled off.
                r.discarded = true;
                r.reason = DiscardReason::no_selected_tokens;
            }
        }
        std::fprintf(stderr, "[score] perturbation pass (M=%zu) done in %.2fs\n", params.M,
                     elapsed_s(t_perturb));
    }

    return out;
}

void write_score_table(const std::string& path, const ScoreTableData& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write score table: " + path);
    }
    out << "# sifd-score-table v1\n";
    for (const auto& [key, value] : table.meta) {
        out << "# " << key << '=' << value << '\n';
    }
    out << "id\tL\tT\tifd\tsifd\tselected_token_count\tmu_hat\tsigma2_hat\tm_effective\t"
           "undefined_count\tdiscarded\treason\n";
    for (const ScoreRecord& r : table.records) {
        out << r.sample_id << '\t' << r.L << '\t' << r.T << '\t' << opt_str(r.ifd) << '\t'
            << opt_str(r.sifd) << '\t' << r.selected_token_count << '\t' << opt_str(r.mu_hat)
            << '\t' << opt_str(r.sigma2_hat) << '\t' << r.m_effective << '\t' << r.undefined_count
            << '\t' << (r.discarded ? 1 : 0) << '\t' << discard_reason_name(r.reason) << '\n';
    }
    if (!out) {
        throw DataError("failed while writing score table: " + path);
    }
}

ScoreTableData load_score_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open score table: " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != "# sifd-score-table v1") {
        throw DataError("not a score table file: " + path);
    }
    ScoreTableData table;
    bool header_seen = false;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line.rfind("# ", 0) == 0) {
            const std::string entry = line.substr(2);
            const size_t eq = entry.find('=');
            if (eq != std::string::npos) {
                table.meta[entry.substr(0, eq)] = entry.substr(eq + 1);
            }
            continue;
        }
        if (!header_seen) {
            if (line.rfind("id\tL\tT\t", 0) != 0) {
                throw DataError("score table " + path + " line " + std::to_string(line_no) +
                                ": expected the column header");
            }
            header_seen = true;
            continue;
        }
        std::vector<std::string> f = split_tabs(line);
        if (f.size() != 12) {
            throw DataError("score table " + path + " line " + std::to_string(line_no) +
                            ": expected 12 columns, got " + std::to_string(f.size()));
        }
        const std::string ctx = "score table line " + std::to_string(line_no);
        ScoreRecord r;
        r.sample_id = f[0];
        r.L = static_cast<size_t>(parse_u64(f[1], "L"));
        r.T = static_cast<size_t>(parse_u64(f[2], "T"));
        r.ifd = opt_from(f[3], ctx);
        r.sifd = opt_from(f[4], ctx);
        r.selected_token_count = static_cast<size_t>(parse_u64(f[5], "selected_token_count"));
        r.mu_hat = opt_from(f[6], ctx);
        r.sigma2_hat = opt_from(f[7], ctx);
        r.m_effective = static_cast<size_t>(parse_u64(f[8], "m_effective"));
        r.undefined_count = static_cast<size_t>(parse_u64(f[9], "undefined_count"));
        r.discarded = parse_bool(f[10], "discarded");
        r.reason = parse_discard_reason(f[11]);
        table.records.push_back(std::move(r));
    }
    if (!header_seen) {
        throw DataError("score table has no column header: " + path);
    }
    return table;
}

void write_gate_report(const std::string& path, const GateThreshold& gate,
                       const std::vector<GateThreshold>& rerank_gates) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write gate report: " + path);
    }
    out << "k=" << format_double(gate.k) << '\n';
    out << "tau=" << format_double(gate.tau) << '\n';
    out << "total_tokens=" << gate.total_tokens << '\n';
    out << "selected_tokens=" << gate.selected_tokens << '\n';
    out << "selected_fraction="
        << format_double(static_cast<double>(gate.selected_tokens) /
                         static_cast<double>(gate.total_tokens))
        << '\n';
    for (size_t m = 0; m < rerank_gates.size(); ++m) {
        out << "rerank_tau_" << m << '=' << format_double(rerank_gates[m].tau) << '\n';
    }
}

void write_traces(const std::string& path, const std::string& dataset_fingerprint,
                  const std::vector<std::optional<DeltaTrace>>& traces) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write trace dump: " + path);
    }
    out << "# sifd-traces v1\n";
    out << "# dataset_fingerprint=" << dataset_fingerprint << '\n';
    out << "id\tt\tlogp_cond\tlogp_uncond\tdelta\n";
    for (const auto& trace : traces) {
        if (!trace.has_value()) {
            continue;
        }
        for (size_t t = 0; t < trace->delta.size(); ++t) {
            out << trace->sample_id << '\t' << t << '\t' << format_double(trace->logp_cond[t])
                << '\t' << format_double(trace->logp_uncond[t]) << '\t'
                << format_double(trace->delta[t]) << '\n';
        }
    }
    if (!out) {
        throw DataError("failed while writing trace dump: " + path);
    }
}

void write_manifest(const std::string& path, const RunConfig& cfg,
                    const std::string& dataset_fingerprint, const std::string& backend_name,
                    const std::string& tokenizer_fingerprint, size_t n_samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write manifest: " + path);
    }
    out << "sifd-manifest v1\n";
    out << "tool_version=" << kToolVersion << '\n';
    out << "config_hash=" << to_hex(fnv1a64(serialize_config(cfg))) << '\n';
    out << "dataset_fingerprint=" << dataset_fingerprint << '\n';
    out << "backend=" << backend_name << '\n';
    out << "tokenizer=" << tokenizer_fingerprint << '\n';
    out << "n_samples=" << n_samples << '\n';
}

void cmd_score(const RunConfig& cfg) {
    if (cfg.dataset_path.empty()) {
        throw UsageError("--dataset is required");
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto tokenizer = make_builtin_tokenizer();
    Dataset dataset = ingest_jsonl(cfg.dataset_path, *tokenizer, template_spec_from(cfg));
    const std::string fingerprint = dataset.fingerprint();
    std::fprintf(stderr, "[score] ingested %zu samples in %.2fs (fingerprint %s)\n",
                 dataset.size(), elapsed_s(t0), fingerprint.c_str());

    std::unique_ptr<Backend> backend = make_backend(cfg);
    ScoreParams params;
    params.k = cfg.k;
    params.alpha = cfg.alpha;
    params.M = cfg.M;
    params.seed = cfg.seed;
    params.rerank_per_perturbation = cfg.rerank_per_perturbation;
    ScoreOutcome outcome = run_scoring(dataset, *backend, params, cfg.workers);

    fs::create_directories(cfg.output_dir);
    const std::string dir = cfg.output_dir;
    {
        std::ofstream f(dir + "/config.txt", std::ios::binary);
        if (!f) {
            throw DataError("cannot write config provenance: " + dir + "/config.txt");
        }
        f << serialize_config(cfg);
    }

    ScoreTableData table;
    table.meta["dataset_fingerprint"] = fingerprint;
    table.meta["backend"] = backend->name();
    table.meta["tokenizer"] = dataset.tokenizer_fingerprint;
    table.meta["tool_version"] = kToolVersion;
    table.meta["k"] = format_double(cfg.k);
    table.meta["alpha"] = format_double(cfg.alpha);
    table.meta["M"] = std::to_string(cfg.M);
    table.meta["seed"] = std::to_string(cfg.seed);
    table.meta["rerank_per_perturbation"] = cfg.rerank_per_perturbation ? "1" : "0";
    table.meta["tau"] = format_double(outcome.gate.tau);
    table.meta["total_tokens"] = std::to_string(outcome.gate.total_tokens);
    table.meta["selected_tokens"] = std::to_string(outcome.gate.selected_tokens);
    table.records = outcome.records;
    write_score_table(dir + "/score_table.tsv", table);
    write_gate_report(dir + "/gate.txt", outcome.gate, outcome.rerank_gates);
    if (cfg.dump_traces) {
        write_traces(dir + "/traces.tsv", fingerprint, outcome.traces);
    }
    write_manifest(dir + "/manifest.txt", cfg, fingerprint, backend->name(),
                   dataset.tokenizer_fingerprint, dataset.size());

    size_t discarded = 0;
    for (const ScoreRecord& r : outcome.records) {
        if (r.discarded) {
            ++discarded;
        }
    }
    std::cout << "scored " << dataset.size() << " samples (" << discarded
              << " discarded); wrote " << dir << "/score_table.tsv\n";
    std::fprintf(stderr, "[score] total %.2fs\n", elapsed_s(t0));
}

void cmd_select(const RunConfig& cfg, const std::string& table_path) {
    if (cfg.dataset_path.empty()) {
        throw UsageError("--dataset is required");
    }
    const std::string path =
            table_path.empty() ? cfg.output_dir + "/score_table.tsv" : table_path;
    ScoreTableData table = load_score_table(path);

    auto tokenizer = make_builtin_tokenizer();
    std::vector<Sample> raw = read_samples_jsonl(cfg.dataset_path);
    Dataset dataset = make_dataset(raw, *tokenizer, template_spec_from(cfg));
    check_table_fingerprint(table, dataset.fingerprint());

    const size_t budget = parse_budget(cfg.budget, dataset.size());
    SelectionConfig scfg;
    scfg.budget_b = budget;
    scfg.gamma = cfg.gamma;
    scfg.tie_break = cfg.tie_break;
    scfg.filter_ifd_ge_one = cfg.filter_ifd_ge_one;
    SelectionResult result = hierarchical_select(table.records, scfg);

    fs::create_directories(cfg.output_dir);
    write_selected_jsonl(cfg.output_dir + "/selected.jsonl", result.selected_ids, raw);
    write_audit_csv(cfg.output_dir + "/audit.csv", result.audit);
    print_selection_summary(table.records, result, budget, cfg.gamma, cfg.output_dir);
}

void cmd_baseline(const RunConfig& cfg, const std::string& method_name,
                  const std::string& table_path) {
    const BaselineMethod method = parse_baseline_method(method_name);
    if (cfg.dataset_path.empty()) {
        throw UsageError("--dataset is required");
    }
    auto tokenizer = make_builtin_tokenizer();
    std::vector<Sample> raw = read_samples_jsonl(cfg.dataset_path);
    Dataset dataset = make_dataset(raw, *tokenizer, template_spec_from(cfg));

    std::vector<ScoreRecord> records;
    if (!table_path.empty()) {
        ScoreTableData table = load_score_table(table_path);
        check_table_fingerprint(table, dataset.fingerprint());
        records = std::move(table.records);
    } else if (method == BaselineMethod::ifd_top) {
        throw UsageError("baseline 'ifd_top' needs clean IFD scores; pass --table <score_table>");
    } else {
        records.reserve(dataset.size());
        for (const TokenizedSample& s : dataset.samples) {
            ScoreRecord r;
            r.sample_id = s.id;
            r.L = s.instruction_len();
            r.T = s.response_len();
            records.push_back(std::move(r));
        }
    }

    const size_t budget = parse_budget(cfg.budget, dataset.size());
    SelectionResult result = select_baseline(records, method, budget, cfg.seed);

    fs::create_directories(cfg.output_dir);
    write_selected_jsonl(cfg.output_dir + "/selected.jsonl", result.selected_ids, raw);
    write_audit_csv(cfg.output_dir + "/audit.csv", result.audit);
    std::cout << "baseline '" << baseline_method_name(method) << "': ";
    print_selection_summary(records, result, budget, 1.0, cfg.output_dir);
}

void cmd_stats(const RunConfig& cfg, const std::string& traces_path,
               const std::vector<double>& thresholds, const std::vector<std::string>& series_ids) {
    const std::string path =
            traces_path.empty() ? cfg.output_dir + "/traces.tsv" : traces_path;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("trace dump not found at '" + path +
                        "'; run score with --dump-traces first");
    }

    struct TraceRow {
        std::string id;
        size_t t;
        double logp_cond;
        double logp_uncond;
        double delta;
    };
    std::vector<TraceRow> rows;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#' || line.rfind("id\t", 0) == 0) {
            continue;
        }
        std::vector<std::string> f = split_tabs(line);
        if (f.size() != 5) {
            throw DataError("trace dump line " + std::to_string(line_no) +
                            ": expected 5 columns");
        }
        const std::string ctx = "trace dump line " + std::to_string(line_no);
        rows.push_back(TraceRow{f[0], static_cast<size_t>(parse_u64(f[1], "t")),
                                parse_double(f[2], ctx), parse_double(f[3], ctx),
                                parse_double(f[4], ctx)});
    }
    if (rows.empty()) {
        throw DataError("trace dump has no rows: " + path);
    }

    fs::create_directories(cfg.output_dir);

    double max_abs = 0.0;
    for (const TraceRow& r : rows) {
        max_abs = std::max(max_abs, std::fabs(r.delta));
    }
    const size_t n_bins = 64;
    std::vector<size_t> counts(n_bins, 0);
    const double width = max_abs > 0.0 ? max_abs / static_cast<double>(n_bins) : 1.0;
    for (const TraceRow& r : rows) {
        size_t bin = static_cast<size_t>(std::fabs(r.delta) / width);
        bin = std::min(bin, n_bins - 1);
        ++counts[bin];
    }
    {
        std::ofstream out(cfg.output_dir + "/hist.csv", std::ios::binary);
        if (!out) {
            throw DataError("cannot write histogram: " + cfg.output_dir + "/hist.csv");
        }
        out << "bin_lo,bin_hi,count,fraction,cumulative_fraction\n";
        size_t cumulative = 0;
        for (size_t b = 0; b < n_bins; ++b) {
            cumulative += counts[b];
            out << format_double(static_cast<double>(b) * width) << ','
                << format_double(static_cast<double>(b + 1) * width) << ',' << counts[b] << ','
                << format_double(static_cast<double>(counts[b]) /
                                 static_cast<double>(rows.size()))
                << ','
                << format_double(static_cast<double>(cumulative) /
                                 static_cast<double>(rows.size()))
                << '\n';
        }
    }

    std::vector<double> thr = thresholds.empty() ? std::vector<double>{0.01} : thresholds;
    {
        std::ofstream out(cfg.output_dir + "/thresholds.csv", std::ios::binary);
        if (!out) {
            throw DataError("cannot write thresholds: " + cfg.output_dir + "/thresholds.csv");
        }
        out << "threshold,count_le,fraction_le\n";
        for (double t : thr) {
            size_t count = 0;
            for (const TraceRow& r : rows) {
                if (std::fabs(r.delta) <= t) {
                    ++count;
                }
            }
            const double fraction = static_cast<double>(count) / static_cast<double>(rows.size());
            out << format_double(t) << ',' << count << ',' << format_double(fraction) << '\n';
            std::cout << "fraction of response tokens with |delta| <= " << format_double(t)
                      << ": " << format_double(fraction) << " (" << count << "/" << rows.size()
                      << ")\n";
        }
    }

    if (!series_ids.empty()) {
        std::ofstream out(cfg.output_dir + "/series.csv", std::ios::binary);
        if (!out) {
            throw DataError("cannot write series: " + cfg.output_dir + "/series.csv");
        }
        out << "id,t,logp_cond,logp_uncond,delta\n";
        for (const std::string& id : series_ids) {
            bool found = false;
            for (const TraceRow& r : rows) {
                if (r.id != id) {
                    continue;
                }
                found = true;
                out << csv_escape(r.id) << ',' << r.t << ',' << format_double(r.logp_cond) << ','
                    << format_double(r.logp_uncond) << ',' << format_double(r.delta) << '\n';
            }
            if (!found) {
                throw DataError("no trace rows for sample '" + id + "'");
            }
        }
    }
}

}  // namespace sifd
