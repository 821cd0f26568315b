#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sifd/corpus.hpp"
#include "sifd/lm.hpp"
#include "sifd/perturbation.hpp"
#include "sifd/scoring.hpp"
#include "sifd/selection.hpp"
#include "sifd/tinylm.hpp"

namespace sifd {

struct RunConfig {
    std::string dataset_path;
    std::string backend = "tinylm";  // "tinylm" or "cache"
    std::string cache_path;
    TinyLMConfig tinylm;
    std::string template_text = "{instruction}";
    bool append_separator = true;
    int32_t separator_id = '\n';
    double k = 75.0;
    double alpha = 5.0;
    size_t M = 30;
    double gamma = 2.0;
    std::string budget;  // absolute count ("500") or percent of the dataset ("5%")
    uint64_t seed = 0;
    std::string output_dir = "sifd-out";
    TieBreak tie_break = TieBreak::clean_score_then_id;
    bool filter_ifd_ge_one = true;
    bool dump_traces = false;
    bool rerank_per_perturbation = false;
    // Execution environment, not science: never serialized, never hashed, so
    // outputs are byte-identical across worker counts and output locations.
    size_t workers = 0;  // 0 = hardware concurrency
};

// key=value text, one pair per line, '#' comments. Unknown keys are errors.
void load_config_file(RunConfig& cfg, const std::string& path);

// The provenance form: every scientific field in fixed order. Its FNV-1a hash
// is the manifest's config_hash.
std::string serialize_config(const RunConfig& cfg);

TemplateSpec template_spec_from(const RunConfig& cfg);
std::unique_ptr<Backend> make_backend(const RunConfig& cfg);

// "500" -> 500; "5%" -> llround(0.05 * dataset_size).
size_t parse_budget(const std::string& budget, size_t dataset_size);

// Runs body(0..n-1) over a shared-counter thread pool. Results must be written
// into per-index slots; the first exception is rethrown after all workers join.
void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& body);

struct ScoreParams {
    double k = 75.0;
    double alpha = 5.0;
    size_t M = 30;
    uint64_t seed = 0;
    bool rerank_per_perturbation = false;
};

struct ScoreOutcome {
    GateThreshold gate;
    std::vector<ScoreRecord> records;               // dataset order
    std::vector<std::optional<DeltaTrace>> traces;  // absent for backend-error samples
    std::vector<std::string> errors;                // per-sample backend error text
    std::vector<GateThreshold> rerank_gates;        // one per perturbation in re-rank mode
};

ScoreOutcome run_scoring(const Dataset& dataset, const Backend& backend, const ScoreParams& params,
                         size_t workers);

struct ScoreTableData {
    std::map<std::string, std::string> meta;
    std::vector<ScoreRecord> records;
};

void write_score_table(const std::string& path, const ScoreTableData& table);
ScoreTableData load_score_table(const std::string& path);

void write_gate_report(const std::string& path, const GateThreshold& gate,
                       const std::vector<GateThreshold>& rerank_gates);
void write_traces(const std::string& path, const std::string& dataset_fingerprint,
                  const std::vector<std::optional<DeltaTrace>>& traces);
void write_manifest(const std::string& path, const RunConfig& cfg,
                    const std::string& dataset_fingerprint, const std::string& backend_name,
                    const std::string& tokenizer_fingerprint, size_t n_samples);

// Subcommand bodies. They throw Usage/Data/BackendError; the CLI maps those
// onto exit codes 1/2/3.
void cmd_score(const RunConfig& cfg);
void cmd_select(const RunConfig& cfg, const std::string& table_path);
void cmd_baseline(const RunConfig& cfg, const std::string& method,
                  const std::string& table_path);
void cmd_stats(const RunConfig& cfg, const std::string& traces_path,
               const std::vector<double>& thresholds, const std::vector<std::string>& series_ids);

}  // namespace sifd
