#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sifd/common.hpp"
#include "sifd/pipeline.hpp"
#include "sifd/selection.hpp"

namespace {

using sifd::RunConfig;

// Flags override config-file values, which override defaults. The only
// environment variable consulted is SIFD_OUTPUT_DIR, and an explicit
// --output-dir flag still beats it.
struct CommonArgs {
    std::string config_path;
    std::string dataset;
    std::string backend;
    std::string cache;
    std::string template_text;
    bool append_separator = true;
    int separator_id = 0;
    std::string output_dir;
    uint64_t seed = 0;

    void register_on(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file; flags override it");
        cmd->add_option("--dataset", dataset, "instruction dataset (jsonl)");
        cmd->add_option("--backend", backend, "model backend: tinylm or cache");
        cmd->add_option("--cache", cache, "log-prob cache file (for --backend cache)");
        cmd->add_option("--template", template_text, "prompt template containing {instruction}");
        cmd->add_option("--append-separator", append_separator,
                        "append a separator token after the rendered instruction");
        cmd->add_option("--separator-id", separator_id, "separator token id");
        cmd->add_option("--output-dir,-o", output_dir,
                        "output directory (SIFD_OUTPUT_DIR overrides the default)");
        cmd->add_option("--seed", seed, "run seed");
    }

    void apply(const CLI::App& cmd, RunConfig& cfg) const {
        if (!config_path.empty()) {
            sifd::load_config_file(cfg, config_path);
        }
        if (cmd.count("--dataset")) cfg.dataset_path = dataset;
        if (cmd.count("--backend")) cfg.backend = backend;
        if (cmd.count("--cache")) cfg.cache_path = cache;
        if (cmd.count("--template")) cfg.template_text = template_text;
        if (cmd.count("--append-separator")) cfg.append_separator = append_separator;
        if (cmd.count("--separator-id")) cfg.separator_id = separator_id;
        if (cmd.count("--seed")) cfg.seed = seed;
        if (cmd.count("--output-dir")) {
            cfg.output_dir = output_dir;
        } else if (const char* env = std::getenv("SIFD_OUTPUT_DIR")) {
            cfg.output_dir = env;
        }
    }
};

struct ScoreArgs : CommonArgs {
    double k = 0.0;
    double alpha = 0.0;
    size_t perturbations = 0;
    size_t workers = 0;
    bool dump_traces = false;
    bool rerank = false;
    int tinylm_vocab = 0;
    size_t tinylm_dim = 0;
    size_t tinylm_layers = 0;
    size_t tinylm_heads = 0;
    size_t tinylm_context = 0;
    uint64_t tinylm_weight_seed = 0;

    void register_on(CLI::App* cmd) {
        CommonArgs::register_on(cmd);
        cmd->add_option("--k", k, "token ratio in (0, 100]: the share of dataset tokens gated in");
        cmd->add_option("--alpha", alpha, "embedding noise scale (0 disables displacement)");
        cmd->add_option("--perturbations,-M", perturbations,
                        "perturbed passes per sample (0 = clean scores only)");
        cmd->add_option("--workers,-j", workers, "worker threads (0 = hardware concurrency)");
        cmd->add_flag("--dump-traces,!--no-dump-traces", dump_traces,
                      "write per-token log-prob traces (needed by stats)");
        cmd->add_flag("--rerank-per-perturbation,!--no-rerank-per-perturbation", rerank,
                      "recompute the token gate inside each perturbed pass");
        cmd->add_option("--tinylm-vocab", tinylm_vocab, "tinylm vocabulary size");
        cmd->add_option("--tinylm-dim", tinylm_dim, "tinylm model width");
        cmd->add_option("--tinylm-layers", tinylm_layers, "tinylm layer count");
        cmd->add_option("--tinylm-heads", tinylm_heads, "tinylm attention heads");
        cmd->add_option("--tinylm-context", tinylm_context, "tinylm context cap");
        cmd->add_option("--tinylm-weight-seed", tinylm_weight_seed, "tinylm weight seed");
    }

    void apply(const CLI::App& cmd, RunConfig& cfg) const {
        CommonArgs::apply(cmd, cfg);
        if (cmd.count("--k")) cfg.k = k;
        if (cmd.count("--alpha")) cfg.alpha = alpha;
        if (cmd.count("--perturbations")) cfg.M = perturbations;
        if (cmd.count("--workers")) cfg.workers = workers;
        if (cmd.count("--dump-traces")) cfg.dump_traces = dump_traces;
        if (cmd.count("--rerank-per-perturbation")) cfg.rerank_per_perturbation = rerank;
        if (cmd.count("--tinylm-vocab")) cfg.tinylm.vocab_size = tinylm_vocab;
        if (cmd.count("--tinylm-dim")) cfg.tinylm.d_model = tinylm_dim;
        if (cmd.count("--tinylm-layers")) cfg.tinylm.n_layers = tinylm_layers;
        if (cmd.count("--tinylm-heads")) cfg.tinylm.n_heads = tinylm_heads;
        if (cmd.count("--tinylm-context")) cfg.tinylm.context_cap = tinylm_context;
        if (cmd.count("--tinylm-weight-seed")) cfg.tinylm.weight_seed = tinylm_weight_seed;
    }
};

struct SelectArgs : CommonArgs {
    std::string table;
    std::string budget;
    double gamma = 0.0;
    std::string tie_break;
    bool filter_high = true;

    void register_on(CLI::App* cmd) {
        CommonArgs::register_on(cmd);
        cmd->add_option("--table", table, "score table (default <output-dir>/score_table.tsv)");
        cmd->add_option("--budget", budget, "samples to keep: a count or a percentage like 5%");
        cmd->add_option("--gamma", gamma, "stage-1 widening factor (>= 1)");
        cmd->add_option("--tie-break", tie_break, "tie policy: clean_score_then_id or mu_then_id");
        cmd->add_flag("--filter-high-scores,!--no-filter-high-scores", filter_high,
                      "drop samples whose clean score is >= 1 before selection");
    }

    void apply(const CLI::App& cmd, RunConfig& cfg) const {
        CommonArgs::apply(cmd, cfg);
        if (cmd.count("--budget")) cfg.budget = budget;
        if (cmd.count("--gamma")) cfg.gamma = gamma;
        if (cmd.count("--tie-break")) cfg.tie_break = sifd::parse_tie_break(tie_break);
        if (cmd.count("--filter-high-scores")) cfg.filter_ifd_ge_one = filter_high;
    }
};

struct BaselineArgs : CommonArgs {
    std::string method;
    std::string table;
    std::string budget;

    void register_on(CLI::App* cmd) {
        CommonArgs::register_on(cmd);
        cmd->add_option("method", method, "random | longest | ifd_top")->required();
        cmd->add_option("--table", table, "score table (required for ifd_top)");
        cmd->add_option("--budget", budget, "samples to keep: a count or a percentage like 5%");
    }

    void apply(const CLI::App& cmd, RunConfig& cfg) const {
        CommonArgs::apply(cmd, cfg);
        if (cmd.count("--budget")) cfg.budget = budget;
    }
};

struct StatsArgs {
    std::string config_path;
    std::string traces;
    std::string output_dir;
    std::vector<double> thresholds;
    std::vector<std::string> series;

    void register_on(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file; flags override it");
        cmd->add_option("--traces", traces, "trace dump (default <output-dir>/traces.tsv)");
        cmd->add_option("--output-dir,-o", output_dir,
                        "output directory (SIFD_OUTPUT_DIR overrides the default)");
        cmd->add_option("--threshold", thresholds,
                        "report the fraction of tokens with |delta| <= this (default 0.01)");
        cmd->add_option("--series", series, "dump the per-token series for this sample id");
    }

    void apply(const CLI::App& cmd, RunConfig& cfg) const {
        if (!config_path.empty()) {
            sifd::load_config_file(cfg, config_path);
        }
        if (cmd.count("--output-dir")) {
            cfg.output_dir = output_dir;
        } else if (const char* env = std::getenv("SIFD_OUTPUT_DIR")) {
            cfg.output_dir = env;
        }
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gated difficulty scoring and noise-robust subset selection for instruction "
                 "tuning data"};
    app.set_version_flag("--version", sifd::kToolVersion);
    app.require_subcommand(1);

    CLI::App* score_cmd =
            app.add_subcommand("score", "compute clean scores and perturbed-neighborhood stats");
    score_cmd->alias("perturb-score");
    ScoreArgs score_args;
    score_args.register_on(score_cmd);

    CLI::App* select_cmd =
            app.add_subcommand("select", "hierarchical subset selection from a score table");
    SelectArgs select_args;
    select_args.register_on(select_cmd);

    CLI::App* baseline_cmd = app.add_subcommand("baseline", "baseline selection strategies");
    BaselineArgs baseline_args;
    baseline_args.register_on(baseline_cmd);

    CLI::App* stats_cmd = app.add_subcommand("stats", "summarize a per-token trace dump");
    StatsArgs stats_args;
    stats_args.register_on(stats_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg;
        if (score_cmd->parsed()) {
            score_args.apply(*score_cmd, cfg);
            sifd::cmd_score(cfg);
        } else if (select_cmd->parsed()) {
            select_args.apply(*select_cmd, cfg);
            sifd::cmd_select(cfg, select_args.table);
        } else if (baseline_cmd->parsed()) {
            baseline_args.apply(*baseline_cmd, cfg);
            sifd::cmd_baseline(cfg, baseline_args.method, baseline_args.table);
        } else if (stats_cmd->parsed()) {
            stats_args.apply(*stats_cmd, cfg);
            sifd::cmd_stats(cfg, stats_args.traces, stats_args.thresholds, stats_args.series);
        }
    } catch (const sifd::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const sifd::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const sifd::BackendError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
