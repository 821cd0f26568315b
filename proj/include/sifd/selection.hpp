#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sifd/scoring.hpp"

namespace sifd {

// Tie chain applied after each stage's primary key; the final key is always
// the sample id ascending, so every ordering is total and position-free.
enum class TieBreak {
    clean_score_then_id,  // secondary: clean S-IFD descending
    mu_then_id,           // secondary: mu_hat descending
};

const char* tie_break_name(TieBreak tb);
TieBreak parse_tie_break(const std::string& name);

struct SelectionConfig {
    size_t budget_b = 0;
    double gamma = 2.0;
    TieBreak tie_break = TieBreak::clean_score_then_id;
    bool filter_ifd_ge_one = true;
};

struct AuditRow {
    std::string sample_id;
    std::optional<double> mu_hat;
    std::optional<double> sigma2_hat;
    bool eligible = false;
    DiscardReason reason = DiscardReason::none;
    size_t stage1_rank = 0;  // 1-based; 0 = not in the stage-1 set
    size_t stage2_rank = 0;  // 1-based; 0 = not selected
};

struct SelectionResult {
    std::vector<std::string> selected_ids;  // final rank order, size b
    std::vector<std::string> stage1_ids;    // stage-1 rank order, size ceil(gamma*b)
    std::vector<AuditRow> audit;            // one row per input record, table order
    size_t eligible_count = 0;
};

// Stage 1: the ceil(gamma*b) eligible records with highest mu_hat.
// Stage 2: the b of those with lowest sigma2_hat.
SelectionResult hierarchical_select(const std::vector<ScoreRecord>& records,
                                    const SelectionConfig& cfg);

enum class BaselineMethod { random, longest, ifd_top };

const char* baseline_method_name(BaselineMethod method);
BaselineMethod parse_baseline_method(const std::string& name);

// random: seeded uniform choice over all records (order-independent).
// longest: highest response token count T.
// ifd_top: highest clean IFD among records with IFD < 1.
SelectionResult select_baseline(const std::vector<ScoreRecord>& records, BaselineMethod method,
                                size_t budget_b, uint64_t seed);

}  // namespace sifd
