#include "sifd/selection.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "sifd/common.hpp"

namespace sifd {

namespace {

// gamma*b rounded up, with values within 1e-9 of an integer treated as that
// integer so 1.1 * 10 does not become 12 through binary rounding.
size_t stage1_count(double gamma, size_t budget) {
    const double gb = gamma * static_cast<double>(budget);
    const double nearest = std::nearbyint(gb);
    if (std::fabs(gb - nearest) < 1e-9) {
        return static_cast<size_t>(nearest);
    }
    return static_cast<size_t>(std::ceil(gb));
}

bool is_eligible(const ScoreRecord& r, bool filter_ifd_ge_one) {
    if (r.reason == DiscardReason::backend_error ||
        r.reason == DiscardReason::no_selected_tokens) {
        return false;
    }
    if (r.reason == DiscardReason::ifd_ge_one && filter_ifd_ge_one) {
        return false;
    }
    return r.sifd.has_value();
}

void check_unique_ids(const std::vector<ScoreRecord>& records) {
    std::unordered_set<std::string> seen;
    seen.reserve(records.size());
    for (const ScoreRecord& r : records) {
        if (!seen.insert(r.sample_id).second) {
            throw DataError("score table contains duplicate id '" + r.sample_id + "'");
        }
    }
}

// Tie chain shared by both stages, applied when the primary key is equal.
bool tie_before(const ScoreRecord& a, const ScoreRecord& b, TieBreak tb) {
    if (tb == TieBreak::clean_score_then_id) {
        if (*a.sifd != *b.sifd) {
            return *a.sifd > *b.sifd;
        }
    } else {
        if (*a.mu_hat != *b.mu_hat) {
            return *a.mu_hat > *b.mu_hat;
        }
    }
    return a.sample_id < b.sample_id;
}

std::vector<AuditRow> audit_skeleton(const std::vector<ScoreRecord>& records,
                                     const std::vector<char>& eligible) {
    std::vector<AuditRow> audit;
    audit.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        AuditRow row;
        row.sample_id = records[i].sample_id;
        row.mu_hat = records[i].mu_hat;
        row.sigma2_hat = records[i].sigma2_hat;
        row.eligible = eligible[i] != 0;
        row.reason = records[i].reason;
        audit.push_back(std::move(row));
    }
    return audit;
}

}  // namespace

const char* tie_break_name(TieBreak tb) {
    return tb == TieBreak::clean_score_then_id ? "clean_score_then_id" : "mu_then_id";
}

TieBreak parse_tie_break(const std::string& name) {
    if (name == "clean_score_then_id") {
        return TieBreak::clean_score_then_id;
    }
    if (name == "mu_then_id") {
        return TieBreak::mu_then_id;
    }
    throw UsageError("unknown tie-break policy '" + name +
                     "' (expected clean_score_then_id or mu_then_id)");
}

const char* baseline_method_name(BaselineMethod method) {
    switch (method) {
        case BaselineMethod::random:
            return "random";
        case BaselineMethod::longest:
            return "longest";
        case BaselineMethod::ifd_top:
            return "ifd_top";
    }
    return "random";
}

BaselineMethod parse_baseline_method(const std::string& name) {
    if (name == "random") {
        return BaselineMethod::random;
    }
    if (name == "longest") {
        return BaselineMethod::longest;
    }
    if (name == "ifd_top") {
        return BaselineMethod::ifd_top;
    }
    throw UsageError("unknown baseline method '" + name +
                     "' (expected random, longest, or ifd_top)");
}

SelectionResult hierarchical_select(const std::vector<ScoreRecord>& records,
                                    const SelectionConfig& cfg) {
    if (cfg.budget_b == 0) {
        throw UsageError("selection budget must be positive");
    }
    if (cfg.gamma < 1.0) {
        throw UsageError("oversampling factor gamma must be at least 1");
    }
    check_unique_ids(records);

    std::vector<char> eligible(records.size(), 0);
    std::vector<size_t> pool;
    for (size_t i = 0; i < records.size(); ++i) {
        if (!is_eligible(records[i], cfg.filter_ifd_ge_one)) {
            continue;
        }
        const ScoreRecord& r = records[i];
        if (!r.mu_hat.has_value() || !r.sigma2_hat.has_value()) {
            throw UsageError("record '" + r.sample_id +
                             "' has no neighborhood statistics; score the dataset with M >= 1 "
                             "or use the ifd_top baseline");
        }
        eligible[i] = 1;
        pool.push_back(i);
    }

    const size_t n1 = stage1_count(cfg.gamma, cfg.budget_b);
    if (n1 > pool.size()) {
        throw DataError("insufficient eligible samples: stage 1 needs " + std::to_string(n1) +
                        " (budget " + std::to_string(cfg.budget_b) + ", gamma " +
                        format_double(cfg.gamma) + ") but only " + std::to_string(pool.size()) +
                        " are eligible");
    }

    std::sort(pool.begin(), pool.end(), [&](size_t ia, size_t ib) {
        const ScoreRecord& a = records[ia];
        const ScoreRecord& b = records[ib];
        if (*a.mu_hat != *b.mu_hat) {
            return *a.mu_hat > *b.mu_hat;
        }
        return tie_before(a, b, cfg.tie_break);
    });
    std::vector<size_t> stage1(pool.begin(), pool.begin() + n1);

    std::vector<size_t> stage2 = stage1;
    std::sort(stage2.begin(), stage2.end(), [&](size_t ia, size_t ib) {
        const ScoreRecord& a = records[ia];
        const ScoreRecord& b = records[ib];
        if (*a.sigma2_hat != *b.sigma2_hat) {
            return *a.sigma2_hat < *b.sigma2_hat;
        }
        return tie_before(a, b, cfg.tie_break);
    });
    stage2.resize(cfg.budget_b);

    SelectionResult result;
    result.eligible_count = pool.size();
    result.audit = audit_skeleton(records, eligible);
    result.stage1_ids.reserve(n1);
    for (size_t rank = 0; rank < stage1.size(); ++rank) {
        result.stage1_ids.push_back(records[stage1[rank]].sample_id);
        result.audit[stage1[rank]].stage1_rank = rank + 1;
    }
    result.selected_ids.reserve(cfg.budget_b);
    for (size_t rank = 0; rank < stage2.size(); ++rank) {
        result.selected_ids.push_back(records[stage2[rank]].sample_id);
        result.audit[stage2[rank]].stage2_rank = rank + 1;
    }
    return result;
}

SelectionResult select_baseline(const std::vector<ScoreRecord>& records, BaselineMethod method,
                                size_t budget_b, uint64_t seed) {
    if (budget_b == 0) {
        throw UsageError("selection budget must be positive");
    }
    check_unique_ids(records);

    std::vector<char> eligible(records.size(), 0);
    std::vector<size_t> pool;
    for (size_t i = 0; i < records.size(); ++i) {
        if (method == BaselineMethod::ifd_top) {
            if (!records[i].ifd.has_value() || *records[i].ifd >= 1.0) {
                continue;
            }
        }
        eligible[i] = 1;
        pool.push_back(i);
    }
    if (budget_b > pool.size()) {
        throw DataError("budget " + std::to_string(budget_b) + " exceeds the " +
                        std::to_string(pool.size()) + " samples available to baseline '" +
                        baseline_method_name(method) + "'");
    }

    switch (method) {
        case BaselineMethod::random: {
            // Order-independent: fix a canonical order first, then shuffle.
            std::sort(pool.begin(), pool.end(), [&](size_t ia, size_t ib) {
                return records[ia].sample_id < records[ib].sample_id;
            });
            SplitMix rng(mix64(seed ^ 0x52414E444F4D2121ull));
            for (size_t i = pool.size(); i > 1; --i) {
                const size_t j = static_cast<size_t>(rng.next_below(i));
                std::swap(pool[i - 1], pool[j]);
            }
            break;
        }
        case BaselineMethod::longest:
            std::sort(pool.begin(), pool.end(), [&](size_t ia, size_t ib) {
                if (records[ia].T != records[ib].T) {
                    return records[ia].T > records[ib].T;
                }
                return records[ia].sample_id < records[ib].sample_id;
            });
            break;
        case BaselineMethod::ifd_top:
            std::sort(pool.begin(), pool.end(), [&](size_t ia, size_t ib) {
                if (*records[ia].ifd != *records[ib].ifd) {
                    return *records[ia].ifd > *records[ib].ifd;
                }
                return records[ia].sample_id < records[ib].sample_id;
            });
            break;
    }

    SelectionResult result;
    result.eligible_count = pool.size();
    result.audit = audit_skeleton(records, eligible);
    result.selected_ids.reserve(budget_b);
    for (size_t rank = 0; rank < budget_b; ++rank) {
        const size_t idx = pool[rank];
        result.selected_ids.push_back(records[idx].sample_id);
        result.audit[idx].stage1_rank = rank + 1;
        result.audit[idx].stage2_rank = rank + 1;
    }
    result.stage1_ids = result.selected_ids;
    return result;
}

}  // namespace sifd
