#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sifd/lm.hpp"

namespace sifd {

// Read-only backend over log-probs computed offline by an external model.
// No embedding access: perturbation operations must reject this backend.
class LogProbCache final : public Backend {
public:
    static LogProbCache load(const std::string& path);

    std::string name() const override { return "cache:" + model_name_; }
    std::string tokenizer_fingerprint() const override { return tokenizer_fp_; }
    bool has_embeddings() const override { return false; }

    LogProbVector conditional_logprobs(const TokenizedSample& sample) const override;
    LogProbVector unconditional_logprobs(const TokenizedSample& sample) const override;

    // Stored vector verbatim; throws if the sample or pass is missing.
    const LogProbVector& lookup(const std::string& id, PassKind kind) const;

    size_t sample_count() const { return entries_.size(); }
    const std::string& model_name() const { return model_name_; }

private:
    struct Entry {
        LogProbVector cond;
        LogProbVector uncond;
        bool has_cond = false;
        bool has_uncond = false;
    };

    std::string model_name_;
    std::string tokenizer_fp_;
    std::unordered_map<std::string, Entry> entries_;
};

struct CachedSample {
    std::string id;
    LogProbVector cond;
    LogProbVector uncond;
};

// Writes the exporter format LogProbCache::load reads. Doubles are rendered
// with shortest round-trip precision, so reload is bit-exact.
void write_logprob_cache(const std::string& path, const std::string& model_name,
                         const std::string& tokenizer_fp, const std::vector<CachedSample>& rows);

}  // namespace sifd
