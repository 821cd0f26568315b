#pragma once

// Dataset ingestion: JSONL in, tokenized samples out, plus a line-oriented
// cache format so tokenized corpora reload bit-identically.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sifd/tokenizer.hpp"

namespace sifd {

// One instruction-response pair in raw form.
struct Sample {
    std::string id;
    std::string instruction;
    std::string response;
};

// Tokenized form. instr_tokens is the rendered conditioning side (template
// plus optional separator), so its length is the L that enters the noise
// scale; resp_tokens length is T.
struct TokenizedSample {
    std::string id;
    std::string instruction;  // raw text, kept for re-templating
    std::string response;
    std::vector<int32_t> instr_tokens;
    std::vector<int32_t> resp_tokens;

    size_t instruction_len() const { return instr_tokens.size(); }
    size_t response_len() const { return resp_tokens.size(); }
};

// Conditioning-side prompt template. `text` may reference {instruction};
// the rendered string is tokenized and, when append_separator is set, a
// single separator token is appended. All of it counts toward L.
struct TemplateSpec {
    std::string text = "{instruction}";
    bool append_separator = true;
    int32_t separator_id = '\n';

    static TemplateSpec plain_concat() { return TemplateSpec{}; }
    static TemplateSpec identity() { return TemplateSpec{"{instruction}", false, '\n'}; }
};

struct Dataset {
    std::vector<TokenizedSample> samples;
    std::string tokenizer_fingerprint;

    size_t size() const { return samples.size(); }
    // Hash over (tokenizer fingerprint, ids, token sequences). Raw text is
    // deliberately excluded so a reloaded token cache fingerprints the same.
    std::string fingerprint() const;
};

std::string render_template(const TemplateSpec& tpl, std::string_view instruction);

TokenizedSample tokenize_sample(const Sample& sample, const Tokenizer& tokenizer,
                                const TemplateSpec& tpl);

// Re-render the conditioning side of an already tokenized sample.
TokenizedSample apply_prompt_template(const TokenizedSample& sample, const TemplateSpec& tpl,
                                      const Tokenizer& tokenizer);

// Raw JSONL reader: one object per line with keys "id" (optional),
// "instruction", "response". Missing ids become "line-<n>" (1-based file
// line). Rejects empty responses, empty/duplicate ids, and ids containing
// tabs or newlines (they would break the line-oriented file formats).
std::vector<Sample> read_samples_jsonl(const std::string& path);

Dataset ingest_jsonl(const std::string& path, const Tokenizer& tokenizer,
                     const TemplateSpec& tpl = TemplateSpec::plain_concat());

Dataset make_dataset(std::vector<Sample> samples, const Tokenizer& tokenizer,
                     const TemplateSpec& tpl = TemplateSpec::plain_concat());

// Tokenized-corpus cache. Header carries the tokenizer fingerprint; each
// line is `id \t L \t T \t space-separated token ids` (instruction tokens
// first). Raw text is not stored.
void save_corpus_cache(const Dataset& dataset, const std::string& path);
Dataset load_corpus_cache(const std::string& path);

}  // namespace sifd
