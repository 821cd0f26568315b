#include "sifd/corpus.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "sifd/common.hpp"

namespace sifd {

namespace {

bool id_has_control_chars(std::string_view id) {
    for (char c : id) {
        if (c == '\t' || c == '\n' || c == '\r') {
            return true;
        }
    }
    return false;
}

void validate_sample(const Sample& sample, size_t line_no) {
    if (sample.id.empty()) {
        throw DataError("line " + std::to_string(line_no) + ": empty id");
    }
    if (id_has_control_chars(sample.id)) {
        throw DataError("line " + std::to_string(line_no) + ": id '" + sample.id +
                        "' contains tab or newline characters");
    }
    if (sample.response.empty()) {
        throw DataError("empty response in sample '" + sample.id + "' (line " +
                        std::to_string(line_no) + ")");
    }
}

}  // namespace

std::string render_template(const TemplateSpec& tpl, std::string_view instruction) {
    std::string out;
    out.reserve(tpl.text.size() + instruction.size());
    const std::string& t = tpl.text;
    size_t i = 0;
    while (i < t.size()) {
        if (t[i] != '{') {
            out.push_back(t[i]);
            ++i;
            continue;
        }
        size_t close = t.find('}', i);
        if (close == std::string::npos) {
            throw DataError("template has unterminated '{' placeholder: " + t);
        }
        std::string name = t.substr(i + 1, close - i - 1);
        if (name == "instruction") {
            out.append(instruction);
        } else {
            throw DataError("template references undefined placeholder '{" + name + "}'");
        }
        i = close + 1;
    }
    return out;
}

TokenizedSample tokenize_sample(const Sample& sample, const Tokenizer& tokenizer,
                                const TemplateSpec& tpl) {
    TokenizedSample out;
    out.id = sample.id;
    out.instruction = sample.instruction;
    out.response = sample.response;
    out.instr_tokens = tokenizer.encode(render_template(tpl, sample.instruction));
    if (tpl.append_separator) {
        if (tpl.separator_id < 0 || tpl.separator_id >= tokenizer.vocab_size()) {
            throw DataError("separator token id " + std::to_string(tpl.separator_id) +
                            " is outside the tokenizer vocabulary");
        }
        out.instr_tokens.push_back(tpl.separator_id);
    }
    out.resp_tokens = tokenizer.encode(sample.response);
    if (out.resp_tokens.empty()) {
        throw DataError("sample '" + sample.id + "' has a response that tokenizes to zero tokens");
    }
    return out;
}

TokenizedSample apply_prompt_template(const TokenizedSample& sample, const TemplateSpec& tpl,
                                      const Tokenizer& tokenizer) {
    TokenizedSample out = sample;
    out.instr_tokens = tokenizer.encode(render_template(tpl, sample.instruction));
    if (tpl.append_separator) {
        out.instr_tokens.push_back(tpl.separator_id);
    }
    return out;
}

std::vector<Sample> read_samples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file: " + path);
    }
    std::vector<Sample> samples;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("malformed JSON on line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object()) {
            throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");
        }
        Sample s;
        if (obj.contains("id")) {
            if (!obj["id"].is_string()) {
                throw DataError("line " + std::to_string(line_no) + ": \"id\" must be a string");
            }
            s.id = obj["id"].get<std::string>();
        } else {
            s.id = "line-" + std::to_string(line_no);
        }
        for (const char* key : {"instruction", "response"}) {
            if (!obj.contains(key) || !obj[key].is_string()) {
                throw DataError("line " + std::to_string(line_no) + ": missing string field \"" +
                                key + "\"");
            }
        }
        s.instruction = obj["instruction"].get<std::string>();
        s.response = obj["response"].get<std::string>();
        validate_sample(s, line_no);
        if (!seen_ids.insert(s.id).second) {
            throw DataError("duplicate id '" + s.id + "' (line " + std::to_string(line_no) + ")");
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

Dataset make_dataset(std::vector<Sample> samples, const Tokenizer& tokenizer,
                     const TemplateSpec& tpl) {
    Dataset ds;
    ds.tokenizer_fingerprint = tokenizer.fingerprint();
    ds.samples.reserve(samples.size());
    for (const Sample& s : samples) {
        ds.samples.push_back(tokenize_sample(s, tokenizer, tpl));
    }
    return ds;
}

Dataset ingest_jsonl(const std::string& path, const Tokenizer& tokenizer,
                     const TemplateSpec& tpl) {
    return make_dataset(read_samples_jsonl(path), tokenizer, tpl);
}

std::string Dataset::fingerprint() const {
    Fnv1a h;
    h.update(tokenizer_fingerprint);
    h.update_u64(samples.size());
    for (const TokenizedSample& s : samples) {
        h.update(s.id);
        h.update_u64(s.instr_tokens.size());
        for (int32_t t : s.instr_tokens) {
            h.update_i32(t);
        }
        h.update_u64(s.resp_tokens.size());
        for (int32_t t : s.resp_tokens) {
            h.update_i32(t);
        }
    }
    return h.hex();
}

void save_corpus_cache(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write corpus cache: " + path);
    }
    out << "sifd-corpus-cache\tv1\ttokenizer=" << dataset.tokenizer_fingerprint << "\n";
    for (const TokenizedSample& s : dataset.samples) {
        out << s.id << '\t' << s.instr_tokens.size() << '\t' << s.resp_tokens.size() << '\t';
        bool first = true;
        for (const auto* seq : {&s.instr_tokens, &s.resp_tokens}) {
            for (int32_t t : *seq) {
                if (!first) {
                    out << ' ';
                }
                first = false;
                out << t;
            }
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("failed while writing corpus cache: " + path);
    }
}

Dataset load_corpus_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open corpus cache: " + path);
    }
    std::string header;
    if (!std::getline(in, header) || header.rfind("sifd-corpus-cache\tv1\ttokenizer=", 0) != 0) {
        throw DataError("not a corpus cache file: " + path);
    }
    Dataset ds;
    ds.tokenizer_fingerprint = header.substr(std::string("sifd-corpus-cache\tv1\ttokenizer=").size());
    std::string line;
    size_t line_no = 1;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        TokenizedSample s;
        size_t L = 0;
        size_t T = 0;
        std::string token_field;
        if (!std::getline(fields, s.id, '\t') || !(fields >> L) || fields.get() != '\t' ||
            !(fields >> T) || fields.get() != '\t') {
            throw DataError("corpus cache line " + std::to_string(line_no) + " is malformed");
        }
        std::getline(fields, token_field);
        std::istringstream toks(token_field);
        int32_t t;
        while (toks >> t) {
            if (s.instr_tokens.size() < L) {
                s.instr_tokens.push_back(t);
            } else {
                s.resp_tokens.push_back(t);
            }
        }
        if (s.instr_tokens.size() != L || s.resp_tokens.size() != T) {
            throw DataError("corpus cache line " + std::to_string(line_no) +
                            ": token count does not match L/T header");
        }
        if (T == 0) {
            throw DataError("corpus cache line " + std::to_string(line_no) +
                            ": sample '" + s.id + "' has no response tokens");
        }
        if (!seen_ids.insert(s.id).second) {
            throw DataError("corpus cache: duplicate id '" + s.id + "'");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace sifd
