#include "sifd/logprob_cache.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sifd/common.hpp"

namespace sifd {

namespace {

constexpr char kHeaderPrefix[] = "sifd-logprob-cache\tv1\tmodel=";

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

}  // namespace

LogProbCache LogProbCache::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open log-prob cache: " + path);
    }
    std::string header;
    if (!std::getline(in, header)) {
        throw DataError("log-prob cache is empty: " + path);
    }
    std::vector<std::string> head_fields = split_tabs(header);
    if (head_fields.size() != 4 || head_fields[0] != "sifd-logprob-cache" ||
        head_fields[1] != "v1" || head_fields[2].rfind("model=", 0) != 0 ||
        head_fields[3].rfind("tokenizer=", 0) != 0) {
        throw DataError("not a log-prob cache file (bad header): " + path);
    }
    LogProbCache cache;
    cache.model_name_ = head_fields[2].substr(6);
    cache.tokenizer_fp_ = head_fields[3].substr(10);

    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields = split_tabs(line);
        if (fields.size() != 4) {
            throw DataError("log-prob cache line " + std::to_string(line_no) +
                            ": expected 4 tab-separated fields, got " +
                            std::to_string(fields.size()));
        }
        const std::string& id = fields[0];
        PassKind kind = parse_pass_kind(fields[1]);
        size_t expected = 0;
        try {
            expected = static_cast<size_t>(std::stoull(fields[2]));
        } catch (const std::exception&) {
            throw DataError("log-prob cache line " + std::to_string(line_no) +
                            ": bad token count '" + fields[2] + "'");
        }
        LogProbVector values;
        values.reserve(expected);
        std::istringstream nums(fields[3]);
        std::string tok;
        while (nums >> tok) {
            double v = parse_double(tok, "log-prob cache line " + std::to_string(line_no));
            if (!std::isfinite(v) || v > 0.0) {
                throw DataError("log-prob cache line " + std::to_string(line_no) +
                                ": log-prob " + tok + " is not a finite value <= 0");
            }
            values.push_back(v);
        }
        if (values.size() != expected) {
            throw DataError("log-prob cache line " + std::to_string(line_no) + ": declared " +
                            fields[2] + " values but found " + std::to_string(values.size()));
        }
        Entry& entry = cache.entries_[id];
        bool& present = kind == PassKind::conditional ? entry.has_cond : entry.has_uncond;
        if (present) {
            throw DataError("log-prob cache line " + std::to_string(line_no) + ": duplicate " +
                            fields[1] + " record for sample '" + id + "'");
        }
        present = true;
        (kind == PassKind::conditional ? entry.cond : entry.uncond) = std::move(values);
    }
    return cache;
}

const LogProbVector& LogProbCache::lookup(const std::string& id, PassKind kind) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
        throw BackendError("log-prob cache has no records for sample '" + id + "'");
    }
    const Entry& entry = it->second;
    bool present = kind == PassKind::conditional ? entry.has_cond : entry.has_uncond;
    if (!present) {
        throw BackendError("log-prob cache has no " + std::string(pass_kind_name(kind)) +
                           " record for sample '" + id + "'");
    }
    return kind == PassKind::conditional ? entry.cond : entry.uncond;
}

LogProbVector LogProbCache::conditional_logprobs(const TokenizedSample& sample) const {
    const LogProbVector& stored = lookup(sample.id, PassKind::conditional);
    if (stored.size() != sample.response_len()) {
        throw BackendError("length mismatch for sample '" + sample.id + "': cache has " +
                           std::to_string(stored.size()) + " conditional log-probs, response has " +
                           std::to_string(sample.response_len()) + " tokens");
    }
    return stored;
}

LogProbVector LogProbCache::unconditional_logprobs(const TokenizedSample& sample) const {
    const LogProbVector& stored = lookup(sample.id, PassKind::unconditional);
    if (stored.size() != sample.response_len()) {
        throw BackendError("length mismatch for sample '" + sample.id + "': cache has " +
                           std::to_string(stored.size()) +
                           " unconditional log-probs, response has " +
                           std::to_string(sample.response_len()) + " tokens");
    }
    return stored;
}

void write_logprob_cache(const std::string& path, const std::string& model_name,
                         const std::string& tokenizer_fp, const std::vector<CachedSample>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write log-prob cache: " + path);
    }
    out << kHeaderPrefix << model_name << "\ttokenizer=" << tokenizer_fp << "\n";
    for (const CachedSample& row : rows) {
        for (PassKind kind : {PassKind::conditional, PassKind::unconditional}) {
            const LogProbVector& values = kind == PassKind::conditional ? row.cond : row.uncond;
            out << row.id << '\t' << pass_kind_name(kind) << '\t' << values.size() << '\t';
            for (size_t i = 0; i < values.size(); ++i) {
                if (i > 0) {
                    out << ' ';
                }
                out << format_double(values[i]);
            }
            out << '\n';
        }
    }
    if (!out) {
        throw DataError("failed while writing log-prob cache: " + path);
    }
}

}  // namespace sifd
