#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace sifd {

// Tokenization contract. The scoring math is tokenizer-agnostic; anything
// that can turn text into ids below the backend's vocab works. The
// fingerprint ties corpora, caches and score tables to the tokenizer that
// produced them.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<int32_t> encode(std::string_view text) const = 0;
    virtual int32_t vocab_size() const = 0;
    virtual std::string fingerprint() const = 0;
};

// Built-in hermetic tokenizer: splits on whitespace, every word falls back
// to its UTF-8 bytes (id == byte value), words joined by a single space
// token. Runs of whitespace collapse, so "a  b" and "a b" tokenize alike.
// Vocab is exactly 256, matching the default TinyLM configuration.
class WhitespaceByteTokenizer final : public Tokenizer {
public:
    std::vector<int32_t> encode(std::string_view text) const override;
    int32_t vocab_size() const override { return 256; }
    std::string fingerprint() const override { return "ws-byte/v1/vocab256"; }
};

std::shared_ptr<const Tokenizer> make_builtin_tokenizer();

}  // namespace sifd
