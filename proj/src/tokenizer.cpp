#include "sifd/tokenizer.hpp"

#include <cctype>

namespace sifd {

std::vector<int32_t> WhitespaceByteTokenizer::encode(std::string_view text) const {
    std::vector<int32_t> out;
    out.reserve(text.size());
    bool in_word = false;
    bool any_word = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            in_word = false;
            continue;
        }
        if (!in_word && any_word) {
            out.push_back(' ');
        }
        in_word = true;
        any_word = true;
        out.push_back(static_cast<int32_t>(c));
    }
    return out;
}

std::shared_ptr<const Tokenizer> make_builtin_tokenizer() {
    return std::make_shared<WhitespaceByteTokenizer>();
}

}  // namespace sifd
