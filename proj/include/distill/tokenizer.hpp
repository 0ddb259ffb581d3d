#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace distill {

// Byte-level tokenizer: ids 0..255 are raw bytes, then two specials. Text
// runs need a vocabulary of at least kTextVocabMin so every byte plus both
// specials have an embedding row.
inline constexpr std::int32_t kByteTokens = 256;
inline constexpr std::int32_t kBosId = 256;
inline constexpr std::int32_t kEosId = 257;
inline constexpr std::int32_t kTextVocabMin = 258;

// UTF-8 agnostic: each byte becomes one token, BOS prepended.
inline std::vector<std::int32_t> encode_text(std::string_view text) {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size() + 1);
    ids.push_back(kBosId);
    for (unsigned char byte : text) ids.push_back(static_cast<std::int32_t>(byte));
    return ids;
}

// Inverse of encode_text: specials are dropped, byte ids become bytes.
inline std::string decode_tokens(const std::vector<std::int32_t>& ids) {
    std::string text;
    text.reserve(ids.size());
    for (std::int32_t id : ids) {
        if (id == kBosId || id == kEosId) continue;
        if (id < 0 || id >= kByteTokens)
            throw std::invalid_argument("tokenizer: id " + std::to_string(id) +
                                        " is not a byte token");
        text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return text;
}

} // namespace distill
