#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rlt {

// Token 0 is the null prompt used for the unconditional branch of guidance.
inline constexpr std::array<std::string_view, 12> kVocabulary = {
    "<null>", "circle",  "square", "triangle", "cross", "approach",
    "separate", "orbit", "follow", "collide",  "and",   "with"};
inline constexpr int kNullToken = 0;

int token_id(std::string_view word);
// Whitespace-separated words to ids; unknown words raise VocabError listing the vocabulary.
std::vector<int> encode_prompt(std::string_view text);
std::string decode_prompt(std::span<const int> tokens);
std::string vocabulary_listing();

}  // namespace rlt
