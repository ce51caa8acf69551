#include "rlt/vocab.hpp"

#include <algorithm>
#include <sstream>

#include "rlt/errors.hpp"

namespace rlt {

std::string vocabulary_listing() {
  std::string out;
  for (std::size_t i = 1; i < kVocabulary.size(); ++i) {
    if (i > 1) out += ", ";
    out += kVocabulary[i];
  }
  return out;
}

int token_id(std::string_view word) {
  auto it = std::find(kVocabulary.begin(), kVocabulary.end(), word);
  if (it == kVocabulary.end()) {
    throw VocabError("unknown word '" + std::string(word) + "'; vocabulary: " + vocabulary_listing());
  }
  return static_cast<int>(it - kVocabulary.begin());
}

std::vector<int> encode_prompt(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::vector<int> ids;
  std::string word;
  while (is >> word) ids.push_back(token_id(word));
  if (ids.empty()) ids.push_back(kNullToken);
  return ids;
}

std::string decode_prompt(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= kVocabulary.size()) {
      throw VocabError("token id " + std::to_string(t) + " outside vocabulary");
    }
    if (!out.empty()) out += ' ';
    out += kVocabulary[static_cast<std::size_t>(t)];
  }
  return out;
}

}  // namespace rlt
