#include "spontts/labels.hpp"

#include <string>

#include "spontts/util.hpp"

namespace spontts::labels {

int combine(BehaviorFlags flags) {
  return (flags.filled_pause ? 1 : 0) + (flags.prolongation ? 2 : 0);
}

BehaviorFlags decompose(int label_class) {
  if (label_class < 0 || label_class >= kNumClasses)
    throw ValidationError("label class out of range: " + std::to_string(label_class));
  return {.filled_pause = (label_class & 1) != 0,
          .prolongation = (label_class & 2) != 0};
}

PhonemeLabelSeq expand_char_to_phoneme(const CharLabelSeq& chars,
                                       const std::vector<int>& grouping) {
  if (chars.size() != grouping.size())
    throw ValidationError("label/grouping length mismatch: " +
                          std::to_string(chars.size()) + " vs " +
                          std::to_string(grouping.size()));
  PhonemeLabelSeq out;
  for (std::size_t k = 0; k < chars.size(); ++k) {
    if (grouping[k] <= 0) throw ValidationError("grouping entries must be positive");
    if (chars[k] < 0 || chars[k] >= kNumClasses)
      throw ValidationError("label class out of range: " + std::to_string(chars[k]));
    for (int j = 0; j < grouping[k] - 1; ++j) out.push_back(0);
    out.push_back(chars[k]);
  }
  return out;
}

CharLabelSeq contract_phoneme_to_char(const PhonemeLabelSeq& phones,
                                      const std::vector<int>& grouping) {
  std::size_t total = 0;
  for (int g : grouping) {
    if (g <= 0) throw ValidationError("grouping entries must be positive");
    total += static_cast<std::size_t>(g);
  }
  if (phones.size() != total)
    throw ValidationError("phoneme label length does not match grouping sum");
  CharLabelSeq out;
  std::size_t pos = 0;
  for (int g : grouping) {
    for (int j = 0; j < g - 1; ++j) {
      if (phones[pos + static_cast<std::size_t>(j)] != 0)
        throw ValidationError("positive label on non-final phoneme at position " +
                              std::to_string(pos + static_cast<std::size_t>(j)));
    }
    int c = phones[pos + static_cast<std::size_t>(g) - 1];
    if (c < 0 || c >= kNumClasses)
      throw ValidationError("label class out of range: " + std::to_string(c));
    out.push_back(c);
    pos += static_cast<std::size_t>(g);
  }
  return out;
}

}  // namespace spontts::labels
