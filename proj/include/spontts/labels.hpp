#pragma once

#include <cstdint>
#include <vector>

namespace spontts::labels {

// Spontaneous behavior classes: 0 none, 1 filled pause, 2 prolongation,
// 3 both. Stored as plain ints; `kNumClasses` bounds embedding tables.
constexpr int kNumClasses = 4;

struct BehaviorFlags {
  bool filled_pause = false;
  bool prolongation = false;
  bool operator==(const BehaviorFlags&) const = default;
};

using CharLabelSeq = std::vector<int>;     // one class per character
using PhonemeLabelSeq = std::vector<int>;  // one class per phoneme

int combine(BehaviorFlags flags);
BehaviorFlags decompose(int label_class);

// Broadcasts character labels to phoneme positions; only the final phoneme
// of each character group may carry a positive class.
PhonemeLabelSeq expand_char_to_phoneme(const CharLabelSeq& labels,
                                       const std::vector<int>& grouping);

// Inverse of expand_char_to_phoneme; rejects sequences where a positive
// class sits on a non-final phoneme of its group.
CharLabelSeq contract_phoneme_to_char(const PhonemeLabelSeq& labels,
                                      const std::vector<int>& grouping);

}  // namespace spontts::labels
