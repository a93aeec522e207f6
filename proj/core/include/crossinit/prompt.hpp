#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "crossinit/embedding.hpp"

namespace crossinit {

/// Marker that expands to every concept slot, in slot order.
inline constexpr std::string_view kConceptMarker = "{S*}";

/// A prompt with placeholder slots. Slots are whitespace-delimited words of
/// the form "{name}"; "{S*}" is the concept marker and expands to all slots.
class PromptTemplate {
 public:
  struct Piece {
    bool is_slot = false;
    std::string text;  ///< literal text, or the slot name for a slot
  };

  static PromptTemplate parse(std::string_view text);

  const std::vector<Piece>& pieces() const { return pieces_; }
  const std::string& source() const { return source_; }
  int slot_count() const;
  bool has_concept_marker() const;

  /// Replaces the concept marker with one slot per name.
  PromptTemplate expand(const std::vector<std::string>& slot_names) const;
  /// Replaces every slot (or marker) with literal text, e.g. a class word.
  std::string render(std::string_view replacement) const;

 private:
  std::string source_;
  std::vector<Piece> pieces_;
};

/// A template after tokenization: BOS, words, EOS. Slot positions hold <pad>
/// until a concept is spliced in.
struct TokenizedPrompt {
  std::vector<int> ids;
  std::vector<int> slot_positions;
};

TokenizedPrompt tokenize_prompt(const PromptTemplate& tmpl, const EmbeddingTable& table);

}  // namespace crossinit
