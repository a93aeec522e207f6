#include "crossinit/prompt.hpp"

#include <sstream>

namespace crossinit {

namespace {

bool is_slot_word(std::string_view w) {
  return w.size() >= 3 && w.front() == '{' && w.back() == '}';
}

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
  PromptTemplate t;
  t.source_ = std::string(text);
  std::istringstream ss{std::string(text)};
  std::string word;
  std::string literal;
  auto flush = [&] {
    if (!literal.empty()) t.pieces_.push_back({false, literal});
    literal.clear();
  };
  while (ss >> word) {
    if (is_slot_word(word)) {
      flush();
      t.pieces_.push_back({true, word.substr(1, word.size() - 2)});
    } else {
      if (!literal.empty()) literal += ' ';
      literal += word;
    }
  }
  flush();
  return t;
}

int PromptTemplate::slot_count() const {
  int n = 0;
  for (const auto& p : pieces_) n += p.is_slot ? 1 : 0;
  return n;
}

bool PromptTemplate::has_concept_marker() const {
  const std::string marker(kConceptMarker.substr(1, kConceptMarker.size() - 2));
  for (const auto& p : pieces_)
    if (p.is_slot && p.text == marker) return true;
  return false;
}

PromptTemplate PromptTemplate::expand(const std::vector<std::string>& slot_names) const {
  const std::string marker(kConceptMarker.substr(1, kConceptMarker.size() - 2));
  PromptTemplate out;
  for (const auto& p : pieces_) {
    if (p.is_slot && p.text == marker) {
      for (const auto& s : slot_names) out.pieces_.push_back({true, s});
    } else {
      out.pieces_.push_back(p);
    }
  }
  std::string src;
  for (const auto& p : out.pieces_) {
    if (!src.empty()) src += ' ';
    src += p.is_slot ? "{" + p.text + "}" : p.text;
  }
  out.source_ = src;
  return out;
}

std::string PromptTemplate::render(std::string_view replacement) const {
  std::string out;
  bool last_was_slot = false;
  for (const auto& p : pieces_) {
    // consecutive slots of one concept collapse to a single replacement
    if (p.is_slot && last_was_slot) continue;
    if (!out.empty()) out += ' ';
    out += p.is_slot ? std::string(replacement) : p.text;
    last_was_slot = p.is_slot;
  }
  return out;
}

TokenizedPrompt tokenize_prompt(const PromptTemplate& tmpl, const EmbeddingTable& table) {
  TokenizedPrompt out;
  out.ids.push_back(table.bos_id());
  for (const auto& p : tmpl.pieces()) {
    if (p.is_slot) {
      out.slot_positions.push_back(static_cast<int>(out.ids.size()));
      out.ids.push_back(table.pad_id());
    } else {
      for (int id : table.encode_words(p.text)) out.ids.push_back(id);
    }
  }
  out.ids.push_back(table.eos_id());
  return out;
}

}  // namespace crossinit
