#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icl/canvas.hpp"

namespace icl {

// Attribute keys of the prompt grammar, in canonical clause order.
enum class Attr { Task, Color, Shape, Pos, Effect, Id };

std::string attr_name(Attr a);
Attr attr_from_name(const std::string& s);

// Closed token vocabulary standing in for a text encoder. The table is
// frozen: token id == index in this list, and ids are stable append-only.
//   0..3   structural: [BOS] [EOS] [SEP] [NULL]
//   4..12  marker tokens (9)
//   13..18 attribute keys TASK COLOR SHAPE POS EFFECT ID
//   19..26 colors, 27..30 shapes, 31..39 positions, 40..42 tasks,
//   43..44 effects, 45..52 identity tags
class Vocabulary {
 public:
  static const Vocabulary& instance();

  int size() const { return int(tokens_.size()); }
  const std::string& token(int id) const;
  int id(const std::string& token) const; // throws on unknown token
  bool contains(const std::string& token) const;

  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;
  static constexpr int kNull = 3;

  int marker_id(Marker m) const;
  int attr_id(Attr a) const;
  // Valid value tokens for an attribute key.
  const std::vector<std::string>& values(Attr a) const;
  bool value_valid(Attr a, const std::string& v) const;

 private:
  Vocabulary();
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  std::map<Attr, std::vector<std::string>> values_;
};

// Fixed-length padded token sequence. Padding repeats [EOS]; attention masks
// hide every position after the first [EOS].
struct TokenSeq {
  static constexpr int kDefaultLen = 48;
  std::vector<int> ids;

  int length() const { return int(ids.size()); }
  // Index of the first [EOS]; padded positions are strictly after it.
  int eos_pos() const;
  bool operator==(const TokenSeq&) const = default;
};

// Structured merged prompt: one overall clause, then per-panel clauses keyed
// by layout markers in layout order.
struct PromptProgram {
  std::map<Attr, std::string> overall;
  std::vector<std::pair<Marker, std::map<Attr, std::string>>> panels;

  bool empty() const { return overall.empty() && panels.empty(); }
  // Checks vocabulary membership, marker agreement with the layout
  // (a program with zero clauses is valid for any layout), and the
  // at-most-one-identity-tag rule.
  void validate(const PanelLayout& layout) const;

  bool operator==(const PromptProgram&) const = default;
};

// [BOS], overall key/value tokens, then per panel: [SEP], marker, clause
// key/value tokens; [EOS]; pad. Keys are emitted in canonical Attr order.
TokenSeq tokenize(const PromptProgram& p, const PanelLayout& layout,
                  int l_text = TokenSeq::kDefaultLen);

// Inverse of tokenize up to canonical key ordering. Throws on malformed
// structure (missing [BOS], [SEP] without marker, junk after [EOS], ...).
PromptProgram detokenize(const TokenSeq& t);

// [BOS], [NULL], [EOS], pad — the unconditional branch for guidance.
TokenSeq null_prompt(int l_text = TokenSeq::kDefaultLen);

// JSON form: {"overall": {"TASK": "palette", ...},
//             "panels": [{"marker": "TOP-LEFT", "SHAPE": "circle"}, ...]}
std::string prompt_to_json(const PromptProgram& p);
PromptProgram prompt_from_json(const std::string& json_text);

} // namespace icl
