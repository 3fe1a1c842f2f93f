#include "icl/prompt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace icl {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kColors = {"red",  "orange", "yellow", "green",
                                          "cyan", "blue",   "purple", "magenta"};
const std::vector<std::string> kShapes = {"circle", "square", "triangle", "cross"};
const std::vector<std::string> kPositions = {"tl", "tc", "tr", "cl", "cc", "cr", "bl", "bc", "br"};
const std::vector<std::string> kTasks = {"palette", "identity", "effect"};
const std::vector<std::string> kEffects = {"storm", "invert"};
const std::vector<std::string> kIds = {"id0", "id1", "id2", "id3", "id4", "id5", "id6", "id7"};

constexpr Attr kAttrOrder[] = {Attr::Task, Attr::Color, Attr::Shape,
                               Attr::Pos,  Attr::Effect, Attr::Id};

constexpr Marker kMarkerOrder[] = {Marker::TopLeft, Marker::TopRight, Marker::BottomLeft,
                                   Marker::BottomRight, Marker::Left, Marker::Right,
                                   Marker::Top, Marker::Bottom, Marker::Single};

} // namespace

std::string attr_name(Attr a) {
  switch (a) {
    case Attr::Task: return "TASK";
    case Attr::Color: return "COLOR";
    case Attr::Shape: return "SHAPE";
    case Attr::Pos: return "POS";
    case Attr::Effect: return "EFFECT";
    case Attr::Id: return "ID";
  }
  throw InvalidArgument("unknown attr enum value");
}

Attr attr_from_name(const std::string& s) {
  for (Attr a : kAttrOrder)
    if (attr_name(a) == s) return a;
  throw InvalidArgument("unknown attribute key '" + s + "'");
}

Vocabulary::Vocabulary() {
  tokens_ = {"[BOS]", "[EOS]", "[SEP]", "[NULL]"};
  for (Marker m : kMarkerOrder) tokens_.push_back(marker_token(m));
  for (Attr a : kAttrOrder) tokens_.push_back(attr_name(a));
  auto append = [this](const std::vector<std::string>& vs) {
    tokens_.insert(tokens_.end(), vs.begin(), vs.end());
  };
  append(kColors);
  append(kShapes);
  append(kPositions);
  append(kTasks);
  append(kEffects);
  append(kIds);
  for (size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = int(i);
  values_[Attr::Task] = kTasks;
  values_[Attr::Color] = kColors;
  values_[Attr::Shape] = kShapes;
  values_[Attr::Pos] = kPositions;
  values_[Attr::Effect] = kEffects;
  values_[Attr::Id] = kIds;
  ICL_CHECK(tokens_.size() <= 64, "vocabulary exceeds 64 tokens");
  ICL_CHECK(tokens_[kNull] == "[NULL]", "vocabulary layout drifted");
}

const Vocabulary& Vocabulary::instance() {
  static Vocabulary v;
  return v;
}

const std::string& Vocabulary::token(int id) const {
  ICL_CHECK(id >= 0 && id < size(), "token id " << id << " out of range");
  return tokens_[size_t(id)];
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  ICL_CHECK(it != index_.end(), "unknown token '" << token << "'");
  return it->second;
}

bool Vocabulary::contains(const std::string& token) const { return index_.count(token) > 0; }

int Vocabulary::marker_id(Marker m) const { return id(marker_token(m)); }
int Vocabulary::attr_id(Attr a) const { return id(attr_name(a)); }

const std::vector<std::string>& Vocabulary::values(Attr a) const { return values_.at(a); }

bool Vocabulary::value_valid(Attr a, const std::string& v) const {
  const auto& vs = values_.at(a);
  return std::find(vs.begin(), vs.end(), v) != vs.end();
}

int TokenSeq::eos_pos() const {
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == Vocabulary::kEos) return int(i);
  return int(ids.size()) - 1;
}

void PromptProgram::validate(const PanelLayout& layout) const {
  const auto& vocab = Vocabulary::instance();
  int id_tags = 0;
  auto check_clause = [&](const std::map<Attr, std::string>& clause) {
    for (const auto& [a, v] : clause) {
      ICL_CHECK(vocab.value_valid(a, v),
                "value '" << v << "' is not valid for attribute " << attr_name(a));
      if (a == Attr::Id) ++id_tags;
    }
  };
  check_clause(overall);
  for (const auto& [m, clause] : panels) {
    (void)m;
    check_clause(clause);
  }
  ICL_CHECK(id_tags <= 1, "program carries " << id_tags << " identity tags; at most one allowed");
  if (!panels.empty()) {
    ICL_CHECK(panels.size() == layout.markers.size(),
              "program has " << panels.size() << " panel clauses for a " << layout.grid_name()
                             << " layout");
    for (size_t i = 0; i < panels.size(); ++i) {
      ICL_CHECK(panels[i].first == layout.markers[i],
                "panel clause " << i << " marker " << marker_name(panels[i].first)
                                << " does not match layout order ("
                                << marker_name(layout.markers[i]) << " expected)");
    }
  }
}

TokenSeq tokenize(const PromptProgram& p, const PanelLayout& layout, int l_text) {
  p.validate(layout);
  const auto& vocab = Vocabulary::instance();
  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  auto emit_clause = [&](const std::map<Attr, std::string>& clause) {
    for (Attr a : {Attr::Task, Attr::Color, Attr::Shape, Attr::Pos, Attr::Effect, Attr::Id}) {
      auto it = clause.find(a);
      if (it == clause.end()) continue;
      ids.push_back(vocab.attr_id(a));
      ids.push_back(vocab.id(it->second));
    }
  };
  emit_clause(p.overall);
  for (const auto& [m, clause] : p.panels) {
    ids.push_back(Vocabulary::kSep);
    ids.push_back(vocab.marker_id(m));
    emit_clause(clause);
  }
  ids.push_back(Vocabulary::kEos);
  ICL_CHECK(int(ids.size()) <= l_text,
            "prompt needs " << ids.size() << " tokens, exceeds L_text = " << l_text);
  ids.resize(size_t(l_text), Vocabulary::kEos); // pad with [EOS]
  return TokenSeq{std::move(ids)};
}

PromptProgram detokenize(const TokenSeq& t) {
  const auto& vocab = Vocabulary::instance();
  const auto& ids = t.ids;
  ICL_CHECK(!ids.empty() && ids[0] == Vocabulary::kBos, "malformed sequence: missing [BOS]");

  PromptProgram p;
  size_t i = 1;
  auto is_marker = [&](int id) { return id >= 4 && id <= 12; };
  auto is_attr_key = [&](int id) { return id >= 13 && id <= 18; };

  auto parse_clause = [&](std::map<Attr, std::string>& clause) {
    while (i < ids.size() && is_attr_key(ids[i])) {
      Attr a = attr_from_name(vocab.token(ids[i]));
      ++i;
      ICL_CHECK(i < ids.size(), "malformed sequence: key without value");
      const std::string& v = vocab.token(ids[i]);
      ICL_CHECK(vocab.value_valid(a, v), "malformed sequence: '" << v << "' is not a value for "
                                                                 << attr_name(a));
      ICL_CHECK(!clause.count(a), "malformed sequence: duplicate key " << attr_name(a));
      clause[a] = v;
      ++i;
    }
  };

  parse_clause(p.overall);
  while (i < ids.size() && ids[i] == Vocabulary::kSep) {
    ++i;
    ICL_CHECK(i < ids.size() && is_marker(ids[i]), "malformed sequence: [SEP] without marker");
    Marker m = marker_from_name(vocab.token(ids[i]));
    ++i;
    std::map<Attr, std::string> clause;
    parse_clause(clause);
    p.panels.emplace_back(m, std::move(clause));
  }
  ICL_CHECK(i < ids.size() && ids[i] == Vocabulary::kEos,
            "malformed sequence: expected [EOS], got "
                << (i < ids.size() ? vocab.token(ids[i]) : std::string("end of sequence")));
  for (; i < ids.size(); ++i)
    ICL_CHECK(ids[i] == Vocabulary::kEos, "malformed sequence: junk after [EOS]");
  return p;
}

TokenSeq null_prompt(int l_text) {
  ICL_CHECK(l_text >= 3, "L_text too small for the null prompt");
  std::vector<int> ids = {Vocabulary::kBos, Vocabulary::kNull, Vocabulary::kEos};
  ids.resize(size_t(l_text), Vocabulary::kEos);
  return TokenSeq{std::move(ids)};
}

std::string prompt_to_json(const PromptProgram& p) {
  json j;
  json overall = json::object();
  for (const auto& [a, v] : p.overall) overall[attr_name(a)] = v;
  j["overall"] = overall;
  json panels = json::array();
  for (const auto& [m, clause] : p.panels) {
    json c;
    c["marker"] = marker_name(m);
    for (const auto& [a, v] : clause) c[attr_name(a)] = v;
    panels.push_back(c);
  }
  j["panels"] = panels;
  return j.dump(2);
}

PromptProgram prompt_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw RuntimeError(std::string("prompt JSON parse error: ") + e.what());
  }
  ICL_CHECK_IO(j.is_object(), "prompt JSON must be an object");
  PromptProgram p;
  if (j.contains("overall")) {
    ICL_CHECK_IO(j["overall"].is_object(), "prompt JSON: 'overall' must be an object");
    for (auto& [k, v] : j["overall"].items()) {
      ICL_CHECK_IO(v.is_string(), "prompt JSON: overall." << k << " must be a string");
      p.overall[attr_from_name(k)] = v.get<std::string>();
    }
  }
  if (j.contains("panels")) {
    ICL_CHECK_IO(j["panels"].is_array(), "prompt JSON: 'panels' must be an array");
    for (auto& c : j["panels"]) {
      ICL_CHECK_IO(c.is_object() && c.contains("marker"),
                   "prompt JSON: each panel clause needs a 'marker'");
      Marker m = marker_from_name(c["marker"].get<std::string>());
      std::map<Attr, std::string> clause;
      for (auto& [k, v] : c.items()) {
        if (k == "marker") continue;
        ICL_CHECK_IO(v.is_string(), "prompt JSON: panel attribute " << k << " must be a string");
        clause[attr_from_name(k)] = v.get<std::string>();
      }
      p.panels.emplace_back(m, std::move(clause));
    }
  }
  return p;
}

} // namespace icl
