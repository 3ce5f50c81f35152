#include "kverb/verbalizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "kverb/errors.hpp"
#include "kverb/text.hpp"

namespace kverb {

using nlohmann::json;

std::string_view to_string(TermSource source) {
  switch (source) {
    case TermSource::related_words: return "related_words";
    case TermSource::reverse_dictionary: return "reverse_dictionary";
    case TermSource::class_name_seed: return "class_name_seed";
  }
  return "?";
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::raw: return "raw";
    case Stage::filtered: return "filtered";
    case Stage::calibrated: return "calibrated";
  }
  return "?";
}

std::string_view to_string(StageFlag flag) {
  switch (flag) {
    case StageFlag::retrieved: return "retrieved";
    case StageFlag::filtered: return "filtered";
    case StageFlag::calibrated: return "calibrated";
  }
  return "?";
}

TermSource parse_term_source(std::string_view s) {
  if (s == "related_words") return TermSource::related_words;
  if (s == "reverse_dictionary") return TermSource::reverse_dictionary;
  if (s == "class_name_seed") return TermSource::class_name_seed;
  throw ParseError("unknown term source '" + std::string(s) + "'");
}

Stage parse_stage(std::string_view s) {
  if (s == "raw") return Stage::raw;
  if (s == "filtered") return Stage::filtered;
  if (s == "calibrated") return Stage::calibrated;
  throw ParseError("unknown stage '" + std::string(s) + "'");
}

StageFlag parse_stage_flag(std::string_view s) {
  if (s == "retrieved") return StageFlag::retrieved;
  if (s == "filtered") return StageFlag::filtered;
  if (s == "calibrated") return StageFlag::calibrated;
  throw ParseError("unknown stage flag '" + std::string(s) + "'");
}

Stage StageFlags::stage() const {
  if (has(StageFlag::calibrated)) return Stage::calibrated;
  if (has(StageFlag::filtered)) return Stage::filtered;
  return Stage::raw;
}

ClassLabel make_class(int id, std::string name) {
  ClassLabel c;
  c.id = id;
  c.query_text = to_lower(trim(name));
  c.name = std::move(name);
  return c;
}

LabelTerm retrieved_term(std::string text, double kb_score, TermSource source) {
  LabelTerm t;
  t.text = std::move(text);
  t.kb_score = kb_score;
  t.source = source;
  t.flags.set(StageFlag::retrieved);
  return t;
}

const ClassLabel& Verbalizer::class_label(int class_id) const {
  check_class(class_id);
  return classes_[static_cast<std::size_t>(class_id)];
}

const std::vector<LabelTerm>& Verbalizer::terms(int class_id) const {
  check_class(class_id);
  return terms_[static_cast<std::size_t>(class_id)];
}

std::size_t Verbalizer::total_terms() const {
  std::size_t n = 0;
  for (const auto& ts : terms_) n += ts.size();
  return n;
}

Stage Verbalizer::stage() const {
  Stage s = Stage::calibrated;
  for (const auto& ts : terms_) {
    for (const auto& t : ts) s = std::min(s, t.flags.stage());
  }
  return s;
}

void Verbalizer::check_class(int class_id) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= classes_.size()) {
    throw PreconditionError("unknown class id " + std::to_string(class_id));
  }
}

namespace {

void validate_classes(std::vector<ClassLabel>& classes) {
  if (classes.empty()) throw PreconditionError("verbalizer needs at least one class");
  std::sort(classes.begin(), classes.end(),
            [](const ClassLabel& a, const ClassLabel& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (i > 0 && classes[i].id == classes[i - 1].id) {
      throw PreconditionError("duplicate class id " + std::to_string(classes[i].id));
    }
    if (classes[i].id != static_cast<int>(i)) {
      throw PreconditionError("class ids must be dense 0..N-1; missing " + std::to_string(i));
    }
    if (trim(classes[i].name).empty()) {
      throw PreconditionError("class " + std::to_string(i) + " has an empty name");
    }
    if (classes[i].query_text.empty()) classes[i].query_text = to_lower(trim(classes[i].name));
  }
}

void validate_term(const LabelTerm& t, const std::string& where) {
  if (trim(t.text).empty()) throw PreconditionError(where + ": empty term text");
  if (t.flags.has(StageFlag::filtered) != t.semantic_weight.has_value()) {
    throw PreconditionError(where + ": semantic_weight must be set iff the term is filtered");
  }
  if (t.semantic_weight && !(std::isfinite(*t.semantic_weight) && *t.semantic_weight > 0.0)) {
    throw PreconditionError(where + ": semantic_weight must be positive");
  }
  if (!t.is_seed() && !(t.kb_score > 0.0)) {
    throw PreconditionError(where + ": retrieved term '" + t.text + "' has kb_score <= 0");
  }
}

void validate_term_list(const std::vector<LabelTerm>& terms, int class_id) {
  const std::string where = "class " + std::to_string(class_id);
  bool seen_seed = false;
  std::unordered_set<std::string> keys;
  for (const auto& t : terms) {
    validate_term(t, where);
    if (!keys.insert(to_lower(trim(t.text))).second) {
      throw PreconditionError(where + ": duplicate term '" + t.text + "'");
    }
    seen_seed = seen_seed || t.is_seed();
  }
  if (!seen_seed) throw PreconditionError(where + ": class-name seed term is missing");
}

}  // namespace

Verbalizer new_verbalizer(std::vector<ClassLabel> classes) {
  validate_classes(classes);
  Verbalizer v;
  v.terms_.resize(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    LabelTerm seed;
    seed.text = to_lower(trim(classes[i].name));
    seed.kb_score = 1.0;
    seed.source = TermSource::class_name_seed;
    v.terms_[i].push_back(std::move(seed));
  }
  v.classes_ = std::move(classes);
  return v;
}

Verbalizer add_terms(const Verbalizer& v, int class_id, std::span<const LabelTerm> terms) {
  std::vector<LabelTerm> merged = v.terms(class_id);
  std::unordered_set<std::string> keys;
  for (const auto& t : merged) keys.insert(to_lower(trim(t.text)));
  for (const auto& t : terms) {
    if (t.is_seed()) throw PreconditionError("add_terms: seed terms are created by new_verbalizer");
    if (!(t.kb_score > 0.0)) {
      throw PreconditionError("add_terms: term '" + t.text + "' has kb_score <= 0");
    }
    if (trim(t.text).empty()) throw PreconditionError("add_terms: empty term text");
    if (keys.insert(to_lower(trim(t.text))).second) merged.push_back(t);
  }
  return replace_terms(v, class_id, std::move(merged));
}

Verbalizer replace_terms(const Verbalizer& v, int class_id, std::vector<LabelTerm> terms) {
  v.check_class(class_id);
  validate_term_list(terms, class_id);
  Verbalizer out = v;
  out.terms_[static_cast<std::size_t>(class_id)] = std::move(terms);
  return out;
}

std::string serialize(const Verbalizer& v) {
  json doc;
  doc["stage"] = std::string(to_string(v.stage()));
  json classes = json::array();
  for (const auto& c : v.classes()) {
    json jc = {{"id", c.id}, {"name", c.name}};
    if (c.query_text != to_lower(trim(c.name))) jc["query_text"] = c.query_text;
    classes.push_back(std::move(jc));
  }
  doc["classes"] = std::move(classes);
  json terms = json::object();
  for (const auto& c : v.classes()) {
    json list = json::array();
    for (const auto& t : v.terms(c.id)) {
      json flags = json::array();
      for (auto f : {StageFlag::retrieved, StageFlag::filtered, StageFlag::calibrated}) {
        if (t.flags.has(f)) flags.push_back(std::string(to_string(f)));
      }
      list.push_back({{"text", t.text},
                      {"kb_score", format_double(t.kb_score)},
                      {"semantic_weight", t.semantic_weight ? json(format_double(*t.semantic_weight))
                                                            : json(nullptr)},
                      {"source", std::string(to_string(t.source))},
                      {"stage_flags", std::move(flags)}});
    }
    terms[std::to_string(c.id)] = std::move(list);
  }
  doc["terms"] = std::move(terms);
  return doc.dump(2) + "\n";
}

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const auto& value = require(obj, key, where);
  if (!value.is_string()) throw ParseError(where + ": field '" + key + "' must be a string");
  return value.get<std::string>();
}

double require_decimal(const json& obj, const char* key, const std::string& where) {
  try {
    return parse_double(require_string(obj, key, where));
  } catch (const ParseError& e) {
    throw ParseError(where + ": " + e.what());
  }
}

}  // namespace

Verbalizer deserialize(std::string_view data) {
  json doc;
  try {
    doc = json::parse(data);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("verbalizer: invalid JSON: ") + e.what());
  }
  Stage declared = Stage::raw;
  try {
    declared = parse_stage(require_string(doc, "stage", "verbalizer"));
  } catch (const ParseError& e) {
    throw ParseError(std::string("verbalizer: ") + e.what());
  }

  const auto& jclasses = require(doc, "classes", "verbalizer");
  if (!jclasses.is_array()) throw ParseError("verbalizer: 'classes' must be an array");
  std::vector<ClassLabel> classes;
  for (std::size_t i = 0; i < jclasses.size(); ++i) {
    const std::string where = "classes[" + std::to_string(i) + "]";
    const auto& jid = require(jclasses[i], "id", where);
    if (!jid.is_number_integer()) throw ParseError(where + ": 'id' must be an integer");
    ClassLabel c = make_class(jid.get<int>(), require_string(jclasses[i], "name", where));
    if (jclasses[i].contains("query_text")) c.query_text = require_string(jclasses[i], "query_text", where);
    classes.push_back(std::move(c));
  }

  Verbalizer v;
  try {
    v = new_verbalizer(classes);
  } catch (const PreconditionError& e) {
    throw ParseError(std::string("verbalizer: ") + e.what());
  }

  const auto& jterms = require(doc, "terms", "verbalizer");
  if (!jterms.is_object()) throw ParseError("verbalizer: 'terms' must be an object");
  for (const auto& [key, list] : jterms.items()) {
    int class_id = -1;
    try {
      std::size_t pos = 0;
      class_id = std::stoi(key, &pos);
      if (pos != key.size()) class_id = -1;
    } catch (const std::exception&) {
    }
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= v.classes_.size()) {
      throw ParseError("terms['" + key + "']: no such class");
    }
    if (!list.is_array()) throw ParseError("terms['" + key + "']: must be an array");
    std::vector<LabelTerm> terms;
    for (std::size_t j = 0; j < list.size(); ++j) {
      const std::string where = "terms['" + key + "'][" + std::to_string(j) + "]";
      const auto& jt = list[j];
      LabelTerm t;
      t.text = require_string(jt, "text", where);
      t.kb_score = require_decimal(jt, "kb_score", where);
      const auto& jw = require(jt, "semantic_weight", where);
      if (!jw.is_null()) t.semantic_weight = require_decimal(jt, "semantic_weight", where);
      try {
        t.source = parse_term_source(require_string(jt, "source", where));
        const auto& jflags = require(jt, "stage_flags", where);
        if (!jflags.is_array()) throw ParseError("'stage_flags' must be an array");
        for (const auto& f : jflags) {
          if (!f.is_string()) throw ParseError("stage flag must be a string");
          t.flags.set(parse_stage_flag(f.get<std::string>()));
        }
      } catch (const ParseError& e) {
        throw ParseError(where + ": " + e.what());
      }
      terms.push_back(std::move(t));
    }
    try {
      validate_term_list(terms, class_id);
    } catch (const PreconditionError& e) {
      throw ParseError("terms['" + key + "']: " + e.what());
    }
    v.terms_[static_cast<std::size_t>(class_id)] = std::move(terms);
  }
  if (jterms.size() != v.classes_.size()) {
    for (const auto& c : v.classes_) {
      if (!jterms.contains(std::to_string(c.id))) {
        throw ParseError("terms: missing entry for class " + std::to_string(c.id));
      }
    }
  }
  if (v.stage() != declared) {
    throw ParseError("verbalizer: declared stage '" + std::string(to_string(declared)) +
                     "' does not match term flags ('" + std::string(to_string(v.stage())) + "')");
  }
  return v;
}

Verbalizer load_verbalizer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open verbalizer file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

void save_verbalizer(const Verbalizer& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write verbalizer file " + path);
  out << serialize(v);
}

std::vector<CrossClassDuplicate> cross_class_duplicates(const Verbalizer& v) {
  std::map<std::string, std::set<int>> owners;
  for (const auto& c : v.classes()) {
    for (const auto& t : v.terms(c.id)) owners[to_lower(trim(t.text))].insert(c.id);
  }
  std::vector<CrossClassDuplicate> out;
  for (auto& [text, ids] : owners) {
    if (ids.size() > 1) out.push_back({text, std::vector<int>(ids.begin(), ids.end())});
  }
  return out;
}

}  // namespace kverb
