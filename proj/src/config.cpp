#include "kverb/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "kverb/errors.hpp"
#include "kverb/hashing.hpp"
#include "kverb/text.hpp"

namespace kverb {

namespace fs = std::filesystem;

namespace {

template <typename T>
T parse_integer(const std::string& key, const std::string& value, T min_value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || out < min_value) {
    throw ConfigError("config key '" + key + "': expected an integer >= " + std::to_string(min_value) +
                      ", got '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    const double d = parse_double(value);
    if (!std::isfinite(d)) throw ParseError("non-finite");
    return d;
  } catch (const ParseError&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = to_lower(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value, T min_value) {
  std::vector<T> out;
  std::string item;
  for (std::size_t start = 0; start <= value.size();) {
    auto comma = value.find(',', start);
    if (comma == std::string::npos) comma = value.size();
    item = trim(std::string_view(value).substr(start, comma - start));
    if (item.empty()) throw ConfigError("config key '" + key + "': empty list item in '" + value + "'");
    out.push_back(parse_integer<T>(key, item, min_value));
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

struct Entry {
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
};

using Table = std::map<std::string, Entry>;

#define KV_PATH(name, field)                                                                  \
  {name,                                                                                      \
   {[](const PipelineConfig& c) { return c.field.string(); },                                \
    [](PipelineConfig& c, const std::string&, const std::string& v) { c.field = v; }}}
#define KV_INT(name, field, min)                                                              \
  {name,                                                                                      \
   {[](const PipelineConfig& c) { return std::to_string(c.field); },                          \
    [](PipelineConfig& c, const std::string& k, const std::string& v) {                       \
      c.field = parse_integer<std::decay_t<decltype(c.field)>>(k, v, min);                    \
    }}}
#define KV_REAL(name, field)                                                                  \
  {name,                                                                                      \
   {[](const PipelineConfig& c) { return format_double(c.field); },                           \
    [](PipelineConfig& c, const std::string& k, const std::string& v) { c.field = parse_real(k, v); }}}
#define KV_BOOL(name, field)                                                                  \
  {name,                                                                                      \
   {[](const PipelineConfig& c) { return format_bool(c.field); },                             \
    [](PipelineConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }}}
#define KV_STR(name, field)                                                                   \
  {name,                                                                                      \
   {[](const PipelineConfig& c) { return c.field; },                                          \
    [](PipelineConfig& c, const std::string&, const std::string& v) { c.field = v; }}}

const Table& table() {
  static const Table t = {
      KV_PATH("classes", classes),
      KV_PATH("train", train),
      KV_PATH("test", test),
      KV_PATH("nli_data", nli_data),
      KV_PATH("backend", backend),
      KV_PATH("out_dir", out_dir),
      KV_PATH("cache_dir", cache_dir),
      KV_STR("related_words_url", kb.related_words.base_url),
      KV_STR("reverse_dictionary_url", kb.reverse_dictionary.base_url),
      {"kb_query_param",
       {[](const PipelineConfig& c) { return c.kb.related_words.query_param; },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          if (v.empty()) throw ConfigError("config key '" + k + "' must be non-empty");
          c.kb.related_words.query_param = v;
          c.kb.reverse_dictionary.query_param = v;
        }}},
      {"kb_timeout_ms",
       {[](const PipelineConfig& c) { return std::to_string(c.kb.timeout.count()); },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.kb.timeout = std::chrono::milliseconds(parse_integer<long long>(k, v, 1));
        }}},
      KV_INT("kb_attempts", kb.retry.attempts, 1),
      {"kb_backoff_ms",
       {[](const PipelineConfig& c) { return std::to_string(c.kb.retry.initial_backoff.count()); },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.kb.retry.initial_backoff = std::chrono::milliseconds(parse_integer<long long>(k, v, 0));
        }}},
      KV_INT("kb_max_in_flight", kb.rate.max_in_flight, 1),
      {"kb_min_interval_ms",
       {[](const PipelineConfig& c) { return std::to_string(c.kb.rate.min_interval.count()); },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.kb.rate.min_interval = std::chrono::milliseconds(parse_integer<long long>(k, v, 0));
        }}},
      KV_INT("kb_parallel", kb_parallel, 1),
      KV_REAL("mu_be", filter.mu_be),
      KV_REAL("mu_ce", filter.mu_ce),
      KV_BOOL("ce_higher_is_relevant", filter.ce_higher_is_relevant),
      KV_BOOL("ss", ss),
      KV_BOOL("cl", cl),
      KV_BOOL("fl", fl),
      KV_STR("method", method),
      {"template",
       {[](const PipelineConfig& c) { return c.prompt; },
        [](PipelineConfig& c, const std::string&, const std::string& v) {
          try {
            PromptTemplate::named(v);
          } catch (const PreconditionError& e) {
            throw ConfigError(std::string("config key 'template': ") + e.what());
          }
          c.prompt = v;
        }}},
      {"aggregation",
       {[](const PipelineConfig& c) { return std::string(to_string(c.aggregation)); },
        [](PipelineConfig& c, const std::string&, const std::string& v) {
          c.aggregation = parse_term_aggregation(v);
        }}},
      KV_BOOL("soft", soft),
      KV_BOOL("freeze_backend", freeze_backend),
      KV_INT("epochs", epochs, 0),
      KV_REAL("lr", lr),
      KV_INT("batch", batch, 1),
      KV_INT("max_length", max_length, 1),
      {"mode",
       {[](const PipelineConfig& c) { return std::string(to_string(c.mode)); },
        [](PipelineConfig& c, const std::string&, const std::string& v) { c.mode = parse_protocol_mode(v); }}},
      {"shots",
       {[](const PipelineConfig& c) { return format_list(c.shots); },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.shots = parse_list<std::size_t>(k, v, 1);
        }}},
      {"seeds",
       {[](const PipelineConfig& c) { return format_list(c.seeds); },
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.seeds = parse_list<std::uint64_t>(k, v, 0);
        }}},
      KV_INT("support_size", support_size, 1),
      KV_BOOL("calibration_gold_labels", calibration_gold_labels),
      KV_INT("min_tokens", min_tokens, 0),
      KV_INT("max_parallel", max_parallel, 1),
      KV_INT("nli_epochs", nli.epochs, 0),
      KV_REAL("nli_lr", nli.learning_rate),
      KV_INT("nli_batch", nli.batch_size, 1),
      KV_INT("nli_dim", nli.dim, 1),
      KV_INT("nli_seed", nli.seed, 0),
      KV_INT("backend_dim", backend_model.dim, 1),
      KV_INT("backend_seed", backend_model.seed, 0),
      KV_INT("pretrain_epochs", pretrain.epochs, 0),
      KV_REAL("pretrain_lr", pretrain.learning_rate),
      KV_INT("pretrain_seed", pretrain.seed, 0),
  };
  return t;
}

#undef KV_PATH
#undef KV_INT
#undef KV_REAL
#undef KV_BOOL
#undef KV_STR

void validate(const PipelineConfig& c) {
  validate(c.filter);
  if (!(c.lr > 0.0)) throw ConfigError("config key 'lr' must be positive");
  if (!(c.nli.learning_rate > 0.0)) throw ConfigError("config key 'nli_lr' must be positive");
  if (!(c.pretrain.learning_rate > 0.0)) throw ConfigError("config key 'pretrain_lr' must be positive");
  if (c.freeze_backend && !c.soft) throw ConfigError("freeze_backend = true requires soft = true");
}

}  // namespace

std::map<std::string, std::string> PipelineConfig::values() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, entry] : table()) out[key] = entry.get(*this);
  return out;
}

fs::path PipelineConfig::effective_cache_dir() const {
  return cache_dir.empty() ? out_dir / "kb_cache" : cache_dir;
}

std::string PipelineConfig::method_label() const {
  if (!method.empty()) return method;
  std::vector<std::string> off;
  if (!ss) off.push_back("SS");
  if (!fl) off.push_back("FL");
  if (!cl) off.push_back("CL");
  std::string base = off.empty() ? "full" : "w/o " + join(off, "+");
  return soft ? base + " (soft)" : base;
}

const std::map<std::string, std::string>& config_keys() {
  static const auto defaults = PipelineConfig{}.values();
  return defaults;
}

void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value) {
  const auto it = table().find(key);
  if (it == table().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, key, value);
}

PipelineConfig load_config(const std::optional<fs::path>& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  PipelineConfig config;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file " + path->string());
    std::set<std::string> seen;
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
      const std::string where = path->string() + ":" + std::to_string(line_no);
      const auto hash = line.find('#');
      const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' repeated");
      try {
        set_config_value(config, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
  }
  for (const auto& [key, value] : overrides) set_config_value(config, key, value);
  validate(config);
  return config;
}

std::string format_config(const PipelineConfig& config) {
  std::string out;
  for (const auto& [key, value] : config.values()) out += key + " = " + value + "\n";
  return out;
}

std::map<std::string, std::string> settings_snapshot(const PipelineConfig& config) {
  auto values = config.values();
  values.erase("out_dir");
  values.erase("cache_dir");
  return values;
}

std::string config_hash(const PipelineConfig& config) {
  std::string canonical;
  for (const auto& [key, value] : settings_snapshot(config)) canonical += key + " = " + value + "\n";
  return sha256_hex(canonical);
}

}  // namespace kverb
