#include <httplib.h>

#include "kverb/kb_retrieval.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "kverb/errors.hpp"
#include "kverb/fileio.hpp"
#include "kverb/hashing.hpp"
#include "kverb/text.hpp"

namespace kverb {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(KnowledgeBase kb) {
  return kb == KnowledgeBase::related_words ? "related_words" : "reverse_dictionary";
}

KnowledgeBase parse_knowledge_base(std::string_view s) {
  if (s == "related_words") return KnowledgeBase::related_words;
  if (s == "reverse_dictionary") return KnowledgeBase::reverse_dictionary;
  throw ParseError("unknown knowledge base '" + std::string(s) + "'");
}

TermSource term_source(KnowledgeBase kb) {
  return kb == KnowledgeBase::related_words ? TermSource::related_words
                                            : TermSource::reverse_dictionary;
}

bool same_content(const RetrievalResult& a, const RetrievalResult& b) {
  return a.query == b.query && a.source == b.source && a.items == b.items;
}

namespace {

json parse_body(std::string_view body, std::string_view what) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": malformed JSON response: " + e.what());
  }
}

KBResponseItem parse_item(const json& j, std::size_t index, std::string_view what,
                          std::initializer_list<const char*> word_keys,
                          std::initializer_list<const char*> score_keys) {
  const std::string where = std::string(what) + " item " + std::to_string(index);
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  KBResponseItem item;
  bool has_word = false;
  for (const char* k : word_keys) {
    if (j.contains(k) && j.at(k).is_string()) {
      item.word = j.at(k).get<std::string>();
      has_word = true;
      break;
    }
  }
  if (!has_word) throw ParseError(where + ": missing word");
  bool has_score = false;
  for (const char* k : score_keys) {
    if (!j.contains(k)) continue;
    const auto& s = j.at(k);
    if (s.is_number()) {
      item.score = s.get<double>();
    } else if (s.is_string()) {
      item.score = parse_double(s.get<std::string>());
    } else {
      throw ParseError(where + ": score is not numeric");
    }
    has_score = true;
    break;
  }
  // Related Words omits the score for some items; treat those as unscored.
  if (!has_score) item.score = 0.0;
  if (!std::isfinite(item.score)) throw ParseError(where + ": score is not finite");
  return item;
}

}  // namespace

std::vector<KBResponseItem> parse_related_words(std::string_view body) {
  json doc = parse_body(body, "related_words");
  if (!doc.is_array()) throw ParseError("related_words: expected a JSON array");
  std::vector<KBResponseItem> items;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    items.push_back(parse_item(doc[i], i, "related_words", {"word"}, {"score"}));
  }
  return items;
}

std::vector<KBResponseItem> parse_reverse_dictionary(std::string_view body) {
  json doc = parse_body(body, "reverse_dictionary");
  const json* list = &doc;
  if (doc.is_object() && doc.contains("results")) list = &doc.at("results");
  if (!list->is_array()) throw ParseError("reverse_dictionary: expected a JSON array");
  std::vector<KBResponseItem> items;
  for (std::size_t i = 0; i < list->size(); ++i) {
    items.push_back(
        parse_item((*list)[i], i, "reverse_dictionary", {"word", "term"}, {"score", "relevance"}));
  }
  return items;
}

WarningSink stderr_warnings() {
  return [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
}

// ---------------------------------------------------------------- HTTP client

namespace {

std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  return out;
}

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("knowledge-base URL lacks a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::int64_t now_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

struct HttpKBClient::Impl {
  explicit Impl(KBClientOptions o)
      : options(std::move(o)), in_flight(std::max(1, options.rate.max_in_flight)) {}

  void pace() {
    std::unique_lock lock(pace_mutex);
    auto now = std::chrono::steady_clock::now();
    if (now < next_slot) {
      std::this_thread::sleep_until(next_slot);
      now = next_slot;
    }
    next_slot = now + options.rate.min_interval;
  }

  KBClientOptions options;
  std::counting_semaphore<1024> in_flight;
  std::mutex pace_mutex;
  std::chrono::steady_clock::time_point next_slot{};
};

HttpKBClient::HttpKBClient(KBClientOptions options)
    : impl_(std::make_unique<Impl>(std::move(options))) {}

HttpKBClient::~HttpKBClient() = default;

const KBClientOptions& HttpKBClient::options() const { return impl_->options; }

RetrievalResult HttpKBClient::fetch(KnowledgeBase source, const std::string& query) {
  if (trim(query).empty()) throw PreconditionError("knowledge-base query must be non-empty");
  const auto& endpoint = source == KnowledgeBase::related_words ? impl_->options.related_words
                                                                : impl_->options.reverse_dictionary;
  const SplitUrl url = split_url(endpoint.base_url);
  const std::string target = url.path + (url.path.find('?') == std::string::npos ? "?" : "&") +
                             endpoint.query_param + "=" + url_encode(query);

  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{impl_->in_flight};

  const auto& retry = impl_->options.retry;
  const int attempts = std::max(1, retry.attempts);
  auto backoff = retry.initial_backoff;
  int last_status = 0;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    impl_->pace();
    httplib::Client client(url.origin);
    const auto timeout = impl_->options.timeout;
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_follow_location(true);
    auto res = client.Get(target);
    if (res && res->status == 200) {
      RetrievalResult r;
      r.query = query;
      r.source = source;
      r.items = source == KnowledgeBase::related_words ? parse_related_words(res->body)
                                                       : parse_reverse_dictionary(res->body);
      r.fetched_at = now_millis();
      return r;
    }
    if (res) {
      last_status = res->status;
      last_error = "HTTP " + std::to_string(res->status);
      if (!retryable_status(res->status)) break;
    } else {
      last_status = 0;
      last_error = httplib::to_string(res.error());
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw RetrievalError(query, last_status,
                       std::string(to_string(source)) + " query '" + query + "' failed: " + last_error);
}

// ---------------------------------------------------------------- cache

std::string serialize_retrieval(const RetrievalResult& r) {
  json items = json::array();
  for (const auto& item : r.items) {
    items.push_back({{"word", item.word}, {"score", format_double(item.score)}});
  }
  json doc = {{"query", r.query},
              {"source", std::string(to_string(r.source))},
              {"items", std::move(items)},
              {"fetched_at", r.fetched_at}};
  return doc.dump(2) + "\n";
}

RetrievalResult deserialize_retrieval(std::string_view data) {
  json doc;
  try {
    doc = json::parse(data);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("retrieval cache: invalid JSON: ") + e.what());
  }
  try {
    RetrievalResult r;
    r.query = doc.at("query").get<std::string>();
    r.source = parse_knowledge_base(doc.at("source").get<std::string>());
    r.fetched_at = doc.at("fetched_at").get<std::int64_t>();
    const auto& items = doc.at("items");
    if (!items.is_array()) throw ParseError("'items' must be an array");
    for (const auto& j : items) {
      KBResponseItem item{j.at("word").get<std::string>(),
                          parse_double(j.at("score").get<std::string>())};
      r.items.push_back(std::move(item));
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("retrieval cache: ") + e.what());
  } catch (const ParseError& e) {
    throw ParseError(std::string("retrieval cache: ") + e.what());
  }
}

CachingKBClient::CachingKBClient(KBClient& upstream, fs::path cache_dir, WarningSink warn)
    : upstream_(upstream), dir_(std::move(cache_dir)), warn_(std::move(warn)) {}

fs::path CachingKBClient::entry_path(KnowledgeBase source, const std::string& query) const {
  return dir_ / std::string(to_string(source)) / (sha256_hex(query) + ".json");
}

RetrievalResult CachingKBClient::fetch(KnowledgeBase source, const std::string& query) {
  if (trim(query).empty()) throw PreconditionError("knowledge-base query must be non-empty");
  const fs::path path = entry_path(source, query);
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      RetrievalResult r = deserialize_retrieval(buf.str());
      if (r.query != query || r.source != source) throw ParseError("entry belongs to another query");
      r.from_cache = true;
      return r;
    } catch (const ParseError& e) {
      if (warn_) warn_("corrupt cache entry " + path.string() + " (" + e.what() + "); re-fetching");
    }
  }
  RetrievalResult r = upstream_.fetch(source, query);
  r.from_cache = false;
  write_file_atomic(path, serialize_retrieval(r));
  return r;
}

// ---------------------------------------------------------------- retrieval

RetrievalResult fetch_related_words(KBClient& client, const std::string& query) {
  if (trim(query).empty()) throw PreconditionError("knowledge-base query must be non-empty");
  return client.fetch(KnowledgeBase::related_words, query);
}

RetrievalResult fetch_reverse_dictionary(KBClient& client, const std::string& query) {
  if (trim(query).empty()) throw PreconditionError("knowledge-base query must be non-empty");
  return client.fetch(KnowledgeBase::reverse_dictionary, query);
}

namespace {

std::vector<LabelTerm> positive_terms(const RetrievalResult& r) {
  std::vector<LabelTerm> out;
  for (const auto& item : r.items) {
    std::string text = trim(item.word);
    if (text.empty() || !(item.score > 0.0)) continue;
    out.push_back(retrieved_term(std::move(text), item.score, term_source(r.source)));
  }
  return out;
}

}  // namespace

std::vector<LabelTerm> retrieve_terms(KBClient& client, const ClassLabel& label) {
  const std::string query = label.query_text.empty() ? to_lower(trim(label.name)) : label.query_text;
  std::exception_ptr related_error;
  try {
    auto terms = positive_terms(fetch_related_words(client, query));
    if (!terms.empty()) return terms;
  } catch (const RetrievalError&) {
    related_error = std::current_exception();
  }
  try {
    return positive_terms(fetch_reverse_dictionary(client, query));
  } catch (const RetrievalError& e) {
    if (related_error) {
      throw RetrievalError(query, e.status(),
                           "both knowledge bases failed for '" + query + "': " + e.what());
    }
    throw;
  }
}

std::vector<LabelTerm> cached_retrieve(KBClient& client, const ClassLabel& label,
                                       const fs::path& cache_dir, WarningSink warn) {
  CachingKBClient cache(client, cache_dir, std::move(warn));
  return retrieve_terms(cache, label);
}

std::vector<std::vector<LabelTerm>> retrieve_all(KBClient& client,
                                                 const std::vector<ClassLabel>& classes,
                                                 int max_parallel) {
  std::vector<std::vector<LabelTerm>> results(classes.size());
  std::vector<std::exception_ptr> errors(classes.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < classes.size(); i = next.fetch_add(1)) {
      try {
        results[i] = retrieve_terms(client, classes[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(classes.size(), static_cast<std::size_t>(std::max(1, max_parallel)));
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// ---------------------------------------------------------------- files

void write_raw_terms(const fs::path& path, const std::vector<RawTerm>& terms) {
  std::ostringstream out;
  for (const auto& rt : terms) {
    json line = {{"class_id", rt.class_id},
                 {"text", rt.term.text},
                 {"kb_score", rt.term.kb_score},
                 {"source", std::string(to_string(rt.term.source))}};
    out << line.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<RawTerm> read_raw_terms(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open raw terms file " + path.string());
  std::vector<RawTerm> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      json j = json::parse(line);
      RawTerm rt;
      rt.class_id = j.at("class_id").get<int>();
      rt.term = retrieved_term(j.at("text").get<std::string>(), j.at("kb_score").get<double>(),
                               parse_term_source(j.at("source").get<std::string>()));
      out.push_back(std::move(rt));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

Verbalizer raw_verbalizer(const std::vector<ClassLabel>& classes, const std::vector<RawTerm>& terms) {
  Verbalizer v = new_verbalizer(classes);
  std::vector<std::vector<LabelTerm>> per_class(v.num_classes());
  for (const auto& rt : terms) {
    if (rt.class_id < 0 || static_cast<std::size_t>(rt.class_id) >= per_class.size()) {
      throw PreconditionError("raw term '" + rt.term.text + "' names unknown class " +
                              std::to_string(rt.class_id));
    }
    per_class[static_cast<std::size_t>(rt.class_id)].push_back(rt.term);
  }
  for (std::size_t i = 0; i < per_class.size(); ++i) {
    v = add_terms(v, static_cast<int>(i), per_class[i]);
  }
  return v;
}

std::vector<ClassLabel> read_class_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open class file " + path.string());
  std::vector<ClassLabel> classes;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tab = t.find('\t');
    ClassLabel c = make_class(static_cast<int>(classes.size()), trim(t.substr(0, tab)));
    if (tab != std::string::npos) c.query_text = trim(t.substr(tab + 1));
    classes.push_back(std::move(c));
  }
  if (classes.empty()) throw ConfigError("class file " + path.string() + " lists no classes");
  return classes;
}

}  // namespace kverb
