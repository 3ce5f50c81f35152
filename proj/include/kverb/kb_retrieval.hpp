#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kverb/verbalizer.hpp"

namespace kverb {

enum class KnowledgeBase { related_words, reverse_dictionary };

std::string_view to_string(KnowledgeBase kb);
KnowledgeBase parse_knowledge_base(std::string_view s);
TermSource term_source(KnowledgeBase kb);

struct KBResponseItem {
  std::string word;
  double score = 0.0;

  friend bool operator==(const KBResponseItem&, const KBResponseItem&) = default;
};

struct RetrievalResult {
  std::string query;
  KnowledgeBase source = KnowledgeBase::related_words;
  std::vector<KBResponseItem> items;  // KB response order
  std::int64_t fetched_at = 0;        // unix milliseconds
  bool from_cache = false;
};

/// Equality ignoring fetched_at and from_cache.
bool same_content(const RetrievalResult& a, const RetrievalResult& b);

/// Per-source response parsers; both normalize to [{word, score}].
/// Related Words answers with a bare array of {word, score, ...}.
std::vector<KBResponseItem> parse_related_words(std::string_view body);
/// Reverse Dictionary answers with either a bare array or {"results": [...]},
/// items carrying `word` or `term` and `score` or `relevance`.
std::vector<KBResponseItem> parse_reverse_dictionary(std::string_view body);

using WarningSink = std::function<void(const std::string&)>;
/// Writes "warning: <msg>" to stderr.
WarningSink stderr_warnings();

struct KBEndpoint {
  std::string base_url;
  std::string query_param = "query";
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
};

struct RateLimit {
  int max_in_flight = 2;
  std::chrono::milliseconds min_interval{200};
};

struct KBClientOptions {
  KBEndpoint related_words{"https://relatedwords.org/api/related", "term"};
  KBEndpoint reverse_dictionary{"https://reversedictionary.org/api/related", "term"};
  RetryPolicy retry;
  RateLimit rate;
  std::chrono::milliseconds timeout{10000};
};

/// Source-agnostic knowledge-base access.
class KBClient {
 public:
  virtual ~KBClient() = default;
  virtual RetrievalResult fetch(KnowledgeBase source, const std::string& query) = 0;
};

/// HTTP client for both knowledge bases: GET <base_url>?<param>=<query>.
/// Thread-safe; enforces the rate limit across all callers.
class HttpKBClient final : public KBClient {
 public:
  explicit HttpKBClient(KBClientOptions options);
  ~HttpKBClient() override;

  HttpKBClient(const HttpKBClient&) = delete;
  HttpKBClient& operator=(const HttpKBClient&) = delete;

  RetrievalResult fetch(KnowledgeBase source, const std::string& query) override;

  const KBClientOptions& options() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves fetches from `<cache_dir>/<source>/<sha256(query)>.json`, hitting
/// the wrapped client only on a miss or a corrupt entry.
class CachingKBClient final : public KBClient {
 public:
  CachingKBClient(KBClient& upstream, std::filesystem::path cache_dir,
                  WarningSink warn = stderr_warnings());

  RetrievalResult fetch(KnowledgeBase source, const std::string& query) override;

  std::filesystem::path entry_path(KnowledgeBase source, const std::string& query) const;

 private:
  KBClient& upstream_;
  std::filesystem::path dir_;
  WarningSink warn_;
};

std::string serialize_retrieval(const RetrievalResult& r);
RetrievalResult deserialize_retrieval(std::string_view data);

RetrievalResult fetch_related_words(KBClient& client, const std::string& query);
RetrievalResult fetch_reverse_dictionary(KBClient& client, const std::string& query);

/// Related Words first; Reverse Dictionary only when Related Words yields no
/// item scoring above zero. Only items with score > 0 are returned, and all
/// of them come from a single source.
std::vector<LabelTerm> retrieve_terms(KBClient& client, const ClassLabel& label);

std::vector<LabelTerm> cached_retrieve(KBClient& client, const ClassLabel& label,
                                       const std::filesystem::path& cache_dir,
                                       WarningSink warn = stderr_warnings());

/// Retrieves every class, running up to `max_parallel` classes at once.
/// Result i belongs to classes[i].
std::vector<std::vector<LabelTerm>> retrieve_all(KBClient& client,
                                                 const std::vector<ClassLabel>& classes,
                                                 int max_parallel);

/// One line per term: {class_id, text, kb_score, source}.
struct RawTerm {
  int class_id = 0;
  LabelTerm term;
};
void write_raw_terms(const std::filesystem::path& path, const std::vector<RawTerm>& terms);
std::vector<RawTerm> read_raw_terms(const std::filesystem::path& path);

/// Seeds a verbalizer with `classes` and appends the raw terms.
Verbalizer raw_verbalizer(const std::vector<ClassLabel>& classes, const std::vector<RawTerm>& terms);

/// Class file: one class per line, `name` or `name<TAB>query`. Ids follow
/// line order; blank lines and '#' comments are skipped.
std::vector<ClassLabel> read_class_file(const std::filesystem::path& path);

}  // namespace kverb
