#include "toy_data.hpp"

#include <atomic>
#include <fstream>

#include <unistd.h>

#include <json.hpp>

#include "kverb/rng.hpp"

namespace kverb::testing {

namespace fs = std::filesystem;

ToyCorpus make_toy_corpus(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed) {
  ToyCorpus c;
  c.classes = {make_class(0, "Cryptography"), make_class(1, "Databases"), make_class(2, "Robotics")};
  c.topic_words = {
      {"encryption", "cipher", "cryptanalysis", "decryption", "ciphertext", "plaintext", "signatures",
       "hashing", "keys", "adversary", "lattice", "secrecy"},
      {"query", "queries", "sql", "indexing", "transactions", "schema", "relational", "storage", "tables",
       "joins", "olap", "tuples"},
      {"robot", "robots", "manipulator", "locomotion", "actuators", "grasping", "kinematics", "sensors",
       "navigation", "autonomous", "gripper", "odometry"},
  };
  c.fillers = {"we", "propose", "a", "novel", "method", "that", "improves", "results", "on", "several",
               "benchmarks", "and", "show", "experiments", "demonstrate", "approach", "analysis",
               "framework", "performance", "evaluate", "present", "paper", "model", "data", "efficient",
               "new", "based", "using", "our", "these", "significant", "improvements", "over", "prior",
               "work", "setting", "problem", "general", "large", "simple"};
  std::uint64_t n = 0;
  for (int label = 0; label < 3; ++label) {
    for (std::size_t i = 0; i < train_per_class; ++i) {
      c.train.push_back({"train-" + std::to_string(label) + "-" + std::to_string(i),
                         toy_abstract(c, label, 40, seed * 1000003 + n++), label});
    }
    for (std::size_t i = 0; i < test_per_class; ++i) {
      c.test.push_back({"test-" + std::to_string(label) + "-" + std::to_string(i),
                        toy_abstract(c, label, 40, seed * 1000003 + n++), label});
    }
  }
  return c;
}

std::string toy_abstract(const ToyCorpus& corpus, int label, std::size_t tokens, std::uint64_t seed) {
  Rng rng(seed);
  const auto& topic = corpus.topic_words[static_cast<std::size_t>(label)];
  std::vector<std::string> words;
  words.push_back(corpus.classes[static_cast<std::size_t>(label)].query_text);
  const std::size_t n_topic = tokens / 3;
  while (words.size() < 1 + n_topic && words.size() < tokens) {
    words.push_back(topic[rng.uniform_index(topic.size())]);
  }
  while (words.size() < tokens) words.push_back(corpus.fillers[rng.uniform_index(corpus.fillers.size())]);
  rng.shuffle(words);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out + ".";
}

std::vector<RawNLIExample> make_toy_nli(const ToyCorpus& corpus, std::size_t pairs, std::uint64_t seed) {
  static const std::vector<std::string> kGlue = {"we", "show", "that", "results", "and", "new", "work"};
  Rng rng(seed);
  auto sentence = [&](std::size_t topic) {
    const auto& words = corpus.topic_words[topic];
    std::string s = kGlue[rng.uniform_index(kGlue.size())];
    const std::size_t k = 2 + rng.uniform_index(3);
    for (std::size_t i = 0; i < k; ++i) {
      // The class name joins its topic list for the NLI vocabulary.
      const std::size_t pick = rng.uniform_index(words.size() + 1);
      s += " " + (pick == words.size() ? corpus.classes[topic].query_text : words[pick]);
    }
    return s + ".";
  };
  std::vector<RawNLIExample> out;
  const std::size_t n_topics = corpus.topic_words.size();
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t a = rng.uniform_index(n_topics);
    const std::size_t r = rng.uniform_index(10);
    if (r < 4) {
      out.push_back({sentence(a), sentence(a), "entailment"});
    } else if (r < 8) {
      const std::size_t b = (a + 1 + rng.uniform_index(n_topics - 1)) % n_topics;
      out.push_back({sentence(a), sentence(b), "contrasting"});
    } else {
      out.push_back({sentence(a), sentence(a), r == 8 ? "neutral" : "reasoning"});
    }
  }
  return out;
}

void write_nli_jsonl(const fs::path& path, const std::vector<RawNLIExample>& rows) {
  std::ofstream out(path);
  for (const auto& r : rows) {
    out << nlohmann::json{{"sentence1", r.premise}, {"sentence2", r.hypothesis}, {"label", r.label}}.dump()
        << "\n";
  }
}

std::string rw_body(const std::vector<std::pair<std::string, double>>& items) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [w, s] : items) arr.push_back({{"word", w}, {"score", s}});
  return arr.dump();
}

namespace {
std::atomic<int> g_dir_counter{0};
}

TempDir::TempDir(const std::string& tag) {
  path_ = fs::temp_directory_path() /
          ("kverb-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(g_dir_counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path fixture_path(const std::string& name) { return fs::path(KVERB_FIXTURE_DIR) / name; }

}  // namespace kverb::testing
