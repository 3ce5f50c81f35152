#include "kverb/nli_filter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kverb/errors.hpp"
#include "kverb/hashing.hpp"
#include "kverb/optim.hpp"
#include "kverb/rng.hpp"
#include "kverb/text.hpp"

namespace kverb {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- data

BinarizeReport binarize_scinli(std::span<const RawNLIExample> raw) {
  BinarizeReport report;
  for (const auto& ex : raw) {
    const std::string label = to_lower(trim(ex.label));
    NLIPair pair{ex.premise, ex.hypothesis, NLILabel::entailment};
    if (label == "entailment") {
      pair.label = NLILabel::entailment;
    } else if (label == "contrasting" || label == "contradiction") {
      pair.label = NLILabel::contradiction;
    } else {
      ++report.dropped[label];
      continue;
    }
    if (trim(pair.premise).empty() || trim(pair.hypothesis).empty()) {
      ++report.dropped["<empty sentence>"];
      continue;
    }
    report.pairs.push_back(std::move(pair));
  }
  if (report.pairs.empty()) {
    throw ConfigError("no NLI pairs map onto entailment/contradiction");
  }
  return report;
}

std::vector<RawNLIExample> read_nli_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open NLI pair file " + path.string());
  std::vector<RawNLIExample> out;
  std::string line;
  std::size_t lineno = 0;
  auto pick = [](const json& j, const char* a, const char* b) {
    return j.contains(a) ? j.at(a).get<std::string>() : j.at(b).get<std::string>();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      out.push_back({pick(j, "premise", "sentence1"), pick(j, "hypothesis", "sentence2"),
                     j.at("label").get<std::string>()});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- pooling

PooledEmbeddings::Pooled PooledEmbeddings::pool(std::string_view sentence, int max_length) const {
  Pooled out;
  out.vector.assign(dim, 0.0);
  auto tokens = word_tokens(sentence);
  if (max_length > 0 && tokens.size() > static_cast<std::size_t>(max_length)) {
    tokens.resize(static_cast<std::size_t>(max_length));
  }
  std::map<std::size_t, double> weight;
  double total = 0.0;
  for (const auto& tok : tokens) {
    auto it = vocab.find(tok);
    if (it == vocab.end()) continue;
    weight[it->second] += idf[it->second];
    total += idf[it->second];
  }
  if (total <= 0.0) return out;
  for (const auto& [row, w] : weight) {
    const double coef = w / total;
    out.rows.emplace_back(row, coef);
    for (std::size_t k = 0; k < dim; ++k) out.vector[k] += coef * table[row * dim + k];
  }
  return out;
}

namespace {

PooledEmbeddings init_embeddings(std::span<const NLIPair> pairs, const EncoderTrainingConfig& cfg) {
  if (cfg.dim <= 0) throw ConfigError("encoder dim must be positive");
  PooledEmbeddings emb;
  emb.dim = static_cast<std::size_t>(cfg.dim);
  std::map<std::string, std::size_t> df;
  std::size_t docs = 0;
  for (const auto& p : pairs) {
    for (const auto* s : {&p.premise, &p.hypothesis}) {
      auto toks = word_tokens(*s);
      std::set<std::string> uniq(toks.begin(), toks.end());
      for (const auto& t : uniq) ++df[t];
      ++docs;
    }
  }
  for (const auto& [tok, count] : df) {
    emb.vocab.emplace(tok, emb.idf.size());
    emb.idf.push_back(std::log((1.0 + static_cast<double>(docs)) / (1.0 + static_cast<double>(count))) +
                      1.0);
  }
  Rng rng(cfg.seed);
  emb.table.resize(emb.vocab.size() * emb.dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(emb.dim));
  for (auto& x : emb.table) x = rng.normal() * scale;
  return emb;
}

std::vector<double> unit_or_basis(std::vector<double> v) {
  double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (norm < 1e-12) {
    std::fill(v.begin(), v.end(), 0.0);
    if (!v.empty()) v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= norm;
  return v;
}

void scatter(const PooledEmbeddings::Pooled& pooled, std::span<const double> grad,
             std::vector<double>& table_grad, std::size_t dim) {
  for (const auto& [row, coef] : pooled.rows) {
    for (std::size_t k = 0; k < dim; ++k) table_grad[row * dim + k] += coef * grad[k];
  }
}

json embeddings_to_json(const PooledEmbeddings& emb) {
  std::vector<std::string> tokens(emb.vocab.size());
  for (const auto& [tok, idx] : emb.vocab) tokens[idx] = tok;
  return {{"dim", emb.dim}, {"tokens", tokens}, {"idf", emb.idf}, {"table", emb.table}};
}

PooledEmbeddings embeddings_from_json(const json& j) {
  PooledEmbeddings emb;
  emb.dim = j.at("dim").get<std::size_t>();
  auto tokens = j.at("tokens").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < tokens.size(); ++i) emb.vocab.emplace(tokens[i], i);
  emb.idf = j.at("idf").get<std::vector<double>>();
  emb.table = j.at("table").get<std::vector<double>>();
  if (emb.idf.size() != tokens.size() || emb.table.size() != tokens.size() * emb.dim) {
    throw ParseError("encoder weights: inconsistent table sizes");
  }
  return emb;
}

json config_to_json(const EncoderTrainingConfig& c) {
  return {{"epochs", c.epochs},       {"learning_rate", format_double(c.learning_rate)},
          {"batch_size", c.batch_size}, {"max_length", c.max_length},
          {"dim", c.dim},             {"seed", c.seed}};
}

EncoderTrainingConfig config_from_json(const json& j) {
  EncoderTrainingConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = parse_double(j.at("learning_rate").get<std::string>());
  c.batch_size = j.at("batch_size").get<int>();
  c.max_length = j.at("max_length").get<int>();
  c.dim = j.at("dim").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_encoder(const fs::path& dir, const std::string& kind, const std::string& trained_on,
                  const EncoderTrainingConfig& config, json weights) {
  fs::create_directories(dir);
  weights["config"] = config_to_json(config);
  write_file(dir / "weights.json", weights.dump() + "\n");
  json manifest = {{"kind", kind}, {"trained_on", trained_on}, {"config_hash", encoder_config_hash(config)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

json load_encoder(const fs::path& dir, const std::string& kind) {
  auto manifest = read_encoder_manifest(dir);
  if (manifest.kind != kind) {
    throw ParseError(dir.string() + ": expected a " + kind + "-encoder, found '" + manifest.kind + "'");
  }
  return read_json_file(dir / "weights.json");
}

void check_trainable(std::span<const NLIPair> pairs, const EncoderTrainingConfig& config) {
  if (pairs.empty()) throw PreconditionError("encoder training needs at least one NLI pair");
  if (config.batch_size <= 0 || config.epochs < 0) throw ConfigError("invalid encoder training config");
}

std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string encoder_config_hash(const EncoderTrainingConfig& config) {
  return sha256_hex(config_to_json(config).dump());
}

EncoderManifest read_encoder_manifest(const fs::path& dir) {
  json j = read_json_file(dir / "manifest.json");
  try {
    return {j.at("kind").get<std::string>(), j.at("trained_on").get<std::string>(),
            j.at("config_hash").get<std::string>()};
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- bi-encoder

std::vector<double> BiEncoder::encode(std::string_view sentence) const {
  return unit_or_basis(emb_.pool(sentence, config_.max_length).vector);
}

BiEncoder train_bi_encoder(std::span<const NLIPair> pairs, const EncoderTrainingConfig& config) {
  check_trainable(pairs, config);
  BiEncoder enc;
  enc.config_ = config;
  enc.emb_ = init_embeddings(pairs, config);
  const std::size_t dim = enc.emb_.dim;
  Adam adam(enc.emb_.table.size(), config.learning_rate);
  std::vector<double> grad(enc.emb_.table.size());
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto order = iota_order(pairs.size());
  std::vector<double> du(dim), dv(dim);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      std::size_t used = 0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& p = pairs[order[b]];
        auto pu = enc.emb_.pool(p.premise, config.max_length);
        auto pv = enc.emb_.pool(p.hypothesis, config.max_length);
        const auto& u = pu.vector;
        const auto& v = pv.vector;
        const double nu = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
        const double nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        if (nu < 1e-12 || nv < 1e-12) continue;
        const double cos = std::inner_product(u.begin(), u.end(), v.begin(), 0.0) / (nu * nv);
        const double target = p.label == NLILabel::entailment ? 1.0 : -1.0;
        const double dcos = 2.0 * (cos - target);
        for (std::size_t k = 0; k < dim; ++k) {
          du[k] = dcos * (v[k] / (nu * nv) - cos * u[k] / (nu * nu));
          dv[k] = dcos * (u[k] / (nu * nv) - cos * v[k] / (nv * nv));
        }
        scatter(pu, du, grad, dim);
        scatter(pv, dv, grad, dim);
        ++used;
      }
      if (used == 0) continue;
      for (auto& g : grad) g /= static_cast<double>(used);
      adam.step(enc.emb_.table, grad);
    }
  }
  return enc;
}

void BiEncoder::save(const fs::path& dir, const std::string& trained_on) const {
  save_encoder(dir, "bi", trained_on, config_, {{"embeddings", embeddings_to_json(emb_)}});
}

BiEncoder BiEncoder::load(const fs::path& dir) {
  json w = load_encoder(dir, "bi");
  BiEncoder enc;
  try {
    enc.config_ = config_from_json(w.at("config"));
    enc.emb_ = embeddings_from_json(w.at("embeddings"));
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + ": " + e.what());
  }
  return enc;
}

// ---------------------------------------------------------------- cross-encoder

double CrossEncoder::logit(const std::vector<double>& u, const std::vector<double>& v) const {
  const std::size_t dim = emb_.dim;
  double z = bias_;
  for (std::size_t k = 0; k < dim; ++k) {
    z += head_[k] * std::abs(u[k] - v[k]) + head_[dim + k] * u[k] * v[k];
  }
  return z;
}

double CrossEncoder::score(std::string_view first, std::string_view second) const {
  auto u = emb_.pool(first, config_.max_length).vector;
  auto v = emb_.pool(second, config_.max_length).vector;
  return 1.0 / (1.0 + std::exp(-logit(u, v)));
}

CrossEncoder train_cross_encoder(std::span<const NLIPair> pairs, const EncoderTrainingConfig& config) {
  check_trainable(pairs, config);
  CrossEncoder enc;
  enc.config_ = config;
  enc.emb_ = init_embeddings(pairs, config);
  const std::size_t dim = enc.emb_.dim;
  Rng init(config.seed + 17);
  enc.head_.resize(2 * dim);
  for (auto& h : enc.head_) h = 0.1 * init.normal();

  Adam adam_table(enc.emb_.table.size(), config.learning_rate);
  Adam adam_head(enc.head_.size() + 1, config.learning_rate);
  std::vector<double> grad_table(enc.emb_.table.size());
  std::vector<double> grad_head(enc.head_.size() + 1);
  std::vector<double> head_params(enc.head_.size() + 1);
  std::vector<double> du(dim), dv(dim);
  Rng rng(config.seed ^ 0x5bd1e995ULL);
  auto order = iota_order(pairs.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::fill(grad_table.begin(), grad_table.end(), 0.0);
      std::fill(grad_head.begin(), grad_head.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const auto& p = pairs[order[b]];
        auto pu = enc.emb_.pool(p.premise, config.max_length);
        auto pv = enc.emb_.pool(p.hypothesis, config.max_length);
        const auto& u = pu.vector;
        const auto& v = pv.vector;
        const double s = 1.0 / (1.0 + std::exp(-enc.logit(u, v)));
        const double y = p.label == NLILabel::contradiction ? 1.0 : 0.0;
        const double dz = s - y;
        for (std::size_t k = 0; k < dim; ++k) {
          const double diff = u[k] - v[k];
          const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          grad_head[k] += dz * std::abs(diff);
          grad_head[dim + k] += dz * u[k] * v[k];
          du[k] = dz * (enc.head_[k] * sign + enc.head_[dim + k] * v[k]);
          dv[k] = dz * (-enc.head_[k] * sign + enc.head_[dim + k] * u[k]);
        }
        grad_head[2 * dim] += dz;
        scatter(pu, du, grad_table, dim);
        scatter(pv, dv, grad_table, dim);
      }
      const double n = static_cast<double>(end - start);
      for (auto& g : grad_table) g /= n;
      for (auto& g : grad_head) g /= n;
      adam_table.step(enc.emb_.table, grad_table);
      std::copy(enc.head_.begin(), enc.head_.end(), head_params.begin());
      head_params.back() = enc.bias_;
      adam_head.step(head_params, grad_head);
      std::copy(head_params.begin(), head_params.end() - 1, enc.head_.begin());
      enc.bias_ = head_params.back();
    }
  }
  return enc;
}

void CrossEncoder::save(const fs::path& dir, const std::string& trained_on) const {
  save_encoder(dir, "cross", trained_on, config_,
               {{"embeddings", embeddings_to_json(emb_)}, {"head", head_}, {"bias", bias_}});
}

CrossEncoder CrossEncoder::load(const fs::path& dir) {
  json w = load_encoder(dir, "cross");
  CrossEncoder enc;
  try {
    enc.config_ = config_from_json(w.at("config"));
    enc.emb_ = embeddings_from_json(w.at("embeddings"));
    enc.head_ = w.at("head").get<std::vector<double>>();
    enc.bias_ = w.at("bias").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + ": " + e.what());
  }
  if (enc.head_.size() != 2 * enc.emb_.dim) throw ParseError(dir.string() + ": head size mismatch");
  return enc;
}

// ---------------------------------------------------------------- filtering

void validate(const FilterConfig& config) {
  if (!(config.mu_be >= -1.0 && config.mu_be <= 1.0)) {
    throw ConfigError("mu_be must lie in [-1, 1], got " + format_double(config.mu_be));
  }
  if (!(config.mu_ce >= 0.0 && config.mu_ce <= 1.0)) {
    throw ConfigError("mu_ce must lie in [0, 1], got " + format_double(config.mu_ce));
  }
}

bool keep_term(double be_score, double ce_score, const FilterConfig& config) {
  const bool be_ok = be_score > config.mu_be && be_score > 0.0;
  const bool ce_ok = config.ce_higher_is_relevant ? ce_score > config.mu_ce : ce_score < config.mu_ce;
  return be_ok && ce_ok;
}

std::pair<std::string, std::string> build_filter_prompts(const ClassLabel& label,
                                                         const LabelTerm& term,
                                                         const PromptTemplate& tmpl) {
  const std::string text = trim(term.text);
  if (text.empty()) throw PreconditionError("filter prompt: empty term text");
  return {tmpl.fill("", to_lower(trim(label.name))), tmpl.fill("", text)};
}

std::vector<FilterScores> score_terms(const Verbalizer& v, const SentenceEncoder& be,
                                      const PairScorer& ce, const FilterConfig& config,
                                      const PromptTemplate& tmpl) {
  validate(config);
  if (v.stage() != Stage::raw) throw PreconditionError("semantic_filter expects a raw verbalizer");
  std::vector<FilterScores> out;
  for (const auto& c : v.classes()) {
    std::vector<double> query_vec;
    for (const auto& t : v.terms(c.id)) {
      if (t.is_seed()) continue;
      auto [query, candidate] = build_filter_prompts(c, t, tmpl);
      if (query_vec.empty()) query_vec = be.encode(query);
      FilterScores s;
      s.class_id = c.id;
      s.term = t;
      s.be_score = cosine(query_vec, be.encode(candidate));
      s.ce_score = ce.score(query, candidate);
      s.kept = keep_term(s.be_score, s.ce_score, config);
      out.push_back(std::move(s));
    }
  }
  return out;
}

Verbalizer apply_filter(const Verbalizer& v, const std::vector<FilterScores>& scores,
                        const FilterConfig& config) {
  validate(config);
  if (v.stage() != Stage::raw) throw PreconditionError("semantic_filter expects a raw verbalizer");
  std::map<std::pair<int, std::string>, const FilterScores*> index;
  for (const auto& s : scores) index[{s.class_id, s.term.text}] = &s;
  Verbalizer out = v;
  for (const auto& c : v.classes()) {
    std::vector<LabelTerm> kept;
    for (const auto& t : v.terms(c.id)) {
      LabelTerm nt = t;
      if (t.is_seed()) {
        nt.semantic_weight = 1.0;
      } else {
        auto it = index.find({c.id, t.text});
        if (it == index.end()) {
          throw PreconditionError("no filter scores for term '" + t.text + "' of class " +
                                  std::to_string(c.id));
        }
        const auto& s = *it->second;
        if (!keep_term(s.be_score, s.ce_score, config)) continue;
        nt.semantic_weight = s.be_score;
      }
      nt.flags.set(StageFlag::filtered);
      kept.push_back(std::move(nt));
    }
    out = replace_terms(out, c.id, std::move(kept));
  }
  return out;
}

Verbalizer semantic_filter(const Verbalizer& v, const SentenceEncoder& be, const PairScorer& ce,
                           const FilterConfig& config, const PromptTemplate& tmpl) {
  return apply_filter(v, score_terms(v, be, ce, config, tmpl), config);
}

}  // namespace kverb
