#include "nltrack/language.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nltrack {

Query tokenize(const std::string& raw) {
  std::string cleaned;
  cleaned.reserve(raw.size());
  for (unsigned char c : raw) {
    if (std::isalnum(c))
      cleaned.push_back(static_cast<char>(std::tolower(c)));
    else
      cleaned.push_back(' ');
  }
  Query q;
  q.raw = raw;
  std::istringstream is(cleaned);
  std::string tok;
  while (is >> tok) q.tokens.push_back(tok);
  if (q.tokens.empty()) throw EmptyQueryError();
  return q;
}

int EmbeddingTable::lookup_row(const std::string& word) const {
  auto it = index.find(word);
  return it == index.end() ? -1 : it->second;
}

nn::Vec EmbeddingTable::lookup(const std::string& word) const {
  const int row = lookup_row(word);
  const double* src = row < 0 ? unknown.w.data()
                              : &vectors.w[static_cast<std::size_t>(row) * dim];
  return nn::Vec(src, src + dim);
}

EmbeddingTable make_embedding_table(const std::vector<std::string>& words,
                                    int dim, nn::Rng& rng) {
  EmbeddingTable t;
  t.dim = dim;
  t.words = words;
  t.vectors = nn::ParamBlock("embed.vectors",
                             {static_cast<int>(words.size()), dim});
  t.unknown = nn::ParamBlock("embed.unknown", {dim});
  for (std::size_t i = 0; i < words.size(); ++i) t.index[words[i]] = static_cast<int>(i);
  nn::init_uniform(t.vectors, 0.5, rng);
  nn::init_uniform(t.unknown, 0.5, rng);
  return t;
}

EmbeddingTable load_embedding_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path.string());
  const int dim = 300;
  std::vector<std::string> words;
  std::vector<double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string word;
    is >> word;
    double v;
    int count = 0;
    while (is >> v) {
      values.push_back(nn::as_f32(v));
      ++count;
    }
    if (count != dim)
      throw std::runtime_error("embedding file line " + std::to_string(line_no) +
                               ": expected 301 fields, got " +
                               std::to_string(count + 1));
    words.push_back(word);
  }
  EmbeddingTable t;
  t.dim = dim;
  t.words = std::move(words);
  t.vectors = nn::ParamBlock("embed.vectors",
                             {static_cast<int>(t.words.size()), dim});
  t.vectors.w = std::move(values);
  t.vectors.g.assign(t.vectors.w.size(), 0.0);
  t.unknown = nn::ParamBlock("embed.unknown", {dim});
  for (std::size_t i = 0; i < t.words.size(); ++i) t.index[t.words[i]] = static_cast<int>(i);
  return t;
}

SentenceEncoder::SentenceEncoder(int dim, nn::Rng& rng)
    : cell("encoder", dim, dim) {
  cell.init(std::sqrt(1.0 / dim), rng);
}

nn::Vec SentenceEncoder::embed(const Query& q, const EmbeddingTable& table) const {
  Cache cache;
  return embed(q, table, cache);
}

nn::Vec SentenceEncoder::embed(const Query& q, const EmbeddingTable& table,
                               Cache& cache) const {
  cache.steps.clear();
  cache.rows.clear();
  nn::Vec h(cell.hidden, 0.0), c(cell.hidden, 0.0);
  for (const auto& tok : q.tokens) {
    cache.rows.push_back(table.lookup_row(tok));
    cache.steps.emplace_back();
    cell.forward(table.lookup(tok), h, c, cache.steps.back());
    h = cache.steps.back().h;
    c = cache.steps.back().c;
  }
  return h;
}

void SentenceEncoder::backward(const Cache& cache, const nn::Vec& dsentence,
                               EmbeddingTable& table) {
  nn::Vec dh = dsentence;
  nn::Vec dc(cell.hidden, 0.0);
  for (int t = static_cast<int>(cache.steps.size()) - 1; t >= 0; --t) {
    nn::Vec dx, dh_prev, dc_prev;
    cell.backward(cache.steps[t], dh, dc, &dx, dh_prev, dc_prev);
    const int row = cache.rows[t];
    double* dst = row < 0 ? table.unknown.g.data()
                          : &table.vectors.g[static_cast<std::size_t>(row) * table.dim];
    for (int i = 0; i < table.dim; ++i) dst[i] += dx[i];
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);
  }
}

SimilarityHead::SimilarityHead(int rf_size, int dim, nn::Rng& rng)
    : proj("sim.proj", rf_size, dim), out("sim.out", dim, 1) {
  nn::init_uniform(proj.w, std::sqrt(1.0 / rf_size), rng);
  nn::init_uniform(out.w, std::sqrt(1.0 / dim), rng);
}

double SimilarityHead::score(const nn::Vec& sentence,
                             const RegionFeature& rf) const {
  Cache cache;
  return score(sentence, rf, cache);
}

double SimilarityHead::score(const nn::Vec& sentence, const RegionFeature& rf,
                             Cache& cache) const {
  if (static_cast<int>(rf.v.size()) != proj.in)
    throw std::invalid_argument("similarity: region feature shape mismatch");
  cache.rf_flat = rf.v;
  proj.forward(cache.rf_flat, cache.z);
  cache.u.assign(proj.out, 0.0);
  for (int i = 0; i < proj.out; ++i) cache.u[i] = cache.z[i] * sentence[i];
  nn::Vec logit;
  out.forward(cache.u, logit);
  cache.logit = logit[0];
  const double s = nn::sigmoid(cache.logit);
  cache.s = std::clamp(s, kSimilarityEps, 1.0 - kSimilarityEps);
  cache.clamped = (s != cache.s);
  return cache.s;
}

void SimilarityHead::backward(const nn::Vec& sentence, const Cache& cache,
                              double ds, nn::Vec* dsentence) {
  const double dlogit = cache.clamped ? 0.0 : ds * cache.s * (1.0 - cache.s);
  nn::Vec du;
  out.backward(cache.u, nn::Vec{dlogit}, &du);
  nn::Vec dz(proj.out, 0.0);
  for (int i = 0; i < proj.out; ++i) {
    dz[i] = du[i] * sentence[i];
    if (dsentence) (*dsentence)[i] += du[i] * cache.z[i];
  }
  proj.backward(cache.rf_flat, dz, nullptr);
}

std::vector<double> target_similarity(const std::vector<Box>& proposals,
                                      const Box& gt) {
  std::vector<double> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(iou(p, gt));
  return out;
}

double language_loss(const std::vector<double>& similarities,
                     const std::vector<double>& targets,
                     std::vector<double>* dsim) {
  if (similarities.size() != targets.size())
    throw std::invalid_argument("language_loss: length mismatch");
  if (dsim) dsim->assign(similarities.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < similarities.size(); ++i) {
    const double s = std::clamp(similarities[i], kSimilarityEps,
                                1.0 - kSimilarityEps);
    const double t = targets[i];
    loss -= t * std::log(s) + (1.0 - t) * std::log(1.0 - s);
    if (dsim) (*dsim)[i] = -(t / s) + (1.0 - t) / (1.0 - s);
  }
  return loss;
}

}  // namespace nltrack
