#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "nltrack/geometry.hpp"
#include "nltrack/nn.hpp"
#include "nltrack/vision.hpp"

namespace nltrack {

struct EmptyQueryError : std::invalid_argument {
  EmptyQueryError() : std::invalid_argument("empty query") {}
};

struct Query {
  std::vector<std::string> tokens;
  std::string raw;
};

// Lowercases, strips punctuation, splits on whitespace.
Query tokenize(const std::string& raw);

struct EmbeddingTable {
  std::vector<std::string> words;  // row order of `vectors`
  std::unordered_map<std::string, int> index;
  nn::ParamBlock vectors;  // [V, dim]
  nn::ParamBlock unknown;  // [dim], shared row for out-of-vocabulary words
  int dim = 300;

  // -1 selects the unknown vector.
  int lookup_row(const std::string& word) const;
  nn::Vec lookup(const std::string& word) const;
};

EmbeddingTable make_embedding_table(const std::vector<std::string>& words,
                                    int dim, nn::Rng& rng);

// One "word v1 ... v300" line per word, whitespace separated, UTF-8.
EmbeddingTable load_embedding_text(const std::filesystem::path& path);

// LSTM over token embeddings; the sentence embedding is the final hidden state.
struct SentenceEncoder {
  nn::LstmCell cell;

  SentenceEncoder() = default;
  SentenceEncoder(int dim, nn::Rng& rng);

  struct Cache {
    std::vector<nn::LstmCell::Cache> steps;
    std::vector<int> rows;
  };

  nn::Vec embed(const Query& q, const EmbeddingTable& table) const;
  nn::Vec embed(const Query& q, const EmbeddingTable& table, Cache& cache) const;
  // Accumulates grads into the cell and the table rows that were read.
  void backward(const Cache& cache, const nn::Vec& dsentence,
                EmbeddingTable& table);
};

inline constexpr double kSimilarityEps = 1e-7;

// flatten(RF) -> linear -> elementwise product with the sentence embedding
// -> linear -> sigmoid, clamped to [eps, 1-eps].
struct SimilarityHead {
  nn::Linear proj;  // a*a*d -> dim
  nn::Linear out;   // dim -> 1

  SimilarityHead() = default;
  SimilarityHead(int rf_size, int dim, nn::Rng& rng);

  struct Cache {
    nn::Vec rf_flat, z, u;
    double logit = 0.0, s = 0.0;
    bool clamped = false;
  };

  double score(const nn::Vec& sentence, const RegionFeature& rf) const;
  double score(const nn::Vec& sentence, const RegionFeature& rf,
               Cache& cache) const;
  void backward(const nn::Vec& sentence, const Cache& cache, double ds,
                nn::Vec* dsentence);
};

std::vector<double> target_similarity(const std::vector<Box>& proposals,
                                      const Box& gt);

// Summed binary cross-entropy over proposals (Bernoulli log loss against
// IoU-valued targets).
double language_loss(const std::vector<double>& similarities,
                     const std::vector<double>& targets,
                     std::vector<double>* dsim = nullptr);

}  // namespace nltrack
