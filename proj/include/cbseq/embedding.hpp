#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "cbseq/common.hpp"
#include "cbseq/rng.hpp"
#include "cbseq/sequences.hpp"

namespace cbseq {

struct CbowConfig {
  int dim = 100;
  int window = 5;      // context words each side
  int negatives = 5;
  int epochs = 5;
  double lr = 0.025;   // linearly decayed over training
  int min_count = 1;
  std::uint64_t seed = 42;
};

/// One CBOW word2vec model for a single sequence type. Tokens are the
/// integer values appearing in that sequence type; each behavior
/// sequence is one sentence.
class EmbeddingModel {
 public:
  SeqType sequence_type = SeqType::PN;
  int dim = 0;
  std::vector<std::uint32_t> tokens;          // index -> token value
  std::map<std::uint32_t, std::size_t> vocab; // token value -> index
  std::vector<float> input_vectors;           // vocab_size x dim
  std::vector<float> output_vectors;          // negative-sampling weights
  std::vector<double> epoch_loss;             // mean loss per epoch

  std::size_t vocab_size() const { return tokens.size(); }

  const float* input_row(std::size_t idx) const {
    return input_vectors.data() + idx * static_cast<std::size_t>(dim);
  }

  /// Vector for a token. Numeric sequence types map out-of-vocabulary
  /// tokens to the numerically nearest known token (ties to the smaller
  /// one); port types fall back to the UNK vector, the mean of all
  /// input vectors.
  std::vector<float> embed_token(std::uint32_t token) const {
    auto it = vocab.find(token);
    if (it != vocab.end()) {
      const float* row = input_row(it->second);
      return std::vector<float>(row, row + dim);
    }
    if (sequence_type == SeqType::PN || sequence_type == SeqType::IAT) {
      std::size_t idx = nearest_token_index(token);
      const float* row = input_row(idx);
      return std::vector<float>(row, row + dim);
    }
    return unk_vector();
  }

  std::vector<float> unk_vector() const {
    std::vector<float> mean(static_cast<std::size_t>(dim), 0.0f);
    if (tokens.empty()) return mean;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const float* row = input_row(i);
      for (int d = 0; d < dim; ++d) mean[static_cast<std::size_t>(d)] += row[d];
    }
    for (auto& v : mean) v /= static_cast<float>(tokens.size());
    return mean;
  }

  std::size_t nearest_token_index(std::uint32_t token) const {
    // sorted_by_value_ holds vocab indices ordered by token value.
    if (sorted_by_value_.empty()) build_value_index();
    auto cmp = [&](std::size_t idx, std::uint32_t value) {
      return tokens[idx] < value;
    };
    auto it = std::lower_bound(sorted_by_value_.begin(),
                               sorted_by_value_.end(), token, cmp);
    if (it == sorted_by_value_.begin()) return *it;
    if (it == sorted_by_value_.end()) return sorted_by_value_.back();
    std::size_t hi = *it, lo = *(it - 1);
    std::uint64_t dhi = static_cast<std::uint64_t>(tokens[hi]) - token;
    std::uint64_t dlo = static_cast<std::uint64_t>(token) - tokens[lo];
    return dlo <= dhi ? lo : hi;  // ties prefer the smaller token
  }

 private:
  mutable std::vector<std::size_t> sorted_by_value_;

  void build_value_index() const {
    sorted_by_value_.resize(tokens.size());
    std::iota(sorted_by_value_.begin(), sorted_by_value_.end(),
              std::size_t{0});
    std::sort(sorted_by_value_.begin(), sorted_by_value_.end(),
              [&](std::size_t a, std::size_t b) {
                return tokens[a] < tokens[b];
              });
  }
};

namespace cbow_detail {

inline double sigmoid(double x) {
  if (x > 30.0) return 1.0;
  if (x < -30.0) return 0.0;
  return 1.0 / (1.0 + std::exp(-x));
}

/// Unigram table raised to the 3/4 power, the standard negative-sampling
/// noise distribution.
inline std::vector<std::size_t> build_unigram_table(
    const std::vector<std::uint64_t>& counts, std::size_t table_size) {
  std::vector<std::size_t> table;
  table.reserve(table_size);
  double total = 0.0;
  for (auto c : counts) total += std::pow(static_cast<double>(c), 0.75);
  std::size_t idx = 0;
  double cum = std::pow(static_cast<double>(counts[0]), 0.75) / total;
  for (std::size_t i = 0; i < table_size; ++i) {
    table.push_back(idx);
    if (static_cast<double>(i) / static_cast<double>(table_size) > cum &&
        idx + 1 < counts.size()) {
      ++idx;
      cum += std::pow(static_cast<double>(counts[idx]), 0.75) / total;
    }
  }
  return table;
}

}  // namespace cbow_detail

/// Trains a CBOW model with negative sampling. Context input vectors are
/// averaged, scored against the center word and the drawn noise words by
/// sigmoid, and updated by SGD with a linearly decaying rate. Training
/// is single threaded and fully determined by the seed.
inline EmbeddingModel train_cbow(
    const std::vector<std::vector<std::uint32_t>>& corpus, SeqType type,
    const CbowConfig& cfg = {}) {
  if (corpus.empty()) throw Error("embed-train", "empty corpus");
  if (cfg.dim <= 0) throw Error("embed-train", "dim must be positive");
  if (cfg.window <= 0 || cfg.negatives < 0 || cfg.epochs <= 0)
    throw Error("embed-train", "invalid CBOW configuration");

  // Vocabulary: tokens with frequency >= min_count, ordered by
  // (frequency desc, token asc) for a reproducible layout.
  std::map<std::uint32_t, std::uint64_t> freq;
  std::uint64_t total_words = 0;
  for (const auto& sent : corpus)
    for (auto tok : sent) {
      ++freq[tok];
      ++total_words;
    }
  std::vector<std::pair<std::uint32_t, std::uint64_t>> items(freq.begin(),
                                                             freq.end());
  std::erase_if(items, [&](const auto& kv) {
    return kv.second < static_cast<std::uint64_t>(cfg.min_count);
  });
  if (items.empty()) throw Error("embed-train", "no tokens pass min_count");
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  EmbeddingModel model;
  model.sequence_type = type;
  model.dim = cfg.dim;
  std::vector<std::uint64_t> counts;
  for (const auto& [tok, c] : items) {
    model.vocab[tok] = model.tokens.size();
    model.tokens.push_back(tok);
    counts.push_back(c);
  }
  const std::size_t V = model.tokens.size();
  const auto D = static_cast<std::size_t>(cfg.dim);

  Rng rng = Rng(cfg.seed).substream(0xCB0);
  model.input_vectors.resize(V * D);
  model.output_vectors.assign(V * D, 0.0f);
  for (auto& v : model.input_vectors)
    v = static_cast<float>((rng.next_double() - 0.5) / cfg.dim);

  std::size_t table_size = std::max<std::size_t>(V * 16, 4096);
  auto unigram = cbow_detail::build_unigram_table(counts, table_size);

  std::vector<double> hidden(D), grad_hidden(D);
  const std::uint64_t total_steps =
      std::max<std::uint64_t>(1, total_words * static_cast<std::uint64_t>(
                                                   cfg.epochs));
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::uint64_t loss_terms = 0;
    for (const auto& sent : corpus) {
      // Sentence positions whose token survived min_count.
      std::vector<std::size_t> ids;
      ids.reserve(sent.size());
      for (auto tok : sent) {
        auto it = model.vocab.find(tok);
        if (it != model.vocab.end()) ids.push_back(it->second);
      }
      for (std::size_t pos = 0; pos < ids.size(); ++pos) {
        double lr = cfg.lr *
                    (1.0 - static_cast<double>(step) /
                               static_cast<double>(total_steps));
        lr = std::max(lr, cfg.lr * 1e-4);
        ++step;

        // Uniformly shrunk window, the classic word2vec scheme: nearer
        // context words participate more often.
        auto win = static_cast<std::size_t>(
            1 + rng.next_below(static_cast<std::uint64_t>(cfg.window)));
        std::size_t lo = pos >= win ? pos - win : 0;
        std::size_t hi = std::min(ids.size(), pos + win + 1);
        std::fill(hidden.begin(), hidden.end(), 0.0);
        std::size_t ctx = 0;
        for (std::size_t j = lo; j < hi; ++j) {
          if (j == pos) continue;
          const float* row = model.input_vectors.data() + ids[j] * D;
          for (std::size_t d = 0; d < D; ++d) hidden[d] += row[d];
          ++ctx;
        }
        if (ctx == 0) continue;
        for (auto& h : hidden) h /= static_cast<double>(ctx);
        std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);

        // Positive target plus drawn negatives.
        for (int k = 0; k <= cfg.negatives; ++k) {
          std::size_t target;
          double label;
          if (k == 0) {
            target = ids[pos];
            label = 1.0;
          } else {
            target = unigram[rng.next_below(unigram.size())];
            if (target == ids[pos]) continue;
            label = 0.0;
          }
          float* out = model.output_vectors.data() + target * D;
          double dot = 0.0;
          for (std::size_t d = 0; d < D; ++d) dot += hidden[d] * out[d];
          double p = cbow_detail::sigmoid(dot);
          loss_sum += label > 0.5 ? -std::log(std::max(p, 1e-10))
                                  : -std::log(std::max(1.0 - p, 1e-10));
          ++loss_terms;
          double g = (label - p) * lr;
          for (std::size_t d = 0; d < D; ++d) {
            grad_hidden[d] += g * out[d];
            out[d] += static_cast<float>(g * hidden[d]);
          }
        }
        // Distribute the hidden gradient to every context vector.
        for (std::size_t j = lo; j < hi; ++j) {
          if (j == pos) continue;
          float* row = model.input_vectors.data() + ids[j] * D;
          for (std::size_t d = 0; d < D; ++d)
            row[d] += static_cast<float>(grad_hidden[d] /
                                         static_cast<double>(ctx));
        }
      }
    }
    model.epoch_loss.push_back(
        loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0);
  }
  return model;
}

/// Four equal-length embedding matrices for one behavior sequence,
/// row i of matrix k being the embedding of token i of sequence type k.
struct BehaviorEmbedding {
  int dim = 0;
  std::size_t length = 0;
  std::array<std::vector<float>, 4> rows;  // each length x dim, row-major

  const float* row(int seq, std::size_t i) const {
    return rows[static_cast<std::size_t>(seq)].data() +
           i * static_cast<std::size_t>(dim);
  }
};

inline BehaviorEmbedding embed_sequence(
    const std::array<const EmbeddingModel*, 4>& models,
    const ChannelSequence& tokens, std::size_t max_len = 0) {
  if (tokens.size() == 0)
    throw Error("embed", "cannot embed an empty behavior sequence");
  for (const auto* m : models)
    if (!m) throw Error("embed", "missing embedding model");
  BehaviorEmbedding emb;
  emb.dim = models[0]->dim;
  emb.length = max_len ? std::min(tokens.size(), max_len) : tokens.size();
  for (int s = 0; s < 4; ++s) {
    if (models[static_cast<std::size_t>(s)]->dim != emb.dim)
      throw Error("embed", "embedding models disagree on dimension");
    const auto& list = tokens_of(tokens, static_cast<SeqType>(s));
    auto& out = emb.rows[static_cast<std::size_t>(s)];
    out.resize(emb.length * static_cast<std::size_t>(emb.dim));
    for (std::size_t i = 0; i < emb.length; ++i) {
      auto vec = models[static_cast<std::size_t>(s)]->embed_token(list[i]);
      std::copy(vec.begin(), vec.end(),
                out.begin() + static_cast<std::ptrdiff_t>(
                                  i * static_cast<std::size_t>(emb.dim)));
    }
  }
  return emb;
}

// --- model files ------------------------------------------------------------
// Text format: header "<vocab_size> <dim>", then one line per token with
// its input vector. Output vectors go to a sibling "<path>.out" file so
// training can resume.

inline void save_embedding(const EmbeddingModel& model,
                           const std::string& path,
                           bool with_output_vectors = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("embed-train", "cannot write " + path);
  out << model.vocab_size() << ' ' << model.dim << '\n';
  for (std::size_t i = 0; i < model.vocab_size(); ++i) {
    out << model.tokens[i];
    const float* row = model.input_row(i);
    for (int d = 0; d < model.dim; ++d) out << ' ' << format_float(row[d]);
    out << '\n';
  }
  if (!with_output_vectors) return;
  std::ofstream sib(path + ".out", std::ios::binary);
  if (!sib) throw Error("embed-train", "cannot write " + path + ".out");
  sib << model.vocab_size() << ' ' << model.dim << '\n';
  for (std::size_t i = 0; i < model.vocab_size(); ++i) {
    sib << model.tokens[i];
    const float* row =
        model.output_vectors.data() + i * static_cast<std::size_t>(model.dim);
    for (int d = 0; d < model.dim; ++d) sib << ' ' << format_float(row[d]);
    sib << '\n';
  }
}

inline EmbeddingModel load_embedding(const std::string& path, SeqType type) {
  std::ifstream in(path);
  if (!in) throw Error("embed", "cannot open embedding file: " + path);
  EmbeddingModel model;
  model.sequence_type = type;
  std::size_t vocab = 0;
  if (!(in >> vocab >> model.dim) || model.dim <= 0)
    throw Error("embed", "malformed embedding header in " + path);
  model.input_vectors.resize(vocab * static_cast<std::size_t>(model.dim));
  for (std::size_t i = 0; i < vocab; ++i) {
    std::uint32_t tok;
    if (!(in >> tok))
      throw Error("embed", "truncated embedding file: " + path);
    model.vocab[tok] = i;
    model.tokens.push_back(tok);
    for (int d = 0; d < model.dim; ++d) {
      float v;
      if (!(in >> v))
        throw Error("embed", "truncated embedding file: " + path);
      model.input_vectors[i * static_cast<std::size_t>(model.dim) +
                          static_cast<std::size_t>(d)] = v;
    }
  }
  std::ifstream sib(path + ".out");
  if (sib) {
    std::size_t v2;
    int d2;
    if ((sib >> v2 >> d2) && v2 == vocab && d2 == model.dim) {
      model.output_vectors.resize(vocab *
                                  static_cast<std::size_t>(model.dim));
      for (std::size_t i = 0; i < vocab; ++i) {
        std::uint32_t tok;
        sib >> tok;
        for (int d = 0; d < model.dim; ++d)
          sib >> model.output_vectors[i * static_cast<std::size_t>(model.dim) +
                                      static_cast<std::size_t>(d)];
      }
    }
  }
  return model;
}

}  // namespace cbseq
