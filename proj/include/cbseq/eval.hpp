#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cbseq/artifacts.hpp"
#include "cbseq/common.hpp"
#include "cbseq/detector.hpp"
#include "cbseq/embedding.hpp"
#include "cbseq/msformer.hpp"
#include "cbseq/rng.hpp"

namespace cbseq {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// TPR = TP/(TP+FN), FPR = FP/(FP+TN). Errors name the class that is
/// empty.
inline std::pair<double, double> tpr_fpr(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) throw Error("eval", "no positive examples");
  if (c.fp + c.tn == 0) throw Error("eval", "no negative examples");
  return {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn),
          static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn)};
}

inline ConfusionCounts confusion_at(const std::vector<double>& scores,
                                    const std::vector<int>& labels,
                                    double threshold) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bool pred = scores[i] >= threshold;
    if (labels[i]) pred ? ++c.tp : ++c.fn;
    else pred ? ++c.fp : ++c.tn;
  }
  return c;
}

/// AUC as the Mann-Whitney statistic: the probability that a random
/// positive outranks a random negative, ties counted half. Computed via
/// average ranks in O(n log n).
inline double auc(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw Error("eval", "scores/labels length mismatch");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw Error("eval", "AUC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    i = j;
  }
  double u = rank_sum_pos -
             static_cast<double>(pos) * (static_cast<double>(pos) + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;              // trapezoidal area
};

/// ROC over all distinct score thresholds plus infinite sentinels, with
/// the trapezoidal area. Classification rule: positive when score >=
/// threshold.
inline RocCurve roc_curve(const std::vector<double>& scores,
                          const std::vector<int>& labels) {
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw Error("eval", "ROC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      if (labels[order[i]]) ++tp;
      else ++fp;
      ++i;
    }
    curve.points.push_back({thr,
                            static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  if (curve.points.back().fpr != 1.0 || curve.points.back().tpr != 1.0)
    curve.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});

  double area = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& a = curve.points[k - 1];
    const auto& b = curve.points[k];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  curve.auc = area;
  return curve;
}

/// Downsamples the majority class to the minority count, without
/// replacement, deterministically per seed. Returns kept indices in
/// ascending order; balanced input comes back unchanged.
inline std::vector<std::size_t> undersample(const std::vector<int>& labels,
                                            std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw Error("eval", "undersample needs both classes present");
  if (pos.size() == neg.size()) {
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  auto& majority = pos.size() > neg.size() ? pos : neg;
  std::size_t want = std::min(pos.size(), neg.size());
  Rng rng = Rng(seed).substream(0x0DD);
  rng.shuffle(majority);
  majority.resize(want);
  std::vector<std::size_t> kept;
  kept.reserve(2 * want);
  kept.insert(kept.end(), pos.begin(), pos.end());
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

/// Shuffled contiguous k-fold assignment; fold sizes differ by at most
/// one. Every fold must keep both classes, otherwise this throws.
inline std::vector<int> kfold_assign(const std::vector<int>& labels, int k,
                                     std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw Error("eval", "k-fold needs k >= 2");
  if (static_cast<std::size_t>(k) > n)
    throw Error("eval", "k-fold needs at least k items");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).substream(0xF01D);
  rng.shuffle(order);
  std::vector<int> fold(n, 0);
  std::size_t base = n / static_cast<std::size_t>(k);
  std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t at = 0;
  for (int f = 0; f < k; ++f) {
    std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold[order[at++]] = f;
  }
  for (int f = 0; f < k; ++f) {
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i)
      if (fold[i] == f) (labels[i] ? pos : neg) = true;
    if (!pos || !neg)
      throw Error("eval", "fold " + std::to_string(f) +
                              " lost a class; use more data or fewer folds");
  }
  return fold;
}

// --- experiment protocols ---------------------------------------------------

struct EvalConfig {
  int folds = 5;
  int repeats = 10;
  double threshold = 0.5;
  std::uint64_t seed = 42;
  CbowConfig embedding;
  MsfConfig model;
};

struct RunMetrics {
  int run = 0;
  int fold = 0;
  double tpr = 0.0, fpr = 0.0, auc = 0.0;
};

struct EvalReport {
  std::vector<RunMetrics> rows;
  double mean_tpr = 0, mean_fpr = 0, mean_auc = 0;
  double std_tpr = 0, std_fpr = 0, std_auc = 0;
  std::vector<double> pooled_scores;  // all held-out scores
  std::vector<int> pooled_labels;
};

namespace eval_detail {

struct TrainedStack {
  std::array<EmbeddingModel, 4> embeddings;
  Msformer model;
};

/// Trains the word2vec models on the training split only, then the
/// classifier on the embedded training examples.
inline TrainedStack train_stack(const std::vector<const BehaviorSeqArtifact*>& train,
                                const EvalConfig& cfg, std::uint64_t seed) {
  TrainedStack stack;
  for (int s = 0; s < 4; ++s) {
    std::vector<std::vector<std::uint32_t>> corpus;
    corpus.reserve(train.size());
    for (const auto* bs : train)
      corpus.push_back(tokens_of(bs->tokens, static_cast<SeqType>(s)));
    CbowConfig ecfg = cfg.embedding;
    ecfg.seed = Rng(seed).substream(0xE000 + static_cast<std::uint64_t>(s))
                    .next_u64();
    stack.embeddings[static_cast<std::size_t>(s)] =
        train_cbow(corpus, static_cast<SeqType>(s), ecfg);
  }
  std::array<const EmbeddingModel*, 4> models{
      &stack.embeddings[0], &stack.embeddings[1], &stack.embeddings[2],
      &stack.embeddings[3]};
  MsfConfig mcfg = cfg.model;
  mcfg.emb_dim = cfg.embedding.dim;
  mcfg.seed = Rng(seed).substream(0x712A).next_u64();
  stack.model = msformer_init<float>(mcfg);
  std::vector<TrainExample> data;
  data.reserve(train.size());
  for (const auto* bs : train)
    data.push_back(to_example<float>(models, bs->tokens,
                                     bs->label == Label::Malware ? 1 : 0,
                                     mcfg.max_len));
  msformer_train(stack.model, data);
  return stack;
}

inline std::pair<std::vector<double>, std::vector<int>> score_set(
    const TrainedStack& stack, const std::vector<const BehaviorSeqArtifact*>& test,
    int max_len) {
  std::array<const EmbeddingModel*, 4> models{
      &stack.embeddings[0], &stack.embeddings[1], &stack.embeddings[2],
      &stack.embeddings[3]};
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto* bs : test) {
    auto ex = to_example<float>(models, bs->tokens, 0, max_len);
    auto fwd = msformer_forward(stack.model, ex.emb, ex.valid);
    scores.push_back(static_cast<double>(fwd.probs[1]));
    labels.push_back(bs->label == Label::Malware ? 1 : 0);
  }
  return {scores, labels};
}

inline void summarize(EvalReport& report) {
  // Mean over rows, stddev over per-run means.
  std::map<int, std::vector<const RunMetrics*>> by_run;
  for (const auto& r : report.rows) by_run[r.run].push_back(&r);
  std::vector<double> run_tpr, run_fpr, run_auc;
  for (const auto& [run, rows] : by_run) {
    double t = 0, f = 0, a = 0;
    for (const auto* r : rows) {
      t += r->tpr;
      f += r->fpr;
      a += r->auc;
    }
    run_tpr.push_back(t / static_cast<double>(rows.size()));
    run_fpr.push_back(f / static_cast<double>(rows.size()));
    run_auc.push_back(a / static_cast<double>(rows.size()));
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) /
           static_cast<double>(v.size());
  };
  auto stddev = [&](const std::vector<double>& v, double m) {
    if (v.size() < 2) return 0.0;
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  report.mean_tpr = mean(run_tpr);
  report.mean_fpr = mean(run_fpr);
  report.mean_auc = mean(run_auc);
  report.std_tpr = stddev(run_tpr, report.mean_tpr);
  report.std_fpr = stddev(run_fpr, report.mean_fpr);
  report.std_auc = stddev(run_auc, report.mean_auc);
}

}  // namespace eval_detail

/// One undersampled, channel-granular k-fold pass. Folds partition
/// behavior sequences (each sequence owns a disjoint channel set, so no
/// channel crosses the train/test boundary). Run index tags the rows.
inline std::vector<RunMetrics> kfold_eval(
    const std::vector<BehaviorSeqArtifact>& seqs, const EvalConfig& cfg,
    std::uint64_t seed, int run_index = 0,
    std::vector<double>* pooled_scores = nullptr,
    std::vector<int>* pooled_labels = nullptr) {
  std::vector<const BehaviorSeqArtifact*> labeled;
  std::vector<int> labels;
  for (const auto& s : seqs) {
    if (s.label == Label::Unlabeled) continue;
    labeled.push_back(&s);
    labels.push_back(s.label == Label::Malware ? 1 : 0);
  }
  auto kept = undersample(labels, Rng(seed).substream(0xBA1).next_u64());
  std::vector<const BehaviorSeqArtifact*> items;
  std::vector<int> item_labels;
  for (auto i : kept) {
    items.push_back(labeled[i]);
    item_labels.push_back(labels[i]);
  }

  auto fold_of =
      kfold_assign(item_labels, cfg.folds, Rng(seed).substream(0xF0).next_u64());
  std::vector<RunMetrics> rows;
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<const BehaviorSeqArtifact*> train, test;
    for (std::size_t i = 0; i < items.size(); ++i)
      (fold_of[i] == f ? test : train).push_back(items[i]);
    auto stack = eval_detail::train_stack(
        train, cfg, Rng(seed).substream(0xF100 + static_cast<std::uint64_t>(f))
                        .next_u64());
    auto [scores, ls] = eval_detail::score_set(stack, test, cfg.model.max_len);
    auto counts = confusion_at(scores, ls, cfg.threshold);
    auto [tpr, fpr] = tpr_fpr(counts);
    rows.push_back({run_index, f, tpr, fpr, auc(scores, ls)});
    if (pooled_scores) {
      pooled_scores->insert(pooled_scores->end(), scores.begin(), scores.end());
      pooled_labels->insert(pooled_labels->end(), ls.begin(), ls.end());
    }
  }
  return rows;
}

/// Open-world protocol: train on known malware families plus half the
/// benign corpus, test on an unseen family plus the other half. The
/// family tags guard against leakage.
inline RunMetrics unknown_protocol(
    const std::vector<BehaviorSeqArtifact>& train_malware,
    const std::vector<BehaviorSeqArtifact>& benign,
    const std::vector<BehaviorSeqArtifact>& test_malware,
    const std::set<std::string>& train_families,
    const std::string& test_family, const EvalConfig& cfg, std::uint64_t seed,
    int run_index = 0, std::vector<double>* pooled_scores = nullptr,
    std::vector<int>* pooled_labels = nullptr) {
  if (train_families.count(test_family))
    throw Error("eval", "test family '" + test_family +
                            "' overlaps the training families");
  for (const auto& bs : train_malware)
    if (!bs.family.empty() && bs.family == test_family)
      throw Error("eval", "training sequence carries the held-out family tag");
  for (const auto& bs : test_malware)
    if (!bs.family.empty() && train_families.count(bs.family))
      throw Error("eval", "test sequence carries a training family tag");

  // Split benign in half by channel (sequences own disjoint channels).
  std::vector<std::size_t> order(benign.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).substream(0xBE2);
  rng.shuffle(order);
  std::vector<const BehaviorSeqArtifact*> benign_train, benign_test;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < order.size() / 2 ? benign_train : benign_test)
        .push_back(&benign[order[i]]);
  {
    std::set<std::size_t> seen;
    for (const auto* b : benign_train)
      seen.insert(b->channel_ids.begin(), b->channel_ids.end());
    for (const auto* b : benign_test)
      for (auto id : b->channel_ids)
        if (seen.count(id))
          throw Error("eval", "benign halves share a channel");
  }

  auto balance = [&](std::vector<const BehaviorSeqArtifact*> mal,
                     std::vector<const BehaviorSeqArtifact*> ben,
                     std::uint64_t s) {
    std::vector<const BehaviorSeqArtifact*> all;
    std::vector<int> labels;
    for (auto* m : mal) {
      all.push_back(m);
      labels.push_back(1);
    }
    for (auto* b : ben) {
      all.push_back(b);
      labels.push_back(0);
    }
    auto kept = undersample(labels, s);
    std::vector<const BehaviorSeqArtifact*> out;
    for (auto i : kept) out.push_back(all[i]);
    return out;
  };
  std::vector<const BehaviorSeqArtifact*> mal_train, mal_test;
  for (const auto& m : train_malware) mal_train.push_back(&m);
  for (const auto& m : test_malware) mal_test.push_back(&m);
  auto train = balance(mal_train, benign_train,
                       Rng(seed).substream(0xBB1).next_u64());
  auto test = balance(mal_test, benign_test,
                      Rng(seed).substream(0xBB2).next_u64());

  auto stack = eval_detail::train_stack(
      train, cfg, Rng(seed).substream(0x7777).next_u64());
  auto [scores, ls] = eval_detail::score_set(stack, test, cfg.model.max_len);
  auto counts = confusion_at(scores, ls, cfg.threshold);
  auto [tpr, fpr] = tpr_fpr(counts);
  if (pooled_scores) {
    pooled_scores->insert(pooled_scores->end(), scores.begin(), scores.end());
    pooled_labels->insert(pooled_labels->end(), ls.begin(), ls.end());
  }
  return {run_index, 0, tpr, fpr, auc(scores, ls)};
}

/// Repeats an experiment with derived seeds and aggregates mean and
/// standard deviation over runs.
template <typename ExperimentFn>
EvalReport repeat_eval(int repeats, std::uint64_t master_seed,
                       ExperimentFn&& experiment) {
  if (repeats < 1) throw Error("eval", "repeats must be >= 1");
  EvalReport report;
  for (int r = 0; r < repeats; ++r) {
    std::uint64_t seed =
        Rng(master_seed).substream(0x9E9E + static_cast<std::uint64_t>(r))
            .next_u64();
    std::vector<RunMetrics> rows =
        experiment(r, seed, report.pooled_scores, report.pooled_labels);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  eval_detail::summarize(report);
  return report;
}

// --- CSV output -------------------------------------------------------------

inline void write_metrics_csv(const EvalReport& report,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("eval", "cannot write " + path);
  out << "run,fold,tpr,fpr,auc\n";
  for (const auto& r : report.rows)
    out << r.run << ',' << r.fold << ',' << format_double(r.tpr) << ','
        << format_double(r.fpr) << ',' << format_double(r.auc) << '\n';
}

inline void write_roc_csv(const RocCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("eval", "cannot write " + path);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points)
    out << format_double(p.threshold) << ',' << format_double(p.fpr) << ','
        << format_double(p.tpr) << '\n';
}

}  // namespace cbseq
