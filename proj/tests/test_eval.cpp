#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cbseq/eval.hpp"
#include "cbseq/rng.hpp"
#include "test_util.hpp"

using namespace cbseq;

namespace {

// Exhaustive pair enumeration, the textbook definition of AUC.
double auc_by_pairs(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

BehaviorSeqArtifact seq_of(int cluster_id, Label label,
                           std::vector<std::uint32_t> pn,
                           const std::string& family = "") {
  BehaviorSeqArtifact b;
  b.cluster_id = cluster_id;
  b.channel_ids = {static_cast<std::size_t>(cluster_id)};
  b.label = label;
  b.tokens.pn = pn;
  b.tokens.iat.assign(pn.size(), 1);
  b.tokens.iat[0] = 0;
  b.tokens.sp.assign(pn.size(), 40000);
  b.tokens.dp.assign(pn.size(), 443);
  b.family = family;
  return b;
}

}  // namespace

TEST_CASE("tpr_fpr computes exact ratios and names empty classes") {
  auto [tpr, fpr] = tpr_fpr({9, 0, 10, 1});
  CHECK(tpr == 0.9);
  CHECK(fpr == 0.0);
  CHECK_THROWS_WITH(tpr_fpr({0, 1, 1, 0}), Catch::Matchers::ContainsSubstring("positive"));
  CHECK_THROWS_WITH(tpr_fpr({1, 0, 0, 1}), Catch::Matchers::ContainsSubstring("negative"));
}

TEST_CASE("tpr_fpr on random counts equals direct ratios") {
  Rng rng(21);
  for (int t = 0; t < 50; ++t) {
    ConfusionCounts c{1 + rng.next_below(100), rng.next_below(100),
                      1 + rng.next_below(100), rng.next_below(100)};
    auto [tpr, fpr] = tpr_fpr(c);
    CHECK(tpr == static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
    CHECK(fpr == static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn));
  }
}

TEST_CASE("auc: separated, hand case, and all ties") {
  CHECK(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(auc({0.9, 0.6, 0.4, 0.1}, {1, 0, 1, 0}) == 0.75);
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(auc({0.5, 0.4}, {1, 1}), Error);
}

TEST_CASE("auc agrees with ROC trapezoid area and pair enumeration") {
  Rng rng(22);
  for (int t = 0; t < 200; ++t) {
    std::size_t n = 4 + rng.next_below(40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool both = false;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid forces plenty of ties.
      scores[i] = static_cast<double>(rng.next_below(8)) / 7.0;
      labels[i] = rng.next_below(2) ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    both = true;
    (void)both;
    double a = auc(scores, labels);
    auto curve = roc_curve(scores, labels);
    CHECK(std::abs(a - curve.auc) < 1e-9);
    CHECK(std::abs(a - auc_by_pairs(scores, labels)) < 1e-12);
  }
}

TEST_CASE("roc endpoints and monotonicity") {
  Rng rng(23);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) {
    scores.push_back(rng.next_double());
    labels.push_back(i % 2);
  }
  auto curve = roc_curve(scores, labels);
  CHECK(curve.points.front().fpr == 0.0);
  CHECK(curve.points.front().tpr == 0.0);
  CHECK(curve.points.back().fpr == 1.0);
  CHECK(curve.points.back().tpr == 1.0);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].fpr >= curve.points[i - 1].fpr);
    CHECK(curve.points[i].tpr >= curve.points[i - 1].tpr);
  }
}

TEST_CASE("undersample balances and is deterministic") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(0);
  for (int i = 0; i < 40; ++i) labels.push_back(1);
  auto kept = undersample(labels, 5);
  std::size_t pos = 0, neg = 0;
  for (auto i : kept) (labels[i] ? pos : neg) += 1;
  CHECK(pos == 40);
  CHECK(neg == 40);
  CHECK(undersample(labels, 5) == kept);
  CHECK(undersample(labels, 6) != kept);

  std::vector<int> balanced{0, 1, 0, 1};
  auto all = undersample(balanced, 1);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("kfold assignment partitions the data") {
  Rng rng(24);
  for (int t = 0; t < 1000; ++t) {
    std::size_t n = 10 + rng.next_below(60);
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng.next_below(2) ? 1 : 0;
    labels[0] = 0;
    labels[1] = 1;
    int k = 2 + static_cast<int>(rng.next_below(4));
    std::vector<int> fold;
    try {
      fold = kfold_assign(labels, k, rng.next_u64());
    } catch (const Error&) {
      continue;  // a fold legitimately lost a class; the guard fired
    }
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (auto f : fold) {
      REQUIRE(f >= 0);
      REQUIRE(f < k);
      ++sizes[static_cast<std::size_t>(f)];
    }
    std::size_t total = 0, mx = 0, mn = n;
    for (auto s : sizes) {
      total += s;
      mx = std::max(mx, s);
      mn = std::min(mn, s);
    }
    CHECK(total == n);      // union = dataset, disjoint by construction
    CHECK(mx - mn <= 1);    // sizes differ by at most one
  }
}

TEST_CASE("kfold rejects k=1 and single-class folds") {
  std::vector<int> labels{0, 1, 0, 1};
  CHECK_THROWS_AS(kfold_assign(labels, 1, 1), Error);
  std::vector<int> lopsided{1, 0, 0, 0, 0, 0, 0, 0};
  bool threw = false;
  // With 8 items and 4 folds, three folds must lose the positive class.
  try {
    kfold_assign(lopsided, 4, 9);
  } catch (const Error&) {
    threw = true;
  }
  CHECK(threw);
}

namespace {

EvalConfig small_eval_config() {
  EvalConfig cfg;
  cfg.folds = 2;
  cfg.repeats = 2;
  cfg.embedding.dim = 8;
  cfg.embedding.epochs = 2;
  cfg.model.emb_dim = 8;
  cfg.model.d_model = 8;
  cfg.model.blocks = 1;
  cfg.model.heads = 2;
  cfg.model.d_ff = 16;
  cfg.model.max_len = 8;
  cfg.model.epochs = 2;
  cfg.model.lr = 1e-3;
  cfg.model.batch = 4;
  return cfg;
}

std::vector<BehaviorSeqArtifact> toy_corpus() {
  std::vector<BehaviorSeqArtifact> seqs;
  for (int i = 0; i < 12; ++i) {
    seqs.push_back(seq_of(i, Label::Malware, {5, 5, 5, 5, 5}));
    seqs.push_back(seq_of(100 + i, Label::Benign,
                          {1, static_cast<std::uint32_t>(2 + i),
                           static_cast<std::uint32_t>(30 + 7 * i), 2,
                           static_cast<std::uint32_t>(1 + i)}));
  }
  // Give benign sequences distinct channel ids.
  for (std::size_t i = 0; i < seqs.size(); ++i)
    seqs[i].channel_ids = {i};
  return seqs;
}

}  // namespace

TEST_CASE("kfold_eval produces one row per fold with sane metrics") {
  auto seqs = toy_corpus();
  auto cfg = small_eval_config();
  auto rows = kfold_eval(seqs, cfg, 42, 0);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.tpr >= 0.0);
    CHECK(r.tpr <= 1.0);
    CHECK(r.fpr >= 0.0);
    CHECK(r.fpr <= 1.0);
    CHECK(r.auc >= 0.0);
    CHECK(r.auc <= 1.0);
  }
}

TEST_CASE("repeat_eval aggregates deterministically") {
  auto seqs = toy_corpus();
  auto cfg = small_eval_config();
  auto runner = [&](int run, std::uint64_t seed, std::vector<double>& ps,
                    std::vector<int>& pl) {
    return kfold_eval(seqs, cfg, seed, run, &ps, &pl);
  };
  auto a = repeat_eval(2, 7, runner);
  auto b = repeat_eval(2, 7, runner);
  REQUIRE(a.rows.size() == 4);
  CHECK(a.mean_auc == b.mean_auc);
  CHECK(a.mean_tpr == b.mean_tpr);
  CHECK(a.pooled_scores == b.pooled_scores);

  // repeats=1: mean equals the single run, stddev 0.
  auto one = repeat_eval(1, 9, runner);
  double sum = 0;
  for (const auto& r : one.rows) sum += r.auc;
  CHECK(one.mean_auc == Catch::Approx(sum / static_cast<double>(one.rows.size())));
  CHECK(one.std_auc == 0.0);
}

TEST_CASE("summary means equal an external recomputation from the CSV") {
  testutil::TempDir dir;
  auto seqs = toy_corpus();
  auto cfg = small_eval_config();
  auto report = repeat_eval(2, 3, [&](int run, std::uint64_t seed,
                                      std::vector<double>& ps,
                                      std::vector<int>& pl) {
    return kfold_eval(seqs, cfg, seed, run, &ps, &pl);
  });
  write_metrics_csv(report, dir.file("metrics.csv"));

  // Recompute per-run means straight from the emitted file.
  std::ifstream in(dir.file("metrics.csv"));
  std::string line;
  std::getline(in, line);  // header
  std::map<int, std::vector<double>> auc_by_run;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    int run, fold;
    double tpr, fpr, auc_val;
    ss >> run >> fold >> tpr >> fpr >> auc_val;
    auc_by_run[run].push_back(auc_val);
  }
  double mean_of_runs = 0;
  for (const auto& [run, aucs] : auc_by_run) {
    double m = 0;
    for (double a : aucs) m += a;
    mean_of_runs += m / static_cast<double>(aucs.size());
  }
  mean_of_runs /= static_cast<double>(auc_by_run.size());
  CHECK(report.mean_auc == Catch::Approx(mean_of_runs).epsilon(1e-12));
}

TEST_CASE("unknown protocol checks family disjointness") {
  auto cfg = small_eval_config();
  std::vector<BehaviorSeqArtifact> train_mal, test_mal, benign;
  for (int i = 0; i < 8; ++i)
    train_mal.push_back(seq_of(i, Label::Malware, {4, 4, 4, 4}, "beacon"));
  for (int i = 0; i < 8; ++i)
    test_mal.push_back(seq_of(50 + i, Label::Malware, {9, 9, 9, 9}, "scan"));
  for (int i = 0; i < 20; ++i)
    benign.push_back(seq_of(100 + i, Label::Benign,
                            {static_cast<std::uint32_t>(1 + i),
                             static_cast<std::uint32_t>(2 + 3 * i), 7,
                             static_cast<std::uint32_t>(5 + i)}));
  for (std::size_t i = 0; i < benign.size(); ++i)
    benign[i].channel_ids = {1000 + i};

  CHECK_THROWS_AS(unknown_protocol(train_mal, benign, test_mal,
                                   {"beacon", "scan"}, "scan", cfg, 1),
                  Error);
  auto metrics = unknown_protocol(train_mal, benign, test_mal, {"beacon"},
                                  "scan", cfg, 1);
  CHECK(metrics.auc >= 0.0);
  CHECK(metrics.auc <= 1.0);

  // A mislabeled artifact also trips the guard.
  auto bad = train_mal;
  bad[0].family = "scan";
  CHECK_THROWS_AS(
      unknown_protocol(bad, benign, test_mal, {"beacon"}, "scan", cfg, 1),
      Error);
}
