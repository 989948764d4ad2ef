#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cbseq/embedding.hpp"
#include "test_util.hpp"

using namespace cbseq;

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

CbowConfig small_config(std::uint64_t seed, int dim = 16) {
  CbowConfig cfg;
  cfg.dim = dim;
  cfg.epochs = 8;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("vocabulary counts distinct tokens above min_count") {
  std::vector<std::vector<std::uint32_t>> corpus{{1, 2, 3, 1}, {2, 2, 9}};
  auto model = train_cbow(corpus, SeqType::PN, small_config(1));
  CHECK(model.vocab_size() == 4);

  CbowConfig strict = small_config(1);
  strict.min_count = 2;
  auto model2 = train_cbow(corpus, SeqType::PN, strict);
  CHECK(model2.vocab_size() == 2);  // only 1 and 2 repeat
}

TEST_CASE("empty corpus and bad dim are errors") {
  CHECK_THROWS_AS(train_cbow({}, SeqType::PN, small_config(1)), Error);
  CbowConfig bad = small_config(1);
  bad.dim = 0;
  CHECK_THROWS_AS(train_cbow({{1, 2}}, SeqType::PN, bad), Error);
}

TEST_CASE("single repeated token trains against noise only") {
  std::vector<std::vector<std::uint32_t>> corpus{{7, 7, 7, 7, 7, 7, 7, 7}};
  auto model = train_cbow(corpus, SeqType::PN, small_config(2));
  REQUIRE(model.vocab_size() == 1);
  auto v = model.embed_token(7);
  CHECK(cosine(v, v) == Catch::Approx(1.0));
}

TEST_CASE("reported loss decreases over epochs") {
  std::vector<std::vector<std::uint32_t>> corpus;
  for (int i = 0; i < 30; ++i)
    corpus.push_back({10, 11, 12, 13, 14, 10, 11, 12, 13, 14});
  CbowConfig cfg = small_config(3);
  cfg.epochs = 6;
  auto model = train_cbow(corpus, SeqType::PN, cfg);
  REQUIRE(model.epoch_loss.size() == 6);
  CHECK(model.epoch_loss.back() < model.epoch_loss.front());
}

TEST_CASE("tokens sharing contexts embed closer than strangers") {
  // A and B always appear in the same contexts; C lives elsewhere.
  std::vector<std::vector<std::uint32_t>> corpus;
  for (int i = 0; i < 40; ++i) {
    corpus.push_back({1, 2, 50, 3, 4});   // 50 = A
    corpus.push_back({1, 2, 60, 3, 4});   // 60 = B
    corpus.push_back({900, 901, 70, 902, 903});  // 70 = C
  }
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto model = train_cbow(corpus, SeqType::PN, small_config(seed));
    double ab = cosine(model.embed_token(50), model.embed_token(60));
    double ac = cosine(model.embed_token(50), model.embed_token(70));
    if (ab > ac) ++wins;
  }
  CHECK(wins >= 8);
}

TEST_CASE("numeric OOV maps to nearest token, ties to the smaller") {
  std::vector<std::vector<std::uint32_t>> corpus{{998, 1005, 998, 1005, 998}};
  auto model = train_cbow(corpus, SeqType::PN, small_config(4));
  CHECK(model.embed_token(999) == model.embed_token(998));
  CHECK(model.embed_token(1004) == model.embed_token(1005));
  // 1001/1002 splits the gap at distance 3/4; check an exact tie too.
  std::vector<std::vector<std::uint32_t>> corpus2{{10, 20, 10, 20}};
  auto model2 = train_cbow(corpus2, SeqType::IAT, small_config(4));
  CHECK(model2.embed_token(15) == model2.embed_token(10));
}

TEST_CASE("port OOV maps to the UNK mean vector") {
  std::vector<std::vector<std::uint32_t>> corpus{{443, 80, 8080, 443, 80}};
  auto model = train_cbow(corpus, SeqType::DP, small_config(5));
  auto unk = model.embed_token(31337);
  // Independent recomputation of the mean.
  std::vector<double> mean(static_cast<std::size_t>(model.dim), 0.0);
  for (auto tok : model.tokens) {
    auto v = model.embed_token(tok);
    for (std::size_t d = 0; d < v.size(); ++d) mean[d] += v[d];
  }
  for (std::size_t d = 0; d < mean.size(); ++d) {
    mean[d] /= static_cast<double>(model.vocab_size());
    CHECK(std::abs(unk[d] - mean[d]) < 1e-6);
  }
}

TEST_CASE("training is deterministic and files are byte-identical") {
  testutil::TempDir dir;
  std::vector<std::vector<std::uint32_t>> corpus;
  for (int i = 0; i < 10; ++i)
    corpus.push_back({1, 2, 3, 4, 5, 1, 2, 3, 4, 5});
  auto m1 = train_cbow(corpus, SeqType::SP, small_config(6));
  auto m2 = train_cbow(corpus, SeqType::SP, small_config(6));
  save_embedding(m1, dir.file("a.vec"));
  save_embedding(m2, dir.file("b.vec"));
  CHECK(testutil::slurp(dir.file("a.vec")) ==
        testutil::slurp(dir.file("b.vec")));
  CHECK(testutil::slurp(dir.file("a.vec.out")) ==
        testutil::slurp(dir.file("b.vec.out")));
}

TEST_CASE("save/load round-trips vectors") {
  testutil::TempDir dir;
  std::vector<std::vector<std::uint32_t>> corpus{{5, 6, 7, 5, 6, 7, 5}};
  auto model = train_cbow(corpus, SeqType::IAT, small_config(7));
  save_embedding(model, dir.file("m.vec"));
  auto loaded = load_embedding(dir.file("m.vec"), SeqType::IAT);
  REQUIRE(loaded.vocab_size() == model.vocab_size());
  CHECK(loaded.dim == model.dim);
  for (auto tok : model.tokens)
    CHECK(loaded.embed_token(tok) == model.embed_token(tok));
  CHECK(loaded.output_vectors == model.output_vectors);
}

TEST_CASE("embed_sequence composes per-token lookups") {
  std::vector<std::vector<std::uint32_t>> corpus{{1, 2, 3, 1, 2, 3}};
  auto pn = train_cbow(corpus, SeqType::PN, small_config(8));
  auto iat = train_cbow(corpus, SeqType::IAT, small_config(9));
  auto sp = train_cbow(corpus, SeqType::SP, small_config(10));
  auto dp = train_cbow(corpus, SeqType::DP, small_config(11));

  ChannelSequence tokens;
  tokens.pn = {1, 2};
  tokens.iat = {0, 3};
  tokens.sp = {2, 2};
  tokens.dp = {3, 1};
  auto emb = embed_sequence({&pn, &iat, &sp, &dp}, tokens);
  CHECK(emb.length == 2);
  CHECK(emb.dim == pn.dim);
  for (int s = 0; s < 4; ++s) {
    const auto& list = tokens_of(tokens, static_cast<SeqType>(s));
    const EmbeddingModel* models[4] = {&pn, &iat, &sp, &dp};
    for (std::size_t i = 0; i < 2; ++i) {
      auto expected = models[s]->embed_token(list[i]);
      const float* row = emb.row(s, i);
      for (int d = 0; d < emb.dim; ++d)
        CHECK(row[d] == expected[static_cast<std::size_t>(d)]);
    }
  }

  ChannelSequence empty;
  CHECK_THROWS_AS(embed_sequence({&pn, &iat, &sp, &dp}, empty), Error);

  ChannelSequence one;
  one.pn = {1};
  one.iat = {0};
  one.sp = {2};
  one.dp = {3};
  auto e1 = embed_sequence({&pn, &iat, &sp, &dp}, one);
  CHECK(e1.length == 1);
}

TEST_CASE("every embedded vector is a vocabulary vector or the UNK vector") {
  std::vector<std::vector<std::uint32_t>> corpus{{100, 200, 300, 100, 200}};
  auto model = train_cbow(corpus, SeqType::SP, small_config(12));
  auto unk = model.unk_vector();
  for (std::uint32_t probe : {100u, 200u, 300u, 150u, 9999u}) {
    auto v = model.embed_token(probe);
    bool in_vocab = false;
    for (auto tok : model.tokens)
      if (v == model.embed_token(tok)) in_vocab = true;
    bool is_unk = true;
    for (std::size_t d = 0; d < v.size(); ++d)
      if (std::abs(v[d] - unk[d]) > 1e-7) is_unk = false;
    CHECK((in_vocab || is_unk));
  }
}

TEST_CASE("co-occurring sequential ports embed closer than far ports") {
  // Channels scanning consecutive source ports; CBOW sees runs of
  // neighboring port numbers in one sentence.
  std::vector<std::vector<std::uint32_t>> corpus;
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<std::uint32_t> run;
    for (std::uint32_t p = 42000; p < 42012; ++p) run.push_back(p);
    corpus.push_back(run);
    corpus.push_back({51000, 51007, 51003, 51011, 51001, 51009});
  }
  int wins = 0;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    auto model = train_cbow(corpus, SeqType::SP, small_config(seed));
    double near = cosine(model.embed_token(42005), model.embed_token(42006));
    double far = cosine(model.embed_token(42005), model.embed_token(51007));
    if (near > far) ++wins;
  }
  CHECK(wins >= 8);
}
