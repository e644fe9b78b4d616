#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "grad_check.hpp"
#include "nltrack/language.hpp"

using namespace nltrack;
using nltrack::testing::fd_max_rel_err;

namespace {

RegionFeature random_rf(int a, int d, nn::Rng& rng) {
  RegionFeature rf;
  rf.a = a;
  rf.d = d;
  rf.v.resize(static_cast<std::size_t>(a) * a * d);
  for (double& v : rf.v) v = nn::as_f32(rng.uniform(-1, 1));
  return rf;
}

}  // namespace

TEST_CASE("tokenize") {
  const Query q = tokenize("Track the silver sedan.");
  CHECK(q.tokens == std::vector<std::string>{"track", "the", "silver", "sedan"});
  CHECK(tokenize("black bicycle by a man on the mountain road").tokens.size() == 9);
  CHECK_THROWS_AS(tokenize("   "), EmptyQueryError);
  CHECK_THROWS_AS(tokenize("?!,."), EmptyQueryError);
}

TEST_CASE("embedding table lookup is total") {
  nn::Rng rng(1);
  auto table = make_embedding_table({"red", "square"}, 8, rng);
  CHECK(table.lookup("red").size() == 8);
  CHECK(table.lookup("zebra") == table.lookup("qwerty"));  // both unknown
  CHECK(table.lookup("red") != table.lookup("square"));
}

TEST_CASE("pretrained embedding text format round-trips") {
  nn::Rng rng(2);
  const auto path = std::filesystem::temp_directory_path() / "emb_test.txt";
  {
    std::ofstream out(path);
    for (const char* w : {"alpha", "beta"}) {
      out << w;
      for (int i = 0; i < 300; ++i) out << ' ' << nn::as_f32(rng.uniform(-1, 1));
      out << '\n';
    }
  }
  const auto table = load_embedding_text(path);
  CHECK(table.words.size() == 2);
  CHECK(table.dim == 300);
  CHECK(table.lookup_row("beta") == 1);

  std::ofstream bad(path);
  bad << "word 1.0 2.0\n";
  bad.close();
  CHECK_THROWS(load_embedding_text(path));
  std::filesystem::remove(path);
}

TEST_CASE("sentence encoder") {
  nn::Rng rng(3);
  const int dim = 16;
  auto table = make_embedding_table({"red", "blue", "square", "the"}, dim, rng);
  SentenceEncoder enc(dim, rng);

  SUBCASE("single token equals one recurrent step from zero state") {
    const Query q = tokenize("red");
    const nn::Vec sent = enc.embed(q, table);
    nn::LstmCell::Cache cache;
    enc.cell.forward(table.lookup("red"), nn::Vec(dim, 0.0), nn::Vec(dim, 0.0),
                     cache);
    CHECK(sent == cache.h);
  }
  SUBCASE("deterministic") {
    const Query q = tokenize("the red square");
    CHECK(enc.embed(q, table) == enc.embed(q, table));
  }
  SUBCASE("token order matters") {
    CHECK(enc.embed(tokenize("red blue"), table) !=
          enc.embed(tokenize("blue red"), table));
  }
}

TEST_CASE("similarity head") {
  nn::Rng rng(4);
  const int a = 3, d = 4, dim = 8;
  SimilarityHead head(a * a * d, dim, rng);
  auto table = make_embedding_table({"x"}, dim, rng);
  nn::Vec sent(dim);
  for (double& v : sent) v = nn::as_f32(rng.uniform(-1, 1));
  const RegionFeature rf = random_rf(a, d, rng);

  SUBCASE("output in the open unit interval") {
    const double s = head.score(sent, rf);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  SUBCASE("zero parameters give 0.5") {
    SimilarityHead zero(a * a * d, dim, rng);
    std::fill(zero.proj.w.w.begin(), zero.proj.w.w.end(), 0.0);
    std::fill(zero.proj.b.w.begin(), zero.proj.b.w.end(), 0.0);
    std::fill(zero.out.w.w.begin(), zero.out.w.w.end(), 0.0);
    std::fill(zero.out.b.w.begin(), zero.out.b.w.end(), 0.0);
    CHECK(zero.score(sent, rf) == 0.5);
  }
  SUBCASE("matches a straight-line re-implementation") {
    // Independent scalar-by-scalar evaluation of the head arithmetic.
    std::vector<double> z(dim, 0.0);
    for (int o = 0; o < dim; ++o) {
      z[o] = head.proj.b.w[o];
      for (std::size_t i = 0; i < rf.v.size(); ++i)
        z[o] += head.proj.w.w[o * rf.v.size() + i] * rf.v[i];
    }
    double logit = head.out.b.w[0];
    for (int o = 0; o < dim; ++o) logit += head.out.w.w[o] * z[o] * sent[o];
    const double expected = 1.0 / (1.0 + std::exp(-logit));
    CHECK(head.score(sent, rf) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("shape mismatch rejected") {
    const RegionFeature wrong = random_rf(a + 1, d, rng);
    CHECK_THROWS_AS(head.score(sent, wrong), std::invalid_argument);
  }
  SUBCASE("never saturates to exactly 0 or 1") {
    SimilarityHead sat(a * a * d, dim, rng);
    std::fill(sat.out.b.w.begin(), sat.out.b.w.end(), 100.0);
    CHECK(sat.score(sent, rf) == 1.0 - kSimilarityEps);
    std::fill(sat.out.b.w.begin(), sat.out.b.w.end(), -100.0);
    CHECK(sat.score(sent, rf) == kSimilarityEps);
  }
}

TEST_CASE("target similarity is elementwise IoU") {
  const Box gt{1, 1, 3, 3};
  const auto t = target_similarity({gt, Box{10, 10, 12, 12}, Box{0, 0, 2, 2}}, gt);
  CHECK(t[0] == 1.0);
  CHECK(t[1] == 0.0);
  CHECK(t[2] == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("language loss values") {
  const double eps = kSimilarityEps;
  // Exact value at the clamp boundary is -( (1-e)log(1-e) + e*log(e) ).
  CHECK(language_loss({1.0 - eps}, {1.0 - eps}) < 2e-6);
  CHECK(language_loss({0.5}, {0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(language_loss({0.5, 0.5}, {0.5, 0.5}) ==
        doctest::Approx(2.0 * std::log(2.0)));
  CHECK_THROWS_AS(language_loss({0.5}, {0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("language loss is minimized at S = S_hat") {
  const double target = 0.37;
  const double at_target = language_loss({target}, {target});
  for (double s = 0.01; s < 1.0; s += 0.01) {
    if (std::abs(s - target) < 1e-9) continue;
    CHECK(language_loss({s}, {target}) > at_target);
  }
}

TEST_CASE("language loss gradient w.r.t. similarities matches finite differences") {
  nn::Rng rng(5);
  std::vector<double> s(6), t(6);
  for (auto& v : s) v = rng.uniform(0.05, 0.95);
  for (auto& v : t) v = rng.uniform(0.0, 1.0);
  std::vector<double> ds;
  language_loss(s, t, &ds);
  const double h = 1e-5;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto sp = s, sm = s;
    sp[i] += h;
    sm[i] -= h;
    const double num = (language_loss(sp, t) - language_loss(sm, t)) / (2 * h);
    CHECK(std::abs(num - ds[i]) / std::max(std::abs(num), 1.0) < 1e-6);
  }
}

TEST_CASE("loss gradient through the similarity head matches finite differences") {
  nn::Rng rng(6);
  const int a = 2, d = 3, dim = 6;
  SimilarityHead head(a * a * d, dim, rng);
  nn::Vec sent(dim);
  for (double& v : sent) v = nn::as_f32(rng.uniform(-1, 1));
  std::vector<RegionFeature> rfs;
  for (int i = 0; i < 3; ++i) rfs.push_back(random_rf(a, d, rng));
  const std::vector<double> targets{0.8, 0.1, 0.45};

  auto loss = [&] {
    std::vector<double> sims;
    for (const auto& rf : rfs) sims.push_back(head.score(sent, rf));
    return language_loss(sims, targets);
  };

  std::vector<SimilarityHead::Cache> caches(rfs.size());
  std::vector<double> sims;
  for (std::size_t i = 0; i < rfs.size(); ++i)
    sims.push_back(head.score(sent, rfs[i], caches[i]));
  std::vector<double> ds;
  language_loss(sims, targets, &ds);
  for (auto* b : {&head.proj.w, &head.proj.b, &head.out.w, &head.out.b})
    b->zero_grad();
  nn::Vec dsent(dim, 0.0);
  for (std::size_t i = 0; i < rfs.size(); ++i)
    head.backward(sent, caches[i], ds[i], &dsent);

  std::mt19937_64 check_rng(7);
  CHECK(fd_max_rel_err(head.proj.w, head.proj.w.g, loss, check_rng, 30) < 1e-4);
  CHECK(fd_max_rel_err(head.out.w, head.out.w.g, loss, check_rng, 6) < 1e-4);
  CHECK(fd_max_rel_err(head.out.b, head.out.b.g, loss, check_rng, 1) < 1e-4);
}
