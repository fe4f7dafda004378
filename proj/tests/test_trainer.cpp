#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <sstream>

#include "domino/lm/chain.hpp"
#include "domino/numerics/checkpoint.hpp"
#include "domino/numerics/error.hpp"
#include "domino/numerics/grad_check.hpp"
#include "domino/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace domino;

namespace {

TransformerConfig target_config() {
  TransformerConfig c;
  c.d_model = 64;
  c.d_ff = 96;
  c.max_context = 128;
  return c;
}

const TinyTransformer& cycle_target() {
  static const TinyTransformer t =
      make_chain_target(target_config(), ChainSpec::cycle(Vocabulary{}), 1);
  return t;
}

const TinyTransformer& random_target() {
  static const TinyTransformer t = TinyTransformer::random(target_config(), 2);
  return t;
}

struct Fixture {
  Corpus corpus;
  FeatureCache cache;
  TrainBatch batch;
};

Fixture make_fixture(const TinyTransformer& t, int gamma, std::uint64_t seed) {
  Fixture f;
  f.corpus = sample_corpus(t, 8, 24, seed);
  f.cache = compute_features(t, f.corpus);
  BlockSampler s(f.corpus, f.cache, gamma, 6, Rng(seed));
  f.batch = s.next();
  return f;
}

void randomize_w2(DominoDrafter& m, std::uint64_t seed) {
  Rng rng(seed);
  for (double& x : m.params().get("head.corr.w2").mutable_data()) x = 0.3 * rng.normal();
}

bool same(const Tensor& a, const Tensor& b) {
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
}

double scalar_wce(std::span<const double> logits, std::size_t v, std::span<const TokenId> t,
                  std::span<const double> w) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < v; ++j) m = std::max(m, logits[k * v + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(logits[k * v + j] - m);
    num += w[k] * (m + std::log(z) - logits[k * v + t[k]]);
    den += w[k];
  }
  return num / den;
}

}  // namespace

TEST_SUITE("position weights") {
  TEST_CASE("direct values") {
    const auto w = position_weights(16);
    REQUIRE(w.size() == 16);
    CHECK(w[0] == 1.0);
    CHECK(w[8] == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK(std::exp(-16.0 / 16.0) == doctest::Approx(0.36788).epsilon(1e-5));
    CHECK(position_weights(1) == std::vector<double>{1.0});
    CHECK_THROWS_AS(position_weights(0), ContractError);
  }

  TEST_CASE("constant ratio e^(1/gamma)") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const int gamma = 2 + static_cast<int>(rng.uniform_int(30));
      const auto w = position_weights(gamma);
      for (int k = 0; k + 1 < gamma; ++k) {
        CHECK(w[k] > w[k + 1]);
        CHECK(std::abs(w[k] / w[k + 1] - std::exp(1.0 / gamma)) <= 1e-12);
      }
    }
  }
}

TEST_SUITE("curriculum") {
  TEST_CASE("linear anneal with clamping") {
    CHECK(curriculum_lambda({100, 0}) == 1.0);
    CHECK(curriculum_lambda({100, 100}) == 0.0);
    CHECK(curriculum_lambda({100, 50}) == 0.5);
    CHECK(curriculum_lambda({100, 150}) == 0.0);
    double prev = 2.0;
    for (std::int64_t t = 0; t <= 100; ++t) {
      const double l = curriculum_lambda({100, t});
      CHECK(l <= prev);
      prev = l;
    }
  }

  TEST_CASE("per-mode lambda") {
    const CurriculumSchedule s{10, 3};
    CHECK(mode_lambda(TrainMode::tf_curr, s) == doctest::Approx(0.7));
    CHECK(mode_lambda(TrainMode::tf, s) == 0.0);
    CHECK(mode_lambda(TrainMode::ttt, s) == 0.0);
    CHECK(mode_lambda(TrainMode::backbone_only, s) == 1.0);
  }

  TEST_CASE("horizon puts lambda 1 on the first step and 0 on the last") {
    for (std::int64_t steps : {2, 50, 300}) {
      const auto T = curriculum_horizon(steps);
      CHECK(curriculum_lambda({T, 0}) == 1.0);
      CHECK(curriculum_lambda({T, steps - 1}) == 0.0);
    }
  }

  TEST_CASE("mode names round trip") {
    for (auto m : {TrainMode::tf_curr, TrainMode::tf, TrainMode::ttt, TrainMode::backbone_only,
                   TrainMode::eagle_ar})
      CHECK(parse_mode(mode_name(m)) == m);
    CHECK(mode_name(TrainMode::tf_curr) == "TF+Curr");
    CHECK_THROWS_AS(parse_mode("bogus"), ContractError);
  }
}

TEST_SUITE("causal states") {
  TEST_CASE("teacher forcing: zero start, determinism, causality") {
    DominoDrafter m(random_target(), DrafterConfig{}, 3);
    const TokenSeq y{4, 9, 13, 2, 7, 30, 11};
    const auto s = causal_states_tf(m, y);
    REQUIRE(s.size() == 7);
    for (double x : s[0].data()) CHECK(x == 0.0);
    const auto s2 = causal_states_tf(m, y);
    for (std::size_t i = 0; i < 7; ++i) CHECK(same(s[i], s2[i]));
    for (std::size_t j = 0; j < 7; ++j) {
      auto alt = y;
      alt[j] = 50;
      const auto sa = causal_states_tf(m, alt);
      // S_i summarizes y_1..y_i-1 (0-based truth[0..i-1])
      for (std::size_t i = 0; i < 7; ++i) CHECK(same(s[i], sa[i]) == (i <= j));
    }
  }

  TEST_CASE("TTT equals TF exactly when the greedy drafts match the truth") {
    const auto& t = random_target();
    DominoDrafter m(t, DrafterConfig{}, 3);
    auto f = make_fixture(t, 7, 5);
    const auto& ex = f.batch.blocks[0];
    NoGradGuard ng;
    Tensor h = slice_rows(backbone_forward(m, features_tensor(ex.context),
                                           build_masked_block(ex.anchor, 8, t.vocab())),
                          1, 8);
    Tensor base = base_logits(h, m.lm_head());
    Rng rng(1);
    auto ttt = causal_states_ttt(m, h, base, rng);
    REQUIRE(ttt.tokens.size() == 7);
    for (std::size_t i = 0; i < 7; ++i)
      CHECK(ttt.tokens[i] == greedy_token(std::span(base.data()).subspan(i * 64, 64), t.vocab()));
    auto tf_match = causal_states_tf(m, ttt.tokens);
    for (std::size_t i = 0; i < 7; ++i) CHECK(same(ttt.states[i], tf_match[i]));
    auto wrong = ttt.tokens;
    wrong[2] = wrong[2] == 0 ? 1 : 0;
    auto tf_wrong = causal_states_tf(m, wrong);
    for (std::size_t i = 0; i < 7; ++i) CHECK(same(ttt.states[i], tf_wrong[i]) == (i <= 2));
    Rng rng2(1);
    auto again = causal_states_ttt(m, h, base, rng2);
    CHECK(again.tokens == ttt.tokens);
  }
}

TEST_SUITE("block losses") {
  TEST_CASE("W2 = 0 gives equal losses") {
    const auto& t = random_target();
    DominoDrafter m(t, DrafterConfig{}, 3);
    auto f = make_fixture(t, 7, 6);
    Rng rng(1);
    for (double lambda : {0.0, 0.3, 1.0}) {
      auto obj = domino_objective(m, f.batch, lambda, TrainMode::tf_curr, rng);
      CHECK(obj.base.item() == obj.final.item());
      CHECK(obj.loss.item() == doctest::Approx(obj.base.item()).epsilon(1e-14));
    }
  }

  TEST_CASE("uniform logits give ln 64") {
    const auto w = position_weights(7);
    TokenSeq y{1, 2, 3, 4, 5, 6, 7};
    auto l = block_losses(Tensor::zeros({7, 64}), Tensor::zeros({7, 64}), y, w);
    CHECK(l.base.item() == doctest::Approx(std::log(64.0)).epsilon(1e-14));
    CHECK(l.final.item() == doctest::Approx(std::log(64.0)).epsilon(1e-14));
  }

  TEST_CASE("scalar recomputation") {
    Rng rng(8);
    Tensor b = domino::testing::random_const({5, 64}, rng, 3.0);
    Tensor fl = domino::testing::random_const({5, 64}, rng, 3.0);
    TokenSeq y{3, 60, 0, 17, 42};
    const auto w = position_weights(5);
    auto l = block_losses(b, fl, y, w);
    CHECK(std::abs(l.base.item() - scalar_wce(b.data(), 64, y, w)) <= 1e-10);
    CHECK(std::abs(l.final.item() - scalar_wce(fl.data(), 64, y, w)) <= 1e-10);
  }

  TEST_CASE("lambda = 1 gives zero head gradient; lambda = 0 is the final loss") {
    const auto& t = random_target();
    DominoDrafter m(t, DrafterConfig{}, 3);
    auto f = make_fixture(t, 7, 7);
    Rng rng(1);
    m.params().zero_grad();
    auto obj = domino_objective(m, f.batch, 1.0, TrainMode::tf_curr, rng);
    obj.loss.backward();
    for (const auto& e : m.params().entries()) {
      if (!e.name.starts_with("head.")) continue;
      CAPTURE(e.name);
      if (e.tensor.has_grad())
        for (double g : e.tensor.grad()) CHECK(g == 0.0);
    }
    randomize_w2(m, 2);
    auto obj0 = domino_objective(m, f.batch, 0.0, TrainMode::tf_curr, rng);
    CHECK(obj0.loss.item() == obj0.final.item());
    CHECK(obj0.base.item() != obj0.final.item());
  }

  TEST_CASE("combined objective gradient check") {
    TransformerConfig tc;
    tc.vocab = Vocabulary{12, 11, 10};
    tc.d_model = 16;
    tc.d_ff = 16;
    tc.max_context = 32;
    auto t = TinyTransformer::random(tc, 3);
    DrafterConfig dc;
    dc.block_size = 4;
    dc.d_ff = 12;
    dc.state_dim = 6;
    dc.rank = 4;
    DominoDrafter m(t, dc, 4);
    randomize_w2(m, 5);
    auto f = make_fixture(t, 3, 9);
    f.batch.blocks.resize(2);
    std::vector<Tensor> wrt;
    for (auto& e : m.params().entries()) wrt.push_back(e.tensor);
    Rng rng(1);
    GradCheckOptions o;
    o.coords_per_tensor = 8;
    const double err = grad_check(
        [&] { return domino_objective(m, f.batch, 0.4, TrainMode::tf_curr, rng).loss; }, wrt, o);
    CHECK(err <= 1e-4);
  }
}

TEST_SUITE("data") {
  TEST_CASE("corpus round trip and content") {
    auto c = sample_corpus(random_target(), 5, 12, 3);
    REQUIRE(c.sequences.size() == 5);
    for (const auto& s : c.sequences) {
      CHECK(s.size() == 12);
      CHECK(s[0] == 62);
      for (std::size_t i = 1; i < s.size(); ++i) CHECK_FALSE(Vocabulary{}.is_reserved(s[i]));
    }
    std::stringstream ss;
    c.write(ss);
    CHECK(ss.str().rfind("corpus vocab=64 count=5\n", 0) == 0);
    auto back = Corpus::read(ss);
    CHECK(back.sequences == c.sequences);
    CHECK(back.vocab_size == 64);
    auto again = sample_corpus(random_target(), 5, 12, 3);
    CHECK(again.sequences == c.sequences);
  }

  TEST_CASE("blocks fit inside their sequence") {
    auto c = sample_corpus(random_target(), 6, 20, 4);
    auto cache = compute_features(random_target(), c);
    BlockSampler s(c, cache, 7, 4, Rng(1));
    for (int k = 0; k < 10; ++k) {
      for (const auto& b : s.next().blocks) {
        CHECK(b.targets.size() == 7);
        CHECK(b.context.length() >= 1);
        for (auto y : b.targets) CHECK_FALSE(Vocabulary{}.is_reserved(y));
      }
    }
    auto ex = make_block(c, cache, 2, 5, 7);
    CHECK(ex.anchor == c.sequences[2][5]);
    CHECK(ex.context.length() == 5);
    CHECK(ex.targets == TokenSeq(c.sequences[2].begin() + 6, c.sequences[2].begin() + 13));
    CHECK_THROWS_AS(make_block(c, cache, 2, 14, 7), ContractError);
  }
}

TEST_SUITE("training") {
  TEST_CASE("50-step smoke run on the cycle corpus") {
    const auto& t = cycle_target();
    auto corpus = sample_corpus(t, 32, 32, 1);
    DrafterConfig dc;
    TrainConfig tc;
    tc.mode = TrainMode::tf_curr;
    tc.steps = 50;
    tc.seed = 3;
    const std::uint64_t target_hash = params_hash(t.params());
    const std::vector<double> head(t.lm_head().data().begin(), t.lm_head().data().end());
    auto res = train_run(t, corpus, dc, tc);
    REQUIRE(res.curve.size() == 50);
    CHECK(res.curve.back().loss_final < res.curve.front().loss_final);
    CHECK(res.curve.front().lambda == 1.0);
    CHECK(res.curve.back().lambda == 0.0);
    for (std::size_t i = 0; i < 50; ++i)
      CHECK(res.curve[i].lambda == doctest::Approx(1.0 - double(i) / 49.0).epsilon(1e-12));
    CHECK(params_hash(t.params()) == target_hash);
    CHECK(std::memcmp(head.data(), t.lm_head().data().data(), head.size() * 8) == 0);
    CHECK(res.bundle.target_hash == t.hash());
    CHECK(res.bundle.mode == "TF+Curr");

    const std::string path = "test_trainer_curves.csv";
    write_curves_csv(path, res.curve);
    auto back = read_curves_csv(path);
    REQUIRE(back.size() == 50);
    for (std::size_t i = 0; i < 50; ++i)
      CHECK(std::abs(back[i].lambda - (1.0 - double(i) / 49.0)) <= 1e-9);
    std::remove(path.c_str());
  }

  TEST_CASE("backbone-only leaves the head at initialization") {
    const auto& t = random_target();
    auto corpus = sample_corpus(t, 8, 24, 1);
    DrafterConfig dc;
    TrainConfig tc;
    tc.mode = TrainMode::backbone_only;
    tc.steps = 5;
    tc.seed = 3;
    DominoDrafter fresh(t, dc, tc.seed);
    fresh.params().round_to_float();
    auto res = train_run(t, corpus, dc, tc);
    for (const auto& e : res.bundle.params.entries()) {
      if (!e.name.starts_with("head.")) continue;
      CAPTURE(e.name);
      CHECK(same(e.tensor, fresh.p(e.name)));
    }
    for (double x : res.bundle.params.get("head.corr.w2").data()) CHECK(x == 0.0);
    bool moved = false;
    for (const auto& e : res.bundle.params.entries())
      if (e.name.starts_with("backbone.") && !same(e.tensor, fresh.p(e.name))) moved = true;
    CHECK(moved);
  }

  TEST_CASE("trained drafter continues the cycle greedily") {
    const auto& t = cycle_target();
    auto corpus = sample_corpus(t, 64, 40, 2);
    DrafterConfig dc;
    TrainConfig tc;
    tc.steps = 150;
    tc.seed = 4;
    auto res = train_run(t, corpus, dc, tc);
    DominoDrafter m(t, dc, res.bundle.params.clone());
    const auto ord = t.vocab().ordinary_tokens();
    TokenSeq seq{t.vocab().bos()};
    for (int i = 0; i < 20; ++i) seq.push_back(ord[i]);
    auto feats = target_forward(t, std::span(seq).first(seq.size() - 1)).features;
    Rng rng(1);
    auto b = domino_rollout(m, feats, seq.back(), {true, DraftMode::greedy}, rng);
    for (int i = 0; i < 7; ++i) CHECK(b.tokens[i] == ord[20 + i]);
  }

  TEST_CASE("non-finite loss aborts the step") {
    const auto& t = random_target();
    DominoDrafter m(t, DrafterConfig{}, 3);
    auto f = make_fixture(t, 7, 5);
    m.params().get("head.corr.w2").mutable_data()[0] = NAN;
    CurriculumSchedule s{10, 5};
    Optimizer opt;
    Rng rng(1);
    CHECK_THROWS_AS(train_step(m, f.batch, s, opt, TrainMode::tf, 1e-3, rng), NumericError);
  }

  TEST_CASE("AR baseline trains") {
    const auto& t = cycle_target();
    auto corpus = sample_corpus(t, 16, 32, 1);
    TrainConfig tc;
    tc.mode = TrainMode::eagle_ar;
    tc.steps = 30;
    auto res = train_run(t, corpus, DrafterConfig{}, tc);
    CHECK(res.bundle.kind == DrafterKind::ar);
    CHECK(res.curve.back().loss_final < res.curve.front().loss_final);
  }
}
