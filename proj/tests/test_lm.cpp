#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "domino/lm/chain.hpp"
#include "domino/lm/tabular.hpp"
#include "domino/lm/transformer.hpp"
#include "domino/numerics/error.hpp"
#include "test_util.hpp"

using namespace domino;

namespace {

TransformerConfig small_config() {
  TransformerConfig c;
  c.vocab = Vocabulary{};
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 48;
  c.max_context = 64;
  return c;
}

TokenSeq random_prefix(const Vocabulary& vocab, std::size_t n, Rng& rng) {
  const auto ord = vocab.ordinary_tokens();
  TokenSeq s{vocab.bos()};
  while (s.size() < n) s.push_back(ord[rng.uniform_int(ord.size())]);
  return s;
}

// Whole-sequence forward in matrix form: rows are positions, attention uses
// an explicit additive causal mask.
Tensor reference_logits(const TinyTransformer& m, std::span<const TokenId> tokens) {
  const auto& c = m.config();
  const auto& p = m.params();
  const std::size_t n = tokens.size(), d = c.d_model, nh = c.n_heads, dh = d / nh;
  auto key = [](int l, const char* s) { return "layers." + std::to_string(l) + "." + s; };

  Tensor x = add(gather_rows(p.get("embed"), tokens), slice_rows(p.get("pos_embed"), 0, n));
  std::vector<double> mask(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask[i * n + j] = -1e9;
  const Tensor causal = Tensor::from({n, n}, mask);

  for (int l = 0; l < c.n_layers; ++l) {
    Tensor h = rms_norm(x, p.get(key(l, "attn_norm")), c.norm_eps);
    Tensor q = matmul(h, p.get(key(l, "wq")));
    Tensor k = matmul(h, p.get(key(l, "wk")));
    Tensor v = matmul(h, p.get(key(l, "wv")));
    Tensor heads;
    for (std::size_t hd = 0; hd < nh; ++hd) {
      Tensor qs = slice_cols(q, hd * dh, (hd + 1) * dh);
      Tensor ks = slice_cols(k, hd * dh, (hd + 1) * dh);
      Tensor vs = slice_cols(v, hd * dh, (hd + 1) * dh);
      Tensor att = softmax(add(scale(matmul_nt(qs, ks), 1.0 / std::sqrt(double(dh))), causal));
      Tensor o = matmul(att, vs);
      heads = heads.defined() ? concat(heads, o) : o;
    }
    x = add(x, matmul(heads, p.get(key(l, "wo"))));
    Tensor g = rms_norm(x, p.get(key(l, "mlp_norm")), c.norm_eps);
    Tensor ff = silu(add_bias(matmul(g, p.get(key(l, "w_in"))), p.get(key(l, "b_in"))));
    x = add(x, matmul(ff, p.get(key(l, "w_out"))));
  }
  return matmul(rms_norm(x, p.get("final_norm"), c.norm_eps), p.get("lm_head"));
}

}  // namespace

TEST_SUITE("vocabulary") {
  TEST_CASE("reserved ids are distinct and in range") {
    Vocabulary v;
    CHECK_NOTHROW(v.validate());
    Vocabulary clash{8, 3, 3};
    CHECK_THROWS_AS(clash.validate(), ContractError);
    Vocabulary out{8, 9, 1};
    CHECK_THROWS_AS(out.validate(), ContractError);
    CHECK(v.ordinary_tokens().size() == 62);
  }

  TEST_CASE("reserved ids get zero mass and are never picked") {
    Vocabulary v{4, 3, 2};
    const double logits[] = {0.0, 1.0, 50.0, 60.0};
    const auto p = next_token_distribution(logits, v);
    CHECK(p[2] == 0.0);
    CHECK(p[3] == 0.0);
    CHECK(greedy_token(logits, v) == 1);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) CHECK(sample_token(p, rng) < 2);
  }

  TEST_CASE("greedy ties go to the lowest id") {
    const double logits[] = {0.5, 2.0, 2.0, 2.0};
    CHECK(greedy_token(logits, Vocabulary::plain(4)) == 1);
    const double probs[] = {0.1, 0.45, 0.45};
    CHECK(argmax_token(probs) == 1);
  }
}

TEST_SUITE("tabular") {
  TEST_CASE("uniform table, V=4") {
    auto t = TabularTarget::uniform(1, Vocabulary::plain(4));
    const TokenId prefix[] = {2};
    const auto row = tabular_next_dist(t, prefix);
    for (double x : row) CHECK(x == 0.25);
  }

  TEST_CASE("cycle table gives a one-hot row") {
    auto t = TabularTarget::cycle(Vocabulary::plain(5));
    for (TokenId prev = 0; prev < 5; ++prev) {
      const TokenId prefix[] = {0, prev};
      const auto row = tabular_next_dist(t, prefix);
      for (TokenId j = 0; j < 5; ++j) CHECK(row[j] == (j == (prev + 1) % 5 ? 1.0 : 0.0));
    }
  }

  TEST_CASE("seeded random tables normalize over every context") {
    for (int order : {1, 2}) {
      for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto t = TabularTarget::random(order, Vocabulary::plain(5), seed);
        for (std::size_t c = 0; c < t.context_count(); ++c) {
          double s = 0.0;
          for (double x : t.row_at(c)) {
            CHECK(x >= 0.0);
            s += x;
          }
          CHECK(std::abs(s - 1.0) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("order-2 lookup uses the last two tokens") {
    auto t = TabularTarget::random(2, Vocabulary::plain(3), 9);
    const TokenId a[] = {0, 1, 2};
    const TokenId b[] = {2, 1, 2};
    const auto ra = tabular_next_dist(t, a);
    const auto rb = tabular_next_dist(t, b);
    CHECK(std::equal(ra.begin(), ra.end(), rb.begin()));
    const auto& direct = t.row_at(1 * 3 + 2);
    CHECK(std::equal(ra.begin(), ra.end(), direct.begin()));
  }

  TEST_CASE("errors") {
    Vocabulary v{6, 5, 4};
    auto t = TabularTarget::random(1, v, 3);
    const TokenId mask_ctx[] = {5};
    CHECK_THROWS(tabular_next_dist(t, mask_ctx));
    auto t2 = TabularTarget::uniform(2, Vocabulary::plain(3));
    const TokenId short_prefix[] = {1};
    CHECK_THROWS_AS(tabular_next_dist(t2, short_prefix), ContractError);
  }

  TEST_CASE("text format round trip") {
    auto t = TabularTarget::random(2, Vocabulary::plain(4), 17);
    std::stringstream ss;
    t.write(ss);
    auto back = TabularTarget::read(ss);
    CHECK(back.order() == 2);
    CHECK(back.vocab() == t.vocab());
    REQUIRE(back.context_count() == t.context_count());
    for (std::size_t c = 0; c < t.context_count(); ++c)
      CHECK(back.row_at(c) == t.row_at(c));
  }

  TEST_CASE("malformed text is a format error") {
    std::stringstream ss("not a table");
    CHECK_THROWS_AS(TabularTarget::read(ss), FormatError);
  }
}

TEST_SUITE("transformer") {
  TEST_CASE("all-zero weights give uniform logits at every position") {
    auto m = TinyTransformer::zeros(small_config());
    Rng rng(1);
    const auto prefix = random_prefix(m.vocab(), 10, rng);
    auto out = target_forward(m, prefix);
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      const auto row = out.rows.logits_row(i, 64);
      for (double x : row) CHECK(x == row[0]);
    }
  }

  TEST_CASE("logits match a matrix-form reimplementation within 1e-6") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto m = TinyTransformer::random(small_config(), seed);
      Rng rng(seed + 100);
      const auto prefix = random_prefix(m.vocab(), 20, rng);
      auto out = target_forward(m, prefix);
      Tensor ref = reference_logits(m, prefix);
      CHECK(domino::testing::max_abs_diff(out.rows.logits, ref.data()) <= 1e-6);
      CHECK(out.features.length() == prefix.size());
      for (double x : out.rows.logits) CHECK(std::isfinite(x));
    }
  }

  TEST_CASE("causality: perturbing token j only changes positions >= j") {
    auto m = TinyTransformer::random(small_config(), 5);
    Rng rng(6);
    auto a = random_prefix(m.vocab(), 16, rng);
    for (std::size_t j : {1u, 7u, 15u}) {
      auto b = a;
      b[j] = b[j] == 0 ? 1 : 0;
      auto oa = target_forward(m, a);
      auto ob = target_forward(m, b);
      const std::size_t v = 64, d = 32;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const bool same_l = std::equal(oa.rows.logits.begin() + i * v, oa.rows.logits.begin() + (i + 1) * v,
                                       ob.rows.logits.begin() + i * v);
        const bool same_f = std::equal(oa.features.values.begin() + i * d,
                                       oa.features.values.begin() + (i + 1) * d,
                                       ob.features.values.begin() + i * d);
        if (i < j) {
          CHECK(same_l);
          CHECK(same_f);
        } else if (i == j) {
          CHECK_FALSE(same_l);
        }
      }
    }
  }

  TEST_CASE("verify_logits_for_block") {
    auto m = TinyTransformer::random(small_config(), 8);
    Rng rng(9);
    const auto prefix = random_prefix(m.vocab(), 12, rng);
    const std::size_t v = 64;

    SUBCASE("empty draft is the last prefix row") {
      auto rows = verify_logits_for_block(m, prefix, {});
      auto full = target_forward(m, prefix);
      REQUIRE(rows.size() == v);
      CHECK(std::equal(rows.begin(), rows.end(), full.rows.logits.end() - v));
    }
    SUBCASE("draft of 3 gives 4 rows equal to incremental decoding") {
      const TokenId draft[] = {4, 17, 0};
      auto rows = verify_logits_for_block(m, prefix, draft);
      REQUIRE(rows.size() == 4 * v);
      TargetSession s(m);
      auto last = s.append(prefix);
      std::vector<double> inc(last.logits.end() - v, last.logits.end());
      for (TokenId t : draft) {
        auto r = s.append({&t, 1});
        inc.insert(inc.end(), r.logits.begin(), r.logits.end());
      }
      CHECK(domino::testing::max_abs_diff(rows, inc) <= 1e-6);
    }
    SUBCASE("reserved ids in the draft are rejected") {
      const TokenId draft[] = {4, 63};
      CHECK_THROWS_AS(verify_logits_for_block(m, prefix, draft), ContractError);
    }
  }

  TEST_CASE("session: batched and one-at-a-time appends are bitwise identical") {
    auto m = TinyTransformer::random(small_config(), 10);
    Rng rng(11);
    const auto prefix = random_prefix(m.vocab(), 30, rng);
    TargetSession a(m), b(m);
    auto ra = a.append(prefix);
    std::vector<double> lb;
    for (TokenId t : prefix) {
      auto r = b.append({&t, 1});
      lb.insert(lb.end(), r.logits.begin(), r.logits.end());
    }
    CHECK(ra.logits == lb);
    a.truncate(10);
    auto again = a.append(std::span(prefix).subspan(10));
    CHECK(std::equal(again.logits.begin(), again.logits.end(), ra.logits.begin() + 10 * 64));
  }

  TEST_CASE("input errors") {
    auto m = TinyTransformer::random(small_config(), 1);
    const TokenId no_bos[] = {3, 4};
    CHECK_THROWS_AS(target_forward(m, no_bos), ContractError);
    const TokenId big[] = {62, 64};
    CHECK_THROWS_AS(target_forward(m, big), ContractError);
    CHECK_THROWS_AS(target_forward(m, {}), ContractError);
    TokenSeq too_long(65, 1);
    too_long[0] = 62;
    CHECK_THROWS_AS(target_forward(m, too_long), ContractError);
  }

  TEST_CASE("checkpoint save and load preserve the hash") {
    auto m = TinyTransformer::random(small_config(), 12);
    const std::string path = "test_lm_model.ckpt";
    m.save(path);
    auto back = TinyTransformer::load(small_config(), path);
    CHECK(back.hash() == m.hash());
    std::remove(path.c_str());
  }
}

TEST_SUITE("chain") {
  TEST_CASE("chain transformer reproduces the transition matrix") {
    TransformerConfig c;
    c.d_model = 64;
    const auto spec = ChainSpec::random_words(c.vocab, 4, 4, 3);
    auto m = make_chain_target(c, spec, 1);
    const auto rows = spec.transition_rows(c.vocab);
    TokenSeq prefix{c.vocab.bos()};
    for (const auto& w : spec.words) prefix.insert(prefix.end(), w.begin(), w.end());
    auto out = target_forward(m, prefix);
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      const auto q = next_token_distribution(out.rows.logits_row(i, 64), c.vocab);
      for (std::size_t u = 0; u < 64; ++u) {
        if (c.vocab.is_reserved(static_cast<TokenId>(u))) continue;
        CHECK(std::abs(q[u] - rows[prefix[i]][u]) <= 1e-6);
      }
    }
  }

  TEST_CASE("words are disjoint and reserved-free") {
    Vocabulary v;
    const auto spec = ChainSpec::random_words(v, 4, 4, 7);
    CHECK_NOTHROW(spec.validate(v));
    CHECK_THROWS_AS(ChainSpec::random_words(v, 20, 4, 7), ContractError);
  }

  TEST_CASE("tabular chain rows normalize and skip reserved ids") {
    Vocabulary v{8, 7, 6};
    auto t = make_chain_tabular(v, ChainSpec::cycle(v));
    for (std::size_t c = 0; c < t.context_count(); ++c) {
      double s = 0.0;
      for (double x : t.row_at(c)) s += x;
      CHECK(std::abs(s - 1.0) <= 1e-12);
      CHECK(t.row_at(c)[6] == 0.0);
      CHECK(t.row_at(c)[7] == 0.0);
    }
    const TokenId p[] = {2};
    CHECK(tabular_next_dist(t, p)[3] == 1.0);
  }
}
