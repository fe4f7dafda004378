#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "domino/numerics/checkpoint.hpp"
#include "domino/numerics/error.hpp"
#include "domino/numerics/grad_check.hpp"
#include "domino/numerics/optim.hpp"
#include "test_util.hpp"

using namespace domino;
using domino::testing::random_const;
using domino::testing::random_param;

TEST_SUITE("affine") {
  TEST_CASE("identity weight returns the input") {
    Tensor x = Tensor::vector({1, 2});
    Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::vector({0, 0});
    Tensor y = affine(x, w, b);
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 2.0);
  }

  TEST_CASE("zero weight returns the bias") {
    Tensor y = affine(Tensor::vector({1, 1}), Tensor::zeros({2, 3}), Tensor::vector({5, 5, 5}));
    REQUIRE(y.size() == 3);
    for (double v : y.data()) CHECK(v == 5.0);
  }

  TEST_CASE("inner dimension mismatch is a shape error") {
    CHECK_THROWS_AS(affine(Tensor::vector({1, 2, 3}), Tensor::zeros({2, 2}), Tensor()),
                    ShapeError);
    CHECK_THROWS_AS(affine(Tensor::vector({1, 2}), Tensor::zeros({2, 2}), Tensor::vector({1})),
                    ShapeError);
  }

  TEST_CASE("gradient of sum(xW + b) matches central differences") {
    Rng rng(7);
    Tensor x = random_param({3, 4}, rng);
    Tensor w = random_param({4, 5}, rng);
    Tensor b = random_param({5}, rng);
    const double err = grad_check([&] { return sum(affine(x, w, b)); }, {x, w, b});
    CHECK(err <= 1e-6);
  }
}

TEST_SUITE("activations") {
  TEST_CASE("silu(0) is 0") { CHECK(silu(Tensor::scalar(0.0)).item() == 0.0); }

  TEST_CASE("log_softmax of a constant row is -ln 4") {
    for (double c : {-3.0, 0.0, 2.5, 700.0}) {
      Tensor y = log_softmax(Tensor::vector({c, c, c, c}));
      for (double v : y.data()) CHECK(std::abs(v + std::log(4.0)) <= 1e-12);
    }
  }

  TEST_CASE("log_softmax rows exponentiate to 1 and have zero logsumexp") {
    Rng rng(3);
    Tensor x = random_const({5, 9}, rng, 10.0);
    Tensor y = log_softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) s += std::exp(y.at(r, c));
      CHECK(std::abs(s - 1.0) <= 1e-12);
      CHECK(std::abs(std::log(s)) <= 1e-10);
    }
  }

  TEST_CASE("every activation passes the finite-difference check") {
    Rng rng(11);
    Tensor x = random_param({3, 6}, rng);
    Tensor probe = random_const({3, 6}, rng);
    for (auto kind : {Activation::silu, Activation::sigmoid, Activation::tanh,
                      Activation::log_softmax, Activation::softmax}) {
      CAPTURE(static_cast<int>(kind));
      const double err = grad_check([&] { return sum(mul(activate(x, kind), probe)); }, {x});
      CHECK(err <= 1e-6);
    }
  }

  TEST_CASE("non-finite input is detected") {
    CHECK_THROWS_AS(silu(Tensor::vector({1.0, NAN})), NumericError);
    CHECK_THROWS_AS(check_finite(std::vector<double>{INFINITY}, "probe"), NumericError);
  }
}

TEST_SUITE("weighted_cross_entropy") {
  TEST_CASE("zero loss when the target has log-probability 0") {
    Tensor logits = Tensor::from({2, 3}, {0, -1e3, -1e3, -1e3, -1e3, 0});
    const std::int32_t t[] = {0, 2};
    const double w[] = {1.0, 0.5};
    CHECK(weighted_cross_entropy(logits, t, w).item() == 0.0);
  }

  TEST_CASE("uniform logits give ln 4 for any weights") {
    Tensor logits = Tensor::zeros({3, 4});
    const std::int32_t t[] = {0, 3, 1};
    const double w[] = {0.2, 3.0, 1.0};
    CHECK(weighted_cross_entropy(logits, t, w).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-15));
  }

  TEST_CASE("matches a scalar loop with exponential position weights") {
    Rng rng(5);
    const int gamma = 3, v = 7;
    Tensor logits = random_const({3, 7}, rng, 2.0);
    const std::int32_t t[] = {4, 0, 6};
    double w[3];
    for (int k = 0; k < gamma; ++k) w[k] = std::exp(-static_cast<double>(k) / gamma);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < gamma; ++k) {
      double m = -INFINITY;
      for (int j = 0; j < v; ++j) m = std::max(m, logits.at(k, j));
      double z = 0.0;
      for (int j = 0; j < v; ++j) z += std::exp(logits.at(k, j) - m);
      num += w[k] * -(logits.at(k, t[k]) - m - std::log(z));
      den += w[k];
    }
    CHECK(std::abs(weighted_cross_entropy(logits, t, w).item() - num / den) <= 1e-12);
  }

  TEST_CASE("errors") {
    const std::int32_t t[] = {0};
    const double zero[] = {0.0};
    const double neg[] = {-1.0};
    CHECK_THROWS_AS(weighted_cross_entropy(Tensor::zeros({1, 3}), t, zero), ContractError);
    CHECK_THROWS_AS(weighted_cross_entropy(Tensor::zeros({1, 3}), t, neg), ContractError);
    CHECK_THROWS_AS(weighted_cross_entropy(Tensor::zeros({1, 3}), {}, {}), ContractError);
    const std::int32_t bad[] = {3};
    const double one[] = {1.0};
    CHECK_THROWS(weighted_cross_entropy(Tensor::zeros({1, 3}), bad, one));
  }

  TEST_CASE("gradient matches central differences") {
    Rng rng(9);
    Tensor logits = random_param({4, 5}, rng);
    const std::int32_t t[] = {1, 4, 0, 2};
    const double w[] = {1.0, 0.7, 0.4, 0.1};
    CHECK(grad_check([&] { return weighted_cross_entropy(logits, t, w); }, {logits}) <= 1e-6);
  }
}

TEST_SUITE("ops") {
  TEST_CASE("every differentiable op passes the finite-difference check") {
    Rng rng(21);
    Tensor a = random_param({3, 4}, rng);
    Tensor b = random_param({4, 2}, rng);
    Tensor c = random_param({3, 4}, rng);
    Tensor bias = random_param({4}, rng);
    Tensor gain = random_param({4}, rng);
    Tensor vec = random_param({4}, rng);
    Tensor table = random_param({5, 4}, rng);
    const std::int32_t ids[] = {3, 0, 3};
    Tensor probe2 = random_const({3, 2}, rng);
    Tensor probe4 = random_const({3, 4}, rng);

    struct Case {
      const char* name;
      std::function<Tensor()> f;
      std::vector<Tensor> wrt;
    };
    const std::vector<Case> cases = {
        {"matmul", [&] { return sum(mul(matmul(a, b), probe2)); }, {a, b}},
        {"matmul_nt", [&] { return sum(mul(matmul_nt(a, c), matmul_nt(c, a))); }, {a, c}},
        {"transpose", [&] { return sum(matmul(transpose(a), probe4)); }, {a}},
        {"add_sub", [&] { return sum(mul(sub(add(a, c), mul(a, c)), probe4)); }, {a, c}},
        {"add_bias", [&] { return sum(mul(add_bias(a, bias), probe4)); }, {a, bias}},
        {"scale_add_scalar", [&] { return sum(mul(add_scalar(scale(a, -1.7), 0.3), a)); }, {a}},
        {"rms_norm", [&] { return sum(mul(rms_norm(a, gain), probe4)); }, {a, gain}},
        {"concat", [&] { return sum(mul(concat(a, c), concat(probe4, probe4))); }, {a, c}},
        {"concat_vec", [&] { return sum(mul(concat(vec, vec), concat(vec, bias))); }, {vec, bias}},
        {"concat_rows", [&] { return sum(mul(concat_rows(a, c), concat_rows(c, probe4))); }, {a, c}},
        {"slices", [&] { return sum(mul(slice_rows(slice_cols(a, 1, 3), 1, 3), slice_rows(slice_cols(c, 0, 2), 0, 2))); }, {a, c}},
        {"row_stack", [&] { Tensor rows[] = {row(a, 2), row(c, 0), vec}; return sum(mul(stack_rows(rows), probe4)); }, {a, c, vec}},
        {"gather_rows", [&] { return sum(mul(gather_rows(table, ids), probe4)); }, {table}},
        {"softmax_matmul", [&] { return sum(mul(matmul(softmax(a), b), probe2)); }, {a, b}},
    };
    for (const auto& cs : cases) {
      CAPTURE(cs.name);
      CHECK(grad_check(cs.f, cs.wrt) <= 1e-6);
    }
  }

  TEST_CASE("gradients are finite after backward") {
    Rng rng(4);
    Tensor x = random_param({2, 3}, rng, 50.0);
    Tensor y = sum(log_softmax(x));
    y.backward();
    for (double g : x.grad()) CHECK(std::isfinite(g));
  }

  TEST_CASE("no graph is recorded under NoGradGuard") {
    Tensor x = Tensor::param({2}, {1.0, 2.0});
    NoGradGuard ng;
    Tensor y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("sum of squares is exact to 1e-8") {
    Rng rng(1);
    Tensor x = random_param({10}, rng);
    CHECK(grad_check([&] { return sum(mul(x, x)); }, {x}) <= 1e-8);
  }

  TEST_CASE("detects a wrong gradient") {
    Tensor x = Tensor::param({3}, {0.3, -0.2, 0.9});
    // detach hides x from the tape, so autodiff sees zero gradient
    const double err = grad_check([&] { return sum(mul(x.detach(), x.detach())); }, {x});
    CHECK(err > 0.1);
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("zero gradients leave parameters unchanged") {
    Rng rng(2);
    ParamSet ps;
    ps.add("w", random_param({3, 3}, rng));
    const std::vector<double> before(ps.get("w").data().begin(), ps.get("w").data().end());
    ps.zero_grad();
    ps.get("w").mutable_grad();
    Optimizer opt;
    opt.step(ps, 0.1);
    CHECK(std::equal(before.begin(), before.end(), ps.get("w").data().begin()));
  }

  TEST_CASE("frozen parameter with nonzero gradient is bitwise unchanged") {
    Rng rng(3);
    ParamSet ps;
    ps.add("lm_head", random_param({4, 4}, rng), true);
    ps.add("w", random_param({4}, rng));
    const std::vector<double> before(ps.get("lm_head").data().begin(),
                                     ps.get("lm_head").data().end());
    Tensor loss = sum(mul(matmul(ps.get("w"), ps.get("lm_head")), Tensor::full({4}, 1.0)));
    loss.backward();
    REQUIRE(ps.get("lm_head").has_grad());
    Optimizer opt;
    opt.step(ps, 0.5);
    CHECK(std::memcmp(before.data(), ps.get("lm_head").data().data(), before.size() * 8) == 0);
  }

  TEST_CASE("SGD with lr 0.1 and gradient 2 decreases by 0.2") {
    ParamSet ps;
    ps.add("x", Tensor::param({1}, {1.0}));
    ps.get("x").mutable_grad()[0] = 2.0;
    OptimizerConfig cfg;
    cfg.kind = OptimizerConfig::Kind::sgd;
    cfg.clip_norm = 0.0;
    Optimizer opt(cfg);
    opt.step(ps, 0.1);
    CHECK(ps.get("x").data()[0] == doctest::Approx(0.8).epsilon(1e-15));
  }

  TEST_CASE("global norm is clipped to clip_norm") {
    ParamSet ps;
    ps.add("a", Tensor::param({1}, {0.0}));
    ps.add("b", Tensor::param({1}, {0.0}));
    ps.get("a").mutable_grad()[0] = 3.0;
    ps.get("b").mutable_grad()[0] = 4.0;
    OptimizerConfig cfg;
    cfg.kind = OptimizerConfig::Kind::sgd;
    cfg.clip_norm = 1.0;
    Optimizer opt(cfg);
    const StepStats s = opt.step(ps, 1.0);
    CHECK(s.grad_norm == doctest::Approx(5.0));
    CHECK(s.clipped);
    CHECK(ps.get("a").data()[0] == doctest::Approx(-0.6));
    CHECK(ps.get("b").data()[0] == doctest::Approx(-0.8));
  }

  TEST_CASE("AdamW first step moves each coordinate by lr against the gradient sign") {
    ParamSet ps;
    ps.add("x", Tensor::param({2}, {1.0, -1.0}));
    ps.get("x").mutable_grad()[0] = 0.3;
    ps.get("x").mutable_grad()[1] = -0.01;
    Optimizer opt;
    opt.step(ps, 0.01);
    CHECK(ps.get("x").data()[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(ps.get("x").data()[1] == doctest::Approx(-0.99).epsilon(1e-6));
  }

  TEST_CASE("parameter names are unique") {
    ParamSet ps;
    ps.add("w", Tensor::zeros({1}));
    CHECK_THROWS_AS(ps.add("w", Tensor::zeros({1})), ContractError);
  }

  TEST_CASE("cosine schedule: warmup, peak, decay to zero") {
    CHECK(cosine_lr(1.0, 0, 100, 0.04) == doctest::Approx(0.25));
    CHECK(cosine_lr(1.0, 3, 100, 0.04) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 4, 100, 0.04) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 100, 100, 0.04) == doctest::Approx(0.0));
    for (int t = 5; t < 100; ++t) CHECK(cosine_lr(1.0, t, 100, 0.04) <= cosine_lr(1.0, t - 1, 100, 0.04));
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit-exact and the hash is stable") {
    Rng rng(8);
    ParamSet ps;
    ps.add("embed", random_param({5, 3}, rng));
    ps.add("gain", random_param({3}, rng));
    ps.add("scalar", Tensor::param({1}, {0.1}));
    ps.round_to_float();
    std::stringstream ss;
    write_checkpoint(ss, ps);
    const ParamSet back = read_checkpoint(ss);
    REQUIRE(back.size() == ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(back.entries()[i].name == ps.entries()[i].name);
      CHECK(back.entries()[i].tensor.shape() == ps.entries()[i].tensor.shape());
      CHECK(std::memcmp(back.entries()[i].tensor.data().data(),
                        ps.entries()[i].tensor.data().data(),
                        ps.entries()[i].tensor.size() * sizeof(double)) == 0);
    }
    CHECK(params_hash(back) == params_hash(ps));
  }

  TEST_CASE("header layout is little-endian magic, version, count") {
    ParamSet ps;
    ps.add("w", Tensor::param({2}, {1.0, 2.0}));
    const auto bytes = checkpoint_bytes(ps);
    REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 1 + 4 + 4 + 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DMCK");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 1);
    float f;
    std::memcpy(&f, bytes.data() + bytes.size() - 4, 4);
    CHECK(f == 2.0f);
  }

  TEST_CASE("corrupt input is a format error") {
    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
    ParamSet ps;
    ps.add("w", Tensor::param({2}, {1.0, 2.0}));
    auto bytes = checkpoint_bytes(ps);
    std::stringstream trunc(std::string(bytes.begin(), bytes.end() - 3));
    CHECK_THROWS_AS(read_checkpoint(trunc), FormatError);
  }

  TEST_CASE("FNV-1a 64 reference values") {
    CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
    CHECK(hash_hex(0xabcULL) == "0000000000000abc");
  }
}

TEST_SUITE("rng") {
  TEST_CASE("same seed, same stream; split streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).split(1), d = Rng(42).split(2), e = Rng(42).split(1);
    const auto x = c.next_u64();
    CHECK(x != d.next_u64());
    CHECK(x == e.next_u64());
  }

  TEST_CASE("uniform and categorical are in range") {
    Rng r(1);
    const double w[] = {0.0, 1.0, 0.0, 3.0};
    int counts[4] = {};
    for (int i = 0; i < 4000; ++i) {
      const double u = r.uniform();
      CHECK((u >= 0.0 && u < 1.0));
      ++counts[r.categorical(w)];
    }
    CHECK(counts[0] == 0);
    CHECK(counts[2] == 0);
    CHECK(counts[3] > 2 * counts[1]);
  }
}
