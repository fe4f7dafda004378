#include "domino/drafter/ar.hpp"

#include <cmath>

#include "domino/numerics/error.hpp"

namespace domino {

namespace {

struct ArSpec {
  std::string name;
  Shape shape;
};

std::vector<ArSpec> ar_specs(const DrafterConfig& c, std::size_t d, std::size_t v) {
  const auto f = static_cast<std::size_t>(c.d_ff);
  return {{"ar.embed", {v, d}},   {"ar.fuse", {2 * d, d}},  {"ar.fuse_b", {d}},
          {"ar.mlp_norm", {d}},   {"ar.w_in", {d, f}},      {"ar.b_in", {f}},
          {"ar.w_out", {f, d}},   {"ar.out_norm", {d}}};
}

}  // namespace

ArDrafter::ArDrafter(const TinyTransformer& target, DrafterConfig cfg, std::uint64_t seed)
    : target_(&target), cfg_(cfg) {
  cfg_.validate(target.config().d_model);
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(target.config().d_model);
  const auto v = static_cast<std::size_t>(target.vocab().size);
  for (const auto& s : ar_specs(cfg_, d, v)) {
    Tensor t;
    if (s.name == "ar.embed") {
      auto e = target.embed().data();
      t = Tensor::param(s.shape, {e.begin(), e.end()});
    } else if (s.name.ends_with("norm")) {
      t = init_ones(s.shape);
    } else if (s.shape.size() == 1) {
      t = init_zeros(s.shape);
    } else if (s.name == "ar.w_out") {
      t = init_normal(s.shape, cfg_.init_std, rng);
    } else {
      t = init_normal(s.shape, 1.0 / std::sqrt(static_cast<double>(s.shape[0])), rng);
    }
    params_.add(s.name, std::move(t));
  }
  check_params();
}

ArDrafter::ArDrafter(const TinyTransformer& target, DrafterConfig cfg, ParamSet params)
    : target_(&target), cfg_(cfg), params_(std::move(params)) {
  cfg_.validate(target.config().d_model);
  for (auto& e : params_.entries()) e.tensor.set_requires_grad(true);
  check_params();
}

void ArDrafter::check_params() const {
  const auto d = static_cast<std::size_t>(target_->config().d_model);
  const auto v = static_cast<std::size_t>(target_->vocab().size);
  const auto specs = ar_specs(cfg_, d, v);
  if (specs.size() != params_.size()) throw FormatError("ar drafter: parameter count mismatch");
  for (const auto& s : specs) {
    if (!params_.contains(s.name)) throw FormatError("ar drafter: missing " + s.name);
    if (params_.get(s.name).shape() != s.shape) {
      throw ShapeError("ar drafter: " + s.name + " has shape " +
                       shape_str(params_.get(s.name).shape()));
    }
  }
}

std::pair<Tensor, Tensor> ar_step(const ArDrafter& m, const Tensor& h_prev, TokenId token) {
  const TokenId ids[1] = {token};
  const Tensor e = row(gather_rows(m.p("ar.embed"), ids), 0);
  Tensor x = affine(concat(h_prev, e), m.p("ar.fuse"), m.p("ar.fuse_b"));
  const double eps = m.config().norm_eps;
  const Tensor hm = rms_norm(x, m.p("ar.mlp_norm"), eps);
  x = add(x, matmul(silu(affine(hm, m.p("ar.w_in"), m.p("ar.b_in"))), m.p("ar.w_out")));
  Tensor h = rms_norm(x, m.p("ar.out_norm"), eps);
  Tensor logits = matmul(h, m.lm_head());
  return {std::move(h), std::move(logits)};
}

DraftBlock ar_rollout(const ArDrafter& m, const ContextFeatures& context, TokenId anchor,
                      int gamma, DraftMode mode, Rng& rng, InvocationCounts* counts,
                      std::span<const TokenId> forced) {
  NoGradGuard no_grad;
  if (gamma < 1) throw ContractError("ar_rollout: gamma must be >= 1");
  if (context.length() == 0) throw ContractError("ar_rollout: empty context");
  if (!forced.empty() && forced.size() != static_cast<std::size_t>(gamma)) {
    throw ShapeError("ar_rollout: forced tokens must have length gamma");
  }
  const auto& vocab = m.vocab();
  const auto v = static_cast<std::size_t>(vocab.size);
  const auto g = static_cast<std::size_t>(gamma);
  auto last = context.row(context.length() - 1);
  Tensor h = Tensor::from({context.dim}, {last.begin(), last.end()});

  DraftBlock out;
  out.block_size = gamma + 1;
  out.anchor = anchor;
  out.vocab = v;
  out.tokens.resize(g);
  out.base_logits.resize(g * v);
  out.correction.assign(g * v, 0.0);
  out.final_logits.resize(g * v);
  out.q.assign(g * v, 0.0);
  TokenId tok = anchor;
  for (std::size_t i = 0; i < g; ++i) {
    auto [hn, logits] = ar_step(m, h, tok);
    if (counts) {
      ++counts->net_calls;
      ++counts->head_calls;
    }
    auto lv = logits.data();
    std::copy(lv.begin(), lv.end(), out.base_logits.begin() + static_cast<std::ptrdiff_t>(i * v));
    std::copy(lv.begin(), lv.end(), out.final_logits.begin() + static_cast<std::ptrdiff_t>(i * v));
    pick_draft_token(out, i, vocab, mode, rng);
    if (!forced.empty()) out.tokens[i] = forced[i];
    tok = out.tokens[i];
    h = hn;
  }
  if (counts) ++counts->cycles;
  return out;
}

DraftBlock ArBlockDrafter::draft(const DraftContext& ctx, DraftMode mode, Rng& rng) {
  if (!ctx.features) throw ContractError("ar drafter needs context features");
  return ar_rollout(*model_, *ctx.features, ctx.anchor(), gamma(), mode, rng, &counts_);
}

}  // namespace domino
