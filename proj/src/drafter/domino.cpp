#include "domino/drafter/domino.hpp"

#include <cmath>

#include "domino/numerics/error.hpp"

namespace domino {

namespace {

std::string bkey(int l, const char* name) {
  return "backbone.layers." + std::to_string(l) + "." + name;
}

struct Spec {
  std::string name;
  Shape shape;
  enum Init { zero, one, fan_in, small, copy_embed, pos } init;
};

std::vector<Spec> drafter_specs(const DrafterConfig& c, std::size_t d, std::size_t v) {
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto ds = static_cast<std::size_t>(c.state_dim);
  const auto r = static_cast<std::size_t>(c.rank);
  const auto b = static_cast<std::size_t>(c.block_size);
  std::vector<Spec> s{{"backbone.embed", {v, d}, Spec::copy_embed},
                      {"backbone.block_pos", {b, d}, Spec::pos},
                      {"backbone.ctx_proj", {d, d}, Spec::fan_in},
                      {"backbone.ctx_norm", {d}, Spec::one}};
  for (int l = 0; l < c.n_layers; ++l) {
    s.push_back({bkey(l, "attn_norm"), {d}, Spec::one});
    s.push_back({bkey(l, "wq"), {d, d}, Spec::fan_in});
    s.push_back({bkey(l, "wk"), {d, d}, Spec::fan_in});
    s.push_back({bkey(l, "wv"), {d, d}, Spec::fan_in});
    s.push_back({bkey(l, "wo"), {d, d}, Spec::small});
    s.push_back({bkey(l, "mlp_norm"), {d}, Spec::one});
    s.push_back({bkey(l, "w_in"), {d, f}, Spec::fan_in});
    s.push_back({bkey(l, "b_in"), {f}, Spec::zero});
    s.push_back({bkey(l, "w_out"), {f, d}, Spec::small});
  }
  s.push_back({"backbone.final_norm", {d}, Spec::one});
  for (const char* g : {"z", "r", "h"}) {
    s.push_back({std::string("head.gru.w_") + g, {d, ds}, Spec::fan_in});
    s.push_back({std::string("head.gru.u_") + g, {ds, ds}, Spec::fan_in});
    s.push_back({std::string("head.gru.b_") + g, {ds}, Spec::zero});
  }
  s.push_back({"head.corr.w1", {d + ds, r}, Spec::fan_in});
  s.push_back({"head.corr.b1", {r}, Spec::zero});
  s.push_back({"head.corr.w2", {r, v}, Spec::zero});
  return s;
}

// Multi-head attention of block queries over [context; block] keys.
Tensor attention(const Tensor& q, const Tensor& kv_src, const Tensor& wk, const Tensor& wv,
                 int n_heads) {
  const Tensor k = matmul(kv_src, wk);
  const Tensor v = matmul(kv_src, wv);
  const std::size_t d = q.cols();
  const std::size_t dh = d / static_cast<std::size_t>(n_heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out;
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t b = static_cast<std::size_t>(h) * dh;
    Tensor qh = slice_cols(q, b, b + dh);
    Tensor kh = slice_cols(k, b, b + dh);
    Tensor vh = slice_cols(v, b, b + dh);
    Tensor probs = softmax(scale(matmul_nt(qh, kh), inv));
    Tensor oh = matmul(probs, vh);
    out = out.defined() ? concat(out, oh) : oh;
  }
  return out;
}

}  // namespace

void DrafterConfig::validate(int d_model) const {
  if (block_size < 2) throw ContractError("drafter: block_size must be >= 2");
  if (n_layers < 0 || n_heads <= 0 || d_ff <= 0 || state_dim <= 0 || rank <= 0) {
    throw ContractError("drafter: dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ContractError("drafter: d_model % n_heads != 0");
}

DominoDrafter::DominoDrafter(const TinyTransformer& target, DrafterConfig cfg,
                             std::uint64_t seed)
    : target_(&target), cfg_(cfg) {
  cfg_.validate(target.config().d_model);
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(target.config().d_model);
  const auto v = static_cast<std::size_t>(target.vocab().size);
  for (const auto& s : drafter_specs(cfg_, d, v)) {
    Tensor t;
    switch (s.init) {
      case Spec::zero: t = init_zeros(s.shape); break;
      case Spec::one: t = init_ones(s.shape); break;
      case Spec::fan_in:
        t = init_normal(s.shape, 1.0 / std::sqrt(static_cast<double>(s.shape[0])), rng);
        break;
      case Spec::small: t = init_normal(s.shape, cfg_.init_std, rng); break;
      case Spec::pos: t = init_normal(s.shape, 0.1, rng); break;
      case Spec::copy_embed: {
        auto e = target.embed().data();
        t = Tensor::param(s.shape, {e.begin(), e.end()});
        break;
      }
    }
    params_.add(s.name, std::move(t));
  }
  check_params();
}

DominoDrafter::DominoDrafter(const TinyTransformer& target, DrafterConfig cfg, ParamSet params)
    : target_(&target), cfg_(cfg), params_(std::move(params)) {
  cfg_.validate(target.config().d_model);
  for (auto& e : params_.entries()) e.tensor.set_requires_grad(true);
  check_params();
}

void DominoDrafter::check_params() const {
  const auto d = static_cast<std::size_t>(target_->config().d_model);
  const auto v = static_cast<std::size_t>(target_->vocab().size);
  const auto specs = drafter_specs(cfg_, d, v);
  if (specs.size() != params_.size()) throw FormatError("drafter: parameter count mismatch");
  for (const auto& s : specs) {
    if (!params_.contains(s.name)) throw FormatError("drafter: missing " + s.name);
    if (params_.get(s.name).shape() != s.shape) {
      throw ShapeError("drafter: " + s.name + " has shape " +
                       shape_str(params_.get(s.name).shape()));
    }
  }
}

TokenSeq build_masked_block(TokenId anchor, int block_size, const Vocabulary& vocab) {
  if (block_size < 2) throw ContractError("build_masked_block: block size must be >= 2");
  if (!vocab.in_range(anchor) || vocab.is_reserved(anchor)) {
    throw ContractError("build_masked_block: anchor must be an ordinary token");
  }
  TokenSeq row(static_cast<std::size_t>(block_size), vocab.mask());
  row[0] = anchor;
  return row;
}

Tensor features_tensor(const ContextFeatures& features) {
  if (features.length() == 0) throw ContractError("context features are empty");
  return Tensor::from({features.length(), features.dim}, features.values);
}

Tensor backbone_forward(const DominoDrafter& m, const Tensor& context,
                        std::span<const TokenId> block) {
  const auto& c = m.config();
  if (block.size() != static_cast<std::size_t>(c.block_size)) {
    throw ShapeError("backbone_forward: block length != block_size");
  }
  if (context.rank() != 2 || context.cols() != static_cast<std::size_t>(m.d_model())) {
    throw ShapeError("backbone_forward: context features must be [T x d_model]");
  }
  Tensor x = add(gather_rows(m.p("backbone.embed"), block), m.p("backbone.block_pos"));
  const Tensor ctx = rms_norm(matmul(context, m.p("backbone.ctx_proj")),
                              m.p("backbone.ctx_norm"), c.norm_eps);
  for (int l = 0; l < c.n_layers; ++l) {
    const Tensor h = rms_norm(x, m.p(bkey(l, "attn_norm")), c.norm_eps);
    const Tensor q = matmul(h, m.p(bkey(l, "wq")));
    const Tensor att = attention(q, concat_rows(ctx, h), m.p(bkey(l, "wk")),
                                 m.p(bkey(l, "wv")), c.n_heads);
    x = add(x, matmul(att, m.p(bkey(l, "wo"))));
    const Tensor hm = rms_norm(x, m.p(bkey(l, "mlp_norm")), c.norm_eps);
    const Tensor ff = silu(affine(hm, m.p(bkey(l, "w_in")), m.p(bkey(l, "b_in"))));
    x = add(x, matmul(ff, m.p(bkey(l, "w_out"))));
  }
  return rms_norm(x, m.p("backbone.final_norm"), c.norm_eps);
}

Tensor base_logits(const Tensor& hidden, const Tensor& lm_head) { return matmul(hidden, lm_head); }

Tensor gru_step(const DominoDrafter& m, const Tensor& state, const Tensor& embedding) {
  auto gate = [&](const char* g, const Tensor& s) {
    return add_bias(add(matmul(embedding, m.p(std::string("head.gru.w_") + g)),
                        matmul(s, m.p(std::string("head.gru.u_") + g))),
                    m.p(std::string("head.gru.b_") + g));
  };
  const Tensor z = sigmoid(gate("z", state));
  const Tensor r = sigmoid(gate("r", state));
  const Tensor cand = tanh(gate("h", mul(r, state)));
  // (1 - z) * S + z * h~  ==  S + z * (h~ - S)
  return add(state, mul(z, sub(cand, state)));
}

Tensor zero_state(const DominoDrafter& m) {
  return Tensor::zeros({static_cast<std::size_t>(m.config().state_dim)});
}

Tensor token_embedding(const DominoDrafter& m, TokenId t) {
  const TokenId ids[1] = {t};
  return row(gather_rows(m.p("backbone.embed"), ids), 0);
}

Tensor correction_logits(const DominoDrafter& m, const Tensor& hidden, const Tensor& prev_state) {
  const Tensor joint = concat(hidden, prev_state);
  const Tensor low = silu(affine(joint, m.p("head.corr.w1"), m.p("head.corr.b1")));
  return matmul(low, m.p("head.corr.w2"));
}

HeadFlops head_flops(int d_model, int state_dim, int rank, int vocab) {
  HeadFlops f;
  f.correction = static_cast<std::int64_t>(d_model + state_dim) * rank +
                 static_cast<std::int64_t>(rank) * vocab;
  f.full_head = static_cast<std::int64_t>(d_model) * vocab;
  return f;
}

DraftBlock domino_rollout(const DominoDrafter& m, const ContextFeatures& context, TokenId anchor,
                          const RolloutOptions& opts, Rng& rng, InvocationCounts* counts) {
  NoGradGuard no_grad;
  const auto& vocab = m.vocab();
  const int bsz = m.config().block_size;
  const auto gamma = static_cast<std::size_t>(bsz - 1);
  const auto v = static_cast<std::size_t>(vocab.size);

  const TokenSeq block = build_masked_block(anchor, bsz, vocab);
  const Tensor h = backbone_forward(m, features_tensor(context), block);
  const Tensor hf = slice_rows(h, 1, static_cast<std::size_t>(bsz));
  const Tensor base = base_logits(hf, m.lm_head());
  if (counts) {
    ++counts->net_calls;
    ++counts->head_calls;
    ++counts->cycles;
  }

  DraftBlock out;
  out.block_size = bsz;
  out.anchor = anchor;
  out.vocab = v;
  out.tokens.resize(gamma);
  out.base_logits.assign(base.data().begin(), base.data().end());
  out.correction.assign(gamma * v, 0.0);
  out.final_logits = out.base_logits;
  out.q.assign(gamma * v, 0.0);

  Tensor state = zero_state(m);
  for (std::size_t i = 0; i < gamma; ++i) {
    if (opts.use_head) {
      const Tensor corr = correction_logits(m, row(hf, i), state);
      auto cv = corr.data();
      for (std::size_t j = 0; j < v; ++j) {
        out.correction[i * v + j] = cv[j];
        out.final_logits[i * v + j] = out.base_logits[i * v + j] + cv[j];
      }
    }
    pick_draft_token(out, i, vocab, opts.mode, rng);
    if (opts.use_head && i + 1 < gamma) {
      state = gru_step(m, state, token_embedding(m, out.tokens[i]));
    }
  }
  return out;
}

DraftBlock DominoBlockDrafter::draft(const DraftContext& ctx, DraftMode mode, Rng& rng) {
  if (!ctx.features) throw ContractError("domino drafter needs context features");
  RolloutOptions opts;
  opts.use_head = use_head_;
  opts.mode = mode;
  return domino_rollout(*model_, *ctx.features, ctx.anchor(), opts, rng, &counts_);
}

}  // namespace domino
