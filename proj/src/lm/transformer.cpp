#include "domino/lm/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "domino/numerics/checkpoint.hpp"
#include "domino/numerics/error.hpp"

namespace domino {

namespace {

std::string layer_key(int l, const char* name) {
  return "layers." + std::to_string(l) + "." + name;
}

void rms_norm_row(const double* x, const double* gain, double* out, std::size_t n,
                  double eps) {
  double ss = 0.0;
  for (std::size_t j = 0; j < n; ++j) ss += x[j] * x[j];
  const double r = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
  for (std::size_t j = 0; j < n; ++j) out[j] = x[j] * r * gain[j];
}

// out[n] = x[k] * W[k x n] (+ b)
void vec_mat(const double* x, const double* w, const double* b, double* out,
             std::size_t k, std::size_t n) {
  if (b) std::copy_n(b, n, out);
  else std::fill_n(out, n, 0.0);
  gemm_acc(x, w, out, 1, k, n);
}

struct ShapeSpec {
  std::string name;
  Shape shape;
};

std::vector<ShapeSpec> param_shapes(const TransformerConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto v = static_cast<std::size_t>(c.vocab.size);
  const auto f = static_cast<std::size_t>(c.d_ff);
  std::vector<ShapeSpec> s{{"embed", {v, d}},
                           {"pos_embed", {static_cast<std::size_t>(c.max_context), d}}};
  for (int l = 0; l < c.n_layers; ++l) {
    s.push_back({layer_key(l, "attn_norm"), {d}});
    s.push_back({layer_key(l, "wq"), {d, d}});
    s.push_back({layer_key(l, "wk"), {d, d}});
    s.push_back({layer_key(l, "wv"), {d, d}});
    s.push_back({layer_key(l, "wo"), {d, d}});
    s.push_back({layer_key(l, "mlp_norm"), {d}});
    s.push_back({layer_key(l, "w_in"), {d, f}});
    s.push_back({layer_key(l, "b_in"), {f}});
    s.push_back({layer_key(l, "w_out"), {f, d}});
  }
  s.push_back({"final_norm", {d}});
  s.push_back({"lm_head", {d, v}});
  return s;
}

bool is_gain(const std::string& name) {
  return name.ends_with("norm");
}

}  // namespace

void TransformerConfig::validate() const {
  vocab.validate();
  if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ff <= 0 || max_context <= 0) {
    throw ContractError("transformer config: dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ContractError("transformer config: d_model % n_heads != 0");
}

void ContextFeatures::append_rows(std::span<const double> rows) {
  if (dim == 0 || rows.size() % dim != 0) throw ShapeError("ContextFeatures: ragged rows");
  values.insert(values.end(), rows.begin(), rows.end());
}

TinyTransformer::TinyTransformer(TransformerConfig cfg, ParamSet params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  for (const auto& spec : param_shapes(cfg_)) {
    if (!params_.contains(spec.name)) throw FormatError("transformer: missing " + spec.name);
    if (params_.get(spec.name).shape() != spec.shape) {
      throw ShapeError("transformer: " + spec.name + " has shape " +
                       shape_str(params_.get(spec.name).shape()) + ", expected " +
                       shape_str(spec.shape));
    }
  }
  if (params_.size() != param_shapes(cfg_).size()) {
    throw FormatError("transformer: unexpected extra parameters");
  }
  for (auto& e : params_.entries()) {
    e.frozen = true;
    e.tensor.set_requires_grad(false);
    check_finite(e.tensor.data(), "transformer weights");
  }
  hash_ = params_hash(params_);
}

TinyTransformer TinyTransformer::random(const TransformerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet ps;
  for (const auto& spec : param_shapes(cfg)) {
    if (is_gain(spec.name)) {
      ps.add(spec.name, init_ones(spec.shape));
    } else if (spec.name.ends_with("b_in")) {
      ps.add(spec.name, init_zeros(spec.shape));
    } else if (spec.name == "embed" || spec.name == "pos_embed") {
      ps.add(spec.name, init_normal(spec.shape, spec.name == "embed" ? 1.0 : 0.1, rng));
    } else {
      ps.add(spec.name, init_normal(spec.shape, 1.0 / std::sqrt(double(spec.shape[0])), rng));
    }
  }
  ps.round_to_float();
  return TinyTransformer(cfg, std::move(ps));
}

TinyTransformer TinyTransformer::zeros(const TransformerConfig& cfg) {
  cfg.validate();
  ParamSet ps;
  for (const auto& spec : param_shapes(cfg)) {
    ps.add(spec.name, is_gain(spec.name) ? init_ones(spec.shape) : init_zeros(spec.shape));
  }
  return TinyTransformer(cfg, std::move(ps));
}

void TinyTransformer::save(const std::string& path) const { save_checkpoint(path, params_); }

TinyTransformer TinyTransformer::load(const TransformerConfig& cfg, const std::string& path) {
  return TinyTransformer(cfg, load_checkpoint(path));
}

// ---- session ----------------------------------------------------------------

TargetSession::TargetSession(const TinyTransformer& model)
    : model_(&model),
      k_cache_(model.config().n_layers),
      v_cache_(model.config().n_layers) {
  const auto& c = model.config();
  x_.resize(c.d_model);
  h_.resize(c.d_model);
  q_.resize(c.d_model);
  att_.resize(c.d_model);
  ff_.resize(c.d_ff);
}

void TargetSession::truncate(std::size_t n) {
  if (n > len_) throw ContractError("TargetSession::truncate beyond length");
  const auto d = static_cast<std::size_t>(model_->config().d_model);
  for (auto& k : k_cache_) k.resize(n * d);
  for (auto& v : v_cache_) v.resize(n * d);
  len_ = n;
}

ForwardRows TargetSession::append(std::span<const TokenId> tokens) {
  const auto& c = model_->config();
  const auto v = static_cast<std::size_t>(c.vocab.size);
  const auto d = static_cast<std::size_t>(c.d_model);
  if (len_ + tokens.size() > static_cast<std::size_t>(c.max_context)) {
    throw ContractError("target: context length " + std::to_string(len_ + tokens.size()) +
                        " exceeds max_context " + std::to_string(c.max_context));
  }
  for (auto t : tokens) {
    if (!c.vocab.in_range(t)) {
      throw ContractError("target: token id " + std::to_string(t) + " out of range");
    }
  }
  ForwardRows out;
  out.count = tokens.size();
  out.logits.resize(out.count * v);
  out.features.resize(out.count * d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    step(tokens[i], out.logits.data() + i * v, out.features.data() + i * d);
  }
  return out;
}

void TargetSession::step(TokenId tok, double* logits_out, double* feature_out) {
  const auto& c = model_->config();
  const auto& p = model_->params();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab.size);
  const auto nh = static_cast<std::size_t>(c.n_heads);
  const std::size_t dh = d / nh;
  const std::size_t pos = len_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const double* emb = p.get("embed").data().data() + static_cast<std::size_t>(tok) * d;
  const double* pe = p.get("pos_embed").data().data() + pos * d;
  for (std::size_t j = 0; j < d; ++j) x_[j] = emb[j] + pe[j];

  for (int l = 0; l < c.n_layers; ++l) {
    rms_norm_row(x_.data(), p.get(layer_key(l, "attn_norm")).data().data(), h_.data(), d,
                 c.norm_eps);
    auto& kc = k_cache_[l];
    auto& vc = v_cache_[l];
    kc.resize((pos + 1) * d);
    vc.resize((pos + 1) * d);
    vec_mat(h_.data(), p.get(layer_key(l, "wq")).data().data(), nullptr, q_.data(), d, d);
    vec_mat(h_.data(), p.get(layer_key(l, "wk")).data().data(), nullptr, kc.data() + pos * d, d, d);
    vec_mat(h_.data(), p.get(layer_key(l, "wv")).data().data(), nullptr, vc.data() + pos * d, d, d);

    scores_.resize(pos + 1);
    for (std::size_t hd = 0; hd < nh; ++hd) {
      const std::size_t off = hd * dh;
      double mx = -1e300;
      for (std::size_t t = 0; t <= pos; ++t) {
        double s = 0.0;
        const double* kt = kc.data() + t * d + off;
        for (std::size_t j = 0; j < dh; ++j) s += q_[off + j] * kt[j];
        scores_[t] = s * inv_sqrt;
        mx = std::max(mx, scores_[t]);
      }
      double z = 0.0;
      for (std::size_t t = 0; t <= pos; ++t) {
        scores_[t] = std::exp(scores_[t] - mx);
        z += scores_[t];
      }
      for (std::size_t j = 0; j < dh; ++j) att_[off + j] = 0.0;
      for (std::size_t t = 0; t <= pos; ++t) {
        const double w = scores_[t] / z;
        const double* vt = vc.data() + t * d + off;
        for (std::size_t j = 0; j < dh; ++j) att_[off + j] += w * vt[j];
      }
    }
    vec_mat(att_.data(), p.get(layer_key(l, "wo")).data().data(), nullptr, h_.data(), d, d);
    for (std::size_t j = 0; j < d; ++j) x_[j] += h_[j];

    rms_norm_row(x_.data(), p.get(layer_key(l, "mlp_norm")).data().data(), h_.data(), d,
                 c.norm_eps);
    vec_mat(h_.data(), p.get(layer_key(l, "w_in")).data().data(),
            p.get(layer_key(l, "b_in")).data().data(), ff_.data(), d, f);
    for (auto& a : ff_) a = a / (1.0 + std::exp(-a));
    vec_mat(ff_.data(), p.get(layer_key(l, "w_out")).data().data(), nullptr, h_.data(), f, d);
    for (std::size_t j = 0; j < d; ++j) x_[j] += h_[j];
  }

  rms_norm_row(x_.data(), p.get("final_norm").data().data(), feature_out, d, c.norm_eps);
  vec_mat(feature_out, model_->lm_head().data().data(), nullptr, logits_out, d, v);
  ++len_;
}

// ---- one-shot helpers -------------------------------------------------------

TargetOutput target_forward(const TinyTransformer& model, std::span<const TokenId> prefix) {
  if (prefix.empty()) throw ContractError("target_forward: empty prefix");
  const auto& vocab = model.vocab();
  if (vocab.bos_id && prefix.front() != *vocab.bos_id) {
    throw ContractError("target_forward: prefix must start with bos");
  }
  TargetSession session(model);
  TargetOutput out;
  out.rows = session.append(prefix);
  out.features.dim = static_cast<std::size_t>(model.config().d_model);
  out.features.values = out.rows.features;
  return out;
}

std::vector<double> verify_logits_for_block(const TinyTransformer& model,
                                            std::span<const TokenId> prefix,
                                            std::span<const TokenId> draft) {
  for (auto t : draft) {
    if (model.vocab().is_reserved(t)) throw ContractError("verify: draft contains a reserved id");
  }
  TokenSeq all(prefix.begin(), prefix.end());
  all.insert(all.end(), draft.begin(), draft.end());
  auto out = target_forward(model, all);
  const auto v = static_cast<std::size_t>(model.vocab().size);
  const std::size_t first = prefix.size() - 1;
  return {out.rows.logits.begin() + static_cast<std::ptrdiff_t>(first * v), out.rows.logits.end()};
}

}  // namespace domino
