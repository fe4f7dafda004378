#include "domino/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "domino/numerics/error.hpp"

namespace domino {

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::tf_curr: return "TF+Curr";
    case TrainMode::tf: return "TF";
    case TrainMode::ttt: return "TTT";
    case TrainMode::backbone_only: return "backbone-only";
    case TrainMode::eagle_ar: return "eagle-ar-baseline";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  for (auto m : {TrainMode::tf_curr, TrainMode::tf, TrainMode::ttt, TrainMode::backbone_only,
                 TrainMode::eagle_ar}) {
    if (mode_name(m) == name) return m;
  }
  throw ContractError("unknown training mode '" + name + "'");
}

std::vector<double> position_weights(int gamma) {
  if (gamma < 1) throw ContractError("position_weights: gamma must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(gamma));
  for (int k = 0; k < gamma; ++k) w[k] = std::exp(-static_cast<double>(k) / gamma);
  return w;
}

double curriculum_lambda(const CurriculumSchedule& sched) {
  if (sched.total_steps <= 0) throw ContractError("curriculum: total_steps must be positive");
  if (sched.step < 0) throw ContractError("curriculum: negative step");
  if (sched.step > sched.total_steps) {
    std::fprintf(stderr, "curriculum: step %lld past T=%lld, lambda clamped to 0\n",
                 static_cast<long long>(sched.step), static_cast<long long>(sched.total_steps));
    return 0.0;
  }
  return 1.0 - static_cast<double>(sched.step) / static_cast<double>(sched.total_steps);
}

std::int64_t curriculum_horizon(std::int64_t steps) { return steps > 1 ? steps - 1 : 1; }

double mode_lambda(TrainMode mode, const CurriculumSchedule& sched) {
  switch (mode) {
    case TrainMode::tf_curr: return curriculum_lambda(sched);
    case TrainMode::backbone_only: return 1.0;
    default: return 0.0;
  }
}

std::vector<Tensor> causal_states_tf(const DominoDrafter& m, std::span<const TokenId> truth) {
  std::vector<Tensor> states;
  states.reserve(truth.size());
  Tensor s = zero_state(m);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    states.push_back(s);
    if (i + 1 < truth.size()) s = gru_step(m, s, token_embedding(m, truth[i]));
  }
  return states;
}

TttStates causal_states_ttt(const DominoDrafter& m, const Tensor& hidden, const Tensor& base,
                            Rng& /*rng*/) {
  if (hidden.rows() != base.rows()) throw ShapeError("causal_states_ttt: row mismatch");
  TttStates out;
  Tensor s = zero_state(m);
  const std::size_t g = hidden.rows();
  for (std::size_t i = 0; i < g; ++i) {
    out.states.push_back(s);
    TokenId x;
    {
      NoGradGuard ng;
      const Tensor fin = add(row(base, i), correction_logits(m, row(hidden, i), s));
      x = greedy_token(fin.data(), m.vocab());
    }
    out.tokens.push_back(x);
    if (i + 1 < g) s = gru_step(m, s, token_embedding(m, x));
  }
  return out;
}

BlockLosses block_losses(const Tensor& base_logits, const Tensor& final_logits,
                         std::span<const TokenId> targets, std::span<const double> weights) {
  if (base_logits.shape() != final_logits.shape()) {
    throw ShapeError("block_losses: base and final logits differ in shape");
  }
  return {weighted_cross_entropy(base_logits, targets, weights),
          weighted_cross_entropy(final_logits, targets, weights)};
}

FeatureCache compute_features(const TinyTransformer& target, const Corpus& corpus) {
  FeatureCache cache;
  for (const auto& s : corpus.sequences) {
    cache.per_sequence.push_back(target_forward(target, s).features);
  }
  return cache;
}

BlockExample make_block(const Corpus& corpus, const FeatureCache& cache, std::size_t seq,
                        std::size_t offset, int gamma) {
  const auto& s = corpus.sequences.at(seq);
  const auto g = static_cast<std::size_t>(gamma);
  if (offset < 1 || offset + g >= s.size()) {
    throw ContractError("make_block: block at offset " + std::to_string(offset) +
                        " does not fit a sequence of length " + std::to_string(s.size()));
  }
  const auto& f = cache.per_sequence.at(seq);
  BlockExample ex;
  ex.context.dim = f.dim;
  ex.context.values.assign(f.values.begin(),
                           f.values.begin() + static_cast<std::ptrdiff_t>(offset * f.dim));
  ex.anchor = s[offset];
  ex.targets.assign(s.begin() + static_cast<std::ptrdiff_t>(offset + 1),
                    s.begin() + static_cast<std::ptrdiff_t>(offset + 1 + g));
  return ex;
}

BlockSampler::BlockSampler(const Corpus& corpus, const FeatureCache& cache, int gamma,
                           int batch_size, Rng rng)
    : corpus_(&corpus), cache_(&cache), gamma_(gamma), batch_size_(batch_size), rng_(rng) {
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    if (corpus.sequences[i].size() >= static_cast<std::size_t>(gamma) + 2) order_.push_back(i);
  }
  if (order_.empty()) throw ContractError("BlockSampler: no sequence fits a block");
  if (batch_size <= 0) throw ContractError("BlockSampler: batch size must be positive");
  new_epoch();
}

void BlockSampler::new_epoch() {
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[rng_.uniform_int(i)]);
  }
  pos_ = 0;
}

TrainBatch BlockSampler::next() {
  TrainBatch b;
  while (static_cast<int>(b.blocks.size()) < batch_size_) {
    if (pos_ == order_.size()) new_epoch();
    const std::size_t seq = order_[pos_++];
    // valid offsets: 1 .. len - gamma - 1
    const std::size_t hi = corpus_->sequences[seq].size() - static_cast<std::size_t>(gamma_) - 1;
    const std::size_t off = 1 + rng_.uniform_int(hi);
    b.blocks.push_back(make_block(*corpus_, *cache_, seq, off, gamma_));
  }
  return b;
}

BatchObjective domino_objective(const DominoDrafter& m, const TrainBatch& batch, double lambda,
                                TrainMode mode, Rng& rng) {
  if (batch.blocks.empty()) throw ContractError("domino_objective: empty batch");
  const int bsz = m.config().block_size;
  const auto w = position_weights(bsz - 1);
  Tensor base_sum, final_sum;
  for (const auto& ex : batch.blocks) {
    if (ex.targets.size() != w.size()) throw ShapeError("domino_objective: target length != gamma");
    const TokenSeq block = build_masked_block(ex.anchor, bsz, m.vocab());
    const Tensor h = backbone_forward(m, features_tensor(ex.context), block);
    const Tensor hf = slice_rows(h, 1, static_cast<std::size_t>(bsz));
    const Tensor base = base_logits(hf, m.lm_head());
    Tensor fin = base;
    if (mode != TrainMode::backbone_only) {
      std::vector<Tensor> states = mode == TrainMode::ttt
                                       ? causal_states_ttt(m, hf, base, rng).states
                                       : causal_states_tf(m, ex.targets);
      fin = add(base, correction_logits(m, hf, stack_rows(states)));
    }
    const BlockLosses l = block_losses(base, fin, ex.targets, w);
    base_sum = base_sum.defined() ? add(base_sum, l.base) : l.base;
    final_sum = final_sum.defined() ? add(final_sum, l.final) : l.final;
  }
  const double inv = 1.0 / static_cast<double>(batch.blocks.size());
  BatchObjective obj;
  obj.base = scale(base_sum, inv);
  obj.final = scale(final_sum, inv);
  obj.loss = add(scale(obj.final, 1.0 - lambda), scale(obj.base, lambda));
  return obj;
}

Tensor ar_objective(const ArDrafter& m, const TrainBatch& batch) {
  if (batch.blocks.empty()) throw ContractError("ar_objective: empty batch");
  const int gamma = m.config().gamma();
  const auto w = position_weights(gamma);
  Tensor total;
  for (const auto& ex : batch.blocks) {
    if (ex.targets.size() != w.size()) throw ShapeError("ar_objective: target length != gamma");
    auto last = ex.context.row(ex.context.length() - 1);
    Tensor h = Tensor::from({ex.context.dim}, {last.begin(), last.end()});
    TokenId tok = ex.anchor;
    std::vector<Tensor> rows;
    for (int i = 0; i < gamma; ++i) {
      auto [hn, logits] = ar_step(m, h, tok);
      rows.push_back(logits);
      h = hn;
      tok = ex.targets[i];
    }
    const Tensor l = weighted_cross_entropy(stack_rows(rows), ex.targets, w);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(batch.blocks.size()));
}

void TrainConfig::validate() const {
  if (steps < 1 || steps > 2000) throw ContractError("train: steps must be in [1, 2000]");
  if (batch_size < 1) throw ContractError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ContractError("train: lr must be positive");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) throw ContractError("train: bad warmup_ratio");
}

namespace {

void ensure_finite(const Tensor& loss, const char* what, std::int64_t step) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + what + " at step " + std::to_string(step) +
                       ": " + std::to_string(v));
  }
}

}  // namespace

LossRecord train_step(DominoDrafter& m, const TrainBatch& batch, CurriculumSchedule& sched,
                      Optimizer& opt, TrainMode mode, double lr, Rng& rng) {
  if (mode == TrainMode::eagle_ar) throw ContractError("train_step: AR mode needs an ArDrafter");
  LossRecord rec;
  rec.step = sched.step;
  rec.lambda = mode_lambda(mode, sched);
  const BatchObjective obj = domino_objective(m, batch, rec.lambda, mode, rng);
  rec.loss_base = obj.base.item();
  rec.loss_final = obj.final.item();
  rec.loss_combined = obj.loss.item();
  ensure_finite(obj.loss, "training loss", rec.step);
  m.params().zero_grad();
  obj.loss.backward();
  rec.grad_norm = opt.step(m.params(), lr).grad_norm;
  sched.advance();
  return rec;
}

LossRecord train_step(ArDrafter& m, const TrainBatch& batch, Optimizer& opt, double lr) {
  LossRecord rec;
  rec.step = opt.steps_taken();
  const Tensor loss = ar_objective(m, batch);
  rec.loss_base = rec.loss_final = rec.loss_combined = loss.item();
  ensure_finite(loss, "training loss", rec.step);
  m.params().zero_grad();
  loss.backward();
  rec.grad_norm = opt.step(m.params(), lr).grad_norm;
  return rec;
}

TrainResult train_run(const TinyTransformer& target, const Corpus& corpus,
                      const DrafterConfig& dcfg, const TrainConfig& tcfg,
                      const StepCallback& on_step) {
  tcfg.validate();
  if (corpus.vocab_size != target.vocab().size) {
    throw ContractError("train_run: corpus vocabulary does not match the target");
  }
  const FeatureCache cache = compute_features(target, corpus);
  Rng root(tcfg.seed);
  BlockSampler sampler(corpus, cache, dcfg.gamma(), tcfg.batch_size, root.split(1));
  Rng ttt_rng = root.split(2);
  OptimizerConfig ocfg;
  ocfg.clip_norm = tcfg.clip_norm;
  ocfg.weight_decay = tcfg.weight_decay;
  Optimizer opt(ocfg);

  TrainResult res;
  res.bundle.config = dcfg;
  res.bundle.target_hash = target.hash();
  res.bundle.mode = mode_name(tcfg.mode);
  auto lr_at = [&](std::int64_t t) { return cosine_lr(tcfg.lr, t, tcfg.steps, tcfg.warmup_ratio); };

  if (tcfg.mode == TrainMode::eagle_ar) {
    ArDrafter m(target, dcfg, tcfg.seed);
    for (std::int64_t t = 0; t < tcfg.steps; ++t) {
      const LossRecord rec = train_step(m, sampler.next(), opt, lr_at(t));
      res.curve.push_back(rec);
      if (on_step) on_step(rec);
    }
    m.params().round_to_float();
    res.bundle.kind = DrafterKind::ar;
    res.bundle.params = m.params().clone();
    return res;
  }

  DominoDrafter m(target, dcfg, tcfg.seed);
  if (tcfg.mode == TrainMode::backbone_only) {
    for (auto& e : m.params().entries()) {
      if (e.name.starts_with("head.")) e.frozen = true;
    }
  }
  CurriculumSchedule sched{curriculum_horizon(tcfg.steps), 0};
  for (std::int64_t t = 0; t < tcfg.steps; ++t) {
    const LossRecord rec = train_step(m, sampler.next(), sched, opt, tcfg.mode, lr_at(t), ttt_rng);
    res.curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  m.params().round_to_float();
  for (auto& e : m.params().entries()) e.frozen = false;
  res.bundle.kind = DrafterKind::domino;
  res.bundle.params = m.params().clone();
  return res;
}

std::pair<double, double> evaluate_block_losses(const DominoDrafter& m, const TrainBatch& blocks) {
  NoGradGuard ng;
  Rng unused(0);
  const BatchObjective obj = domino_objective(m, blocks, 0.0, TrainMode::tf, unused);
  return {obj.base.item(), obj.final.item()};
}

void write_curves_csv(const std::string& path, const std::vector<LossRecord>& curve) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "step,lambda,loss_base,loss_final,loss_combined\n";
  char buf[256];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.step), r.lambda, r.loss_base, r.loss_final,
                  r.loss_combined);
    os << buf;
  }
}

std::vector<LossRecord> read_curves_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "step,lambda,loss_base,loss_final,loss_combined") {
    throw FormatError("curves: bad header in " + path);
  }
  std::vector<LossRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRecord r;
    long long step;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf", &step, &r.lambda, &r.loss_base,
                    &r.loss_final, &r.loss_combined) != 5) {
      throw FormatError("curves: bad row '" + line + "'");
    }
    r.step = step;
    out.push_back(r);
  }
  return out;
}

}  // namespace domino
