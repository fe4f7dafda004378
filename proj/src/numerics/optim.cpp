#include "domino/numerics/optim.hpp"

#include <cmath>
#include <numbers>

#include "domino/numerics/error.hpp"

namespace domino {

Tensor& ParamSet::add(std::string name, Tensor t, bool frozen) {
  if (index_.count(name)) throw ContractError("ParamSet: duplicate name " + name);
  if (!t.defined()) throw ContractError("ParamSet: undefined tensor " + name);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(t), frozen});
  return entries_.back().tensor;
}

bool ParamSet::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

const ParamSet::Entry& ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamSet: no parameter " + name);
  return entries_[it->second];
}

Tensor& ParamSet::get(const std::string& name) {
  return const_cast<Entry&>(find(name)).tensor;
}
const Tensor& ParamSet::get(const std::string& name) const { return find(name).tensor; }
bool ParamSet::frozen(const std::string& name) const { return find(name).frozen; }
void ParamSet::set_frozen(const std::string& name, bool frozen) {
  const_cast<Entry&>(find(name)).frozen = frozen;
}

std::size_t ParamSet::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) n += e.tensor.size();
  }
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& e : entries_) {
    Tensor t = e.tensor.detach();
    t.set_requires_grad(e.tensor.requires_grad());
    out.add(e.name, std::move(t), e.frozen);
  }
  return out;
}

void ParamSet::round_to_float() {
  for (auto& e : entries_) {
    for (double& v : e.tensor.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::param(std::move(shape), std::move(v));
}

Tensor init_zeros(Shape shape) {
  const auto n = shape_size(shape);
  return Tensor::param(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor init_ones(Shape shape) {
  const auto n = shape_size(shape);
  return Tensor::param(std::move(shape), std::vector<double>(n, 1.0));
}

StepStats Optimizer::step(ParamSet& params, double lr) {
  StepStats stats;
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    if (e.frozen || !e.tensor.has_grad()) continue;
    for (double g : e.tensor.grad()) sq += g * g;
  }
  stats.grad_norm = std::sqrt(sq);
  if (!std::isfinite(stats.grad_norm)) throw NumericError("optimizer: non-finite gradient norm");
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0 && stats.grad_norm > cfg_.clip_norm) {
    clip = cfg_.clip_norm / stats.grad_norm;
    stats.clipped = true;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& e : params.entries()) {
    if (e.frozen || !e.tensor.has_grad()) continue;
    auto w = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    if (cfg_.kind == OptimizerConfig::Kind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * clip * g[i];
      continue;
    }
    auto& st = state_[e.name];
    if (st.m.empty()) {
      st.m.assign(w.size(), 0.0);
      st.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
  return stats;
}

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps,
                 double warmup_ratio) {
  if (total_steps <= 0) return base_lr;
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_ratio * total_steps));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace domino
