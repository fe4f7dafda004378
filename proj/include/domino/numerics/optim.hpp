#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "domino/numerics/rng.hpp"
#include "domino/numerics/tensor.hpp"

namespace domino {

// Named parameter collection with per-parameter frozen flags. Iteration order
// is insertion order, which checkpoints and hashes rely on.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool frozen = false;
  };

  Tensor& add(std::string name, Tensor t, bool frozen = false);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool frozen(const std::string& name) const;
  void set_frozen(const std::string& name, bool frozen);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  // Total scalar count, optionally restricted to names starting with prefix.
  std::size_t scalar_count(const std::string& prefix = "") const;

  void zero_grad();
  // Deep copy of every value; frozen flags preserved, graph history dropped.
  ParamSet clone() const;
  // Rounds every value to the nearest float, matching what a checkpoint
  // stores, so saved and in-memory models agree bitwise.
  void round_to_float();

 private:
  const Entry& find(const std::string& name) const;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

Tensor init_normal(Shape shape, double stddev, Rng& rng);
Tensor init_zeros(Shape shape);
Tensor init_ones(Shape shape);

struct OptimizerConfig {
  enum class Kind { adamw, sgd };
  Kind kind = Kind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Global L2 gradient-norm cap; <= 0 disables clipping.
  double clip_norm = 1.0;
};

struct StepStats {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

// AdamW (decoupled weight decay) or plain SGD over the unfrozen entries of a
// ParamSet. Parameters without an accumulated gradient are treated as having
// a zero gradient.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}
  StepStats step(ParamSet& params, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

// Linear warmup followed by cosine decay to zero.
double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps,
                 double warmup_ratio);

}  // namespace domino
