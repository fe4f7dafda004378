#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "domino/drafter/ar.hpp"
#include "domino/drafter/bundle.hpp"
#include "domino/drafter/domino.hpp"
#include "domino/trainer/corpus.hpp"

namespace domino {

enum class TrainMode { tf_curr, tf, ttt, backbone_only, eagle_ar };

// "TF+Curr", "TF", "TTT", "backbone-only", "eagle-ar-baseline"
std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);

// w_k = exp(-k / gamma), k = 0..gamma-1.
std::vector<double> position_weights(int gamma);

// lambda_t = 1 - t / T, annealed per optimizer step.
struct CurriculumSchedule {
  std::int64_t total_steps = 1;  // T
  std::int64_t step = 0;         // t

  void advance() { ++step; }
};

// Clamps to 0 (with a note on stderr) once t > T.
double curriculum_lambda(const CurriculumSchedule& sched);

// S_0 .. S_{gamma-1}: the state used at future position i summarizes the
// ground-truth tokens y_1 .. y_{i-1}. S_0 is zero.
std::vector<Tensor> causal_states_tf(const DominoDrafter& m, std::span<const TokenId> truth);

struct TttStates {
  std::vector<Tensor> states;  // as causal_states_tf, built from self-drafted tokens
  TokenSeq tokens;             // greedy argmax of the final logits at each position
};
// hidden: gamma x d future-position hidden states; base: gamma x V base logits.
TttStates causal_states_ttt(const DominoDrafter& m, const Tensor& hidden, const Tensor& base,
                            Rng& rng);

struct BlockLosses {
  Tensor base;   // L_base
  Tensor final;  // L_final
};
BlockLosses block_losses(const Tensor& base_logits, const Tensor& final_logits,
                         std::span<const TokenId> targets, std::span<const double> weights);

// One training block: context features for positions < t, anchor x_t and the
// ground-truth continuation y_{t+1..t+gamma}.
struct BlockExample {
  ContextFeatures context;
  TokenId anchor = 0;
  TokenSeq targets;
};

struct TrainBatch {
  std::vector<BlockExample> blocks;
};

// Target features for every position of every sequence, computed once.
struct FeatureCache {
  std::vector<ContextFeatures> per_sequence;
};
FeatureCache compute_features(const TinyTransformer& target, const Corpus& corpus);

BlockExample make_block(const Corpus& corpus, const FeatureCache& cache, std::size_t seq,
                        std::size_t offset, int gamma);

// Yields batches with block offsets drawn uniformly per sequence per epoch.
class BlockSampler {
 public:
  BlockSampler(const Corpus& corpus, const FeatureCache& cache, int gamma, int batch_size,
               Rng rng);
  TrainBatch next();

 private:
  void new_epoch();

  const Corpus* corpus_;
  const FeatureCache* cache_;
  int gamma_;
  int batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct BatchObjective {
  Tensor loss;  // (1 - lambda) L_final + lambda L_base
  Tensor base;
  Tensor final;
};

// Batch loss for a Domino drafter; mode selects teacher-forced or TTT states.
BatchObjective domino_objective(const DominoDrafter& m, const TrainBatch& batch, double lambda,
                                TrainMode mode, Rng& rng);
// Teacher-forced loss of the sequential baseline.
Tensor ar_objective(const ArDrafter& m, const TrainBatch& batch);

struct LossRecord {
  std::int64_t step = 0;
  double lambda = 0.0;
  double loss_base = 0.0;
  double loss_final = 0.0;
  double loss_combined = 0.0;
  double grad_norm = 0.0;
};

struct TrainConfig {
  TrainMode mode = TrainMode::tf_curr;
  std::int64_t steps = 400;
  int batch_size = 16;
  double lr = 3e-3;
  double warmup_ratio = 0.04;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// The curriculum horizon T used for a run of `steps` optimizer steps, chosen
// so that the first step sees lambda = 1 and the last lambda = 0.
std::int64_t curriculum_horizon(std::int64_t steps);

// lambda for a given mode at a given schedule position.
double mode_lambda(TrainMode mode, const CurriculumSchedule& sched);

// One optimizer step. Throws NumericError on a non-finite loss.
LossRecord train_step(DominoDrafter& m, const TrainBatch& batch, CurriculumSchedule& sched,
                      Optimizer& opt, TrainMode mode, double lr, Rng& rng);
LossRecord train_step(ArDrafter& m, const TrainBatch& batch, Optimizer& opt, double lr);

struct TrainResult {
  DrafterBundle bundle;
  std::vector<LossRecord> curve;
};

using StepCallback = std::function<void(const LossRecord&)>;

TrainResult train_run(const TinyTransformer& target, const Corpus& corpus,
                      const DrafterConfig& dcfg, const TrainConfig& tcfg,
                      const StepCallback& on_step = {});

// Mean (L_base, L_final) of a trained Domino drafter over fixed blocks,
// without gradients.
std::pair<double, double> evaluate_block_losses(const DominoDrafter& m, const TrainBatch& blocks);

void write_curves_csv(const std::string& path, const std::vector<LossRecord>& curve);
std::vector<LossRecord> read_curves_csv(const std::string& path);

}  // namespace domino
