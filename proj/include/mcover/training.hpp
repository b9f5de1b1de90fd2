#ifndef MCOVER_TRAINING_HPP
#define MCOVER_TRAINING_HPP

// Triplet training: batches of works x covers, train-mode forward, mined
// triplet loss, backprop and Adam, with an evaluation-loss plateau schedule
// that halves the learning rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mcover/dataset.hpp"
#include "mcover/encoder.hpp"
#include "mcover/error.hpp"
#include "mcover/nn/adam.hpp"
#include "mcover/nn/random.hpp"
#include "mcover/triplet.hpp"

namespace mcover {

struct TripletConfig {
  double margin = 1.0;
  std::size_t batch_size = 100;
  std::size_t works_per_batch = 20;
  std::size_t covers_per_work = 5;
  double initial_lr = 1e-4;
  std::size_t plateau_window = 5000;  // steps without eval improvement before the lr is cut
  double lr_factor = 0.5;
  double min_lr = 1e-7;
  std::size_t max_steps = 100000;
  std::size_t eval_every = 500;
  std::size_t eval_batches = 10;
  std::uint64_t seed = 42;

  void validate() const {
    require(margin > 0.0, ErrorKind::kConfig, "margin must be positive");
    require(works_per_batch >= 2, ErrorKind::kConfig, "a batch needs at least two works");
    require(covers_per_work >= 2, ErrorKind::kConfig, "a batch needs at least two covers per work");
    require(works_per_batch * covers_per_work == batch_size, ErrorKind::kConfig,
            "works_per_batch x covers_per_work must equal batch_size (" + std::to_string(works_per_batch) + " x " +
                std::to_string(covers_per_work) + " != " + std::to_string(batch_size) + ")");
    require(initial_lr > 0.0, ErrorKind::kConfig, "learning rate must be positive");
    require(lr_factor > 0.0 && lr_factor < 1.0, ErrorKind::kConfig, "lr_factor must lie in (0, 1)");
    require(max_steps >= 1, ErrorKind::kConfig, "max_steps must be >= 1");
    require(eval_every >= 1 && eval_batches >= 1, ErrorKind::kConfig, "eval cadence must be >= 1");
  }
};

// Preprocessed inputs grouped by work; labels are dense work indices.
class LabeledSet {
 public:
  void add(PreprocessedInput input, const std::string& work_id) {
    auto it = std::find(work_ids_.begin(), work_ids_.end(), work_id);
    std::size_t label;
    if (it == work_ids_.end()) {
      label = work_ids_.size();
      work_ids_.push_back(work_id);
      members_.emplace_back();
    } else {
      label = static_cast<std::size_t>(it - work_ids_.begin());
    }
    members_[label].push_back(inputs_.size());
    labels_.push_back(static_cast<WorkLabel>(label));
    inputs_.push_back(std::move(input));
  }

  std::size_t size() const { return inputs_.size(); }
  std::size_t work_count() const { return work_ids_.size(); }
  const PreprocessedInput& input(std::size_t i) const { return inputs_[i]; }
  WorkLabel label(std::size_t i) const { return labels_[i]; }
  const std::string& work_id(WorkLabel label) const { return work_ids_[label]; }
  const std::vector<std::size_t>& members(WorkLabel label) const { return members_[label]; }

 private:
  std::vector<PreprocessedInput> inputs_;
  std::vector<WorkLabel> labels_;
  std::vector<std::string> work_ids_;
  std::vector<std::vector<std::size_t>> members_;
};

struct SampledBatch {
  std::vector<const PreprocessedInput*> inputs;
  std::vector<WorkLabel> labels;
  std::vector<std::size_t> indices;  // into the LabeledSet
};

// Distinct works drawn uniformly among those with enough covers; distinct
// covers per work, so no track repeats within a batch.
inline SampledBatch sample_batch(const LabeledSet& set, const TripletConfig& config, nn::Rng& rng) {
  std::vector<WorkLabel> eligible;
  for (std::size_t w = 0; w < set.work_count(); ++w) {
    if (set.members(static_cast<WorkLabel>(w)).size() >= config.covers_per_work) {
      eligible.push_back(static_cast<WorkLabel>(w));
    }
  }
  require(eligible.size() >= config.works_per_batch, ErrorKind::kConfig,
          "only " + std::to_string(eligible.size()) + " works have " + std::to_string(config.covers_per_work) +
              " covers; a batch needs " + std::to_string(config.works_per_batch));
  const auto works = detail::sample_without_replacement(eligible, config.works_per_batch, rng);
  SampledBatch batch;
  for (WorkLabel w : works) {
    for (std::size_t idx : detail::sample_without_replacement(set.members(w), config.covers_per_work, rng)) {
      batch.indices.push_back(idx);
      batch.inputs.push_back(&set.input(idx));
      batch.labels.push_back(w);
    }
  }
  return batch;
}

struct TrainLogRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> eval_loss;
  double lr = 0.0;
  double active_triplet_fraction = 0.0;
};

inline std::string training_log_csv(std::span<const TrainLogRow> rows) {
  std::ostringstream out;
  out.precision(9);
  out << "step,train_loss,eval_loss,lr,active_triplet_fraction\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.train_loss << ',';
    if (r.eval_loss) out << *r.eval_loss;
    out << ',' << r.lr << ',' << r.active_triplet_fraction << '\n';
  }
  return out.str();
}

enum class StopReason { kMaxSteps, kMinLearningRate };

struct TrainResult {
  EncoderParams<float> best;   // parameters at the best evaluation loss
  EncoderParams<float> final;  // parameters after the last step
  nn::AdamState<float> optimizer;
  std::vector<TrainLogRow> log;
  double best_eval_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t steps = 0;
  StopReason stop = StopReason::kMaxSteps;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_step;  // called after every step
};

// Evaluation-mode mean triplet loss over fixed batches.
inline double evaluation_loss(const EncoderParams<float>& params, std::span<const SampledBatch> batches,
                              double margin) {
  double total = 0.0;
  for (const auto& b : batches) {
    const auto emb = encoder_forward(params, make_input_batch<float>(b.inputs), nn::Mode::kEval);
    total += batch_triplet_loss(emb, b.labels, margin).loss;
  }
  return total / static_cast<double>(batches.size());
}

// Learning-rate plateau rule, evaluated whenever an eval loss is available.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, std::size_t window, double factor) : lr_(lr), window_(window), factor_(factor) {}

  // Returns true when the loss improved strictly on the running best.
  bool observe(std::size_t step, double eval_loss) {
    if (eval_loss < best_) {
      best_ = eval_loss;
      anchor_ = step;
      return true;
    }
    if (step - anchor_ >= window_) {
      lr_ *= factor_;
      anchor_ = step;
    }
    return false;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  std::size_t window_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t anchor_ = 0;
};

struct TrainStepResult {
  double loss = 0.0;
  double active_fraction = 0.0;
};

// One optimisation step on a sampled batch.
inline TrainStepResult train_step(EncoderParams<float>& params, nn::AdamState<float>& adam, const SampledBatch& batch,
                                  double margin, nn::Rng& dropout_rng) {
  EncoderCache<float> cache;
  const auto emb =
      encoder_forward(params, make_input_batch<float>(batch.inputs), nn::Mode::kTrain, &dropout_rng, &cache);
  const auto loss = batch_triplet_loss(emb, batch.labels, margin);
  require(std::isfinite(loss.loss), ErrorKind::kNumeric, "training loss is not finite");
  auto grads = encoder_backward(params, cache, loss.gradient);
  update_running_stats(params, cache);
  auto targets = params.trainable();
  auto sources = grads.trainable();
  std::vector<const nn::Tensor<float>*> grad_ptrs(sources.begin(), sources.end());
  nn::adam_step<float>(targets, grad_ptrs, adam);
  return {loss.loss, loss.active_fraction()};
}

inline TrainResult train(const LabeledSet& train_set, const LabeledSet& eval_set, const EncoderConfig& encoder_config,
                         const TripletConfig& config, const TrainHooks& hooks = {}) {
  config.validate();
  encoder_config.validate();
  for (std::size_t w = 0; w < eval_set.work_count(); ++w) {
    for (std::size_t t = 0; t < train_set.work_count(); ++t) {
      require(eval_set.work_id(static_cast<WorkLabel>(w)) != train_set.work_id(static_cast<WorkLabel>(t)),
              ErrorKind::kConfig, "train and eval sets share work '" + eval_set.work_id(static_cast<WorkLabel>(w)) + "'");
    }
  }

  nn::Rng sample_rng(config.seed);
  nn::Rng dropout_rng(config.seed + 1);
  nn::Rng eval_rng(config.seed + 2);
  std::vector<SampledBatch> eval_batches;
  for (std::size_t i = 0; i < config.eval_batches; ++i) eval_batches.push_back(sample_batch(eval_set, config, eval_rng));

  TrainResult result;
  auto params = EncoderParams<float>::initialize(encoder_config, config.seed);
  result.best = params;
  result.optimizer.lr = config.initial_lr;
  PlateauSchedule schedule(config.initial_lr, config.plateau_window, config.lr_factor);

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    result.optimizer.lr = schedule.lr();
    const auto batch = sample_batch(train_set, config, sample_rng);
    const auto stats = train_step(params, result.optimizer, batch, config.margin, dropout_rng);

    TrainLogRow row;
    row.step = step;
    row.train_loss = stats.loss;
    row.lr = schedule.lr();
    row.active_triplet_fraction = stats.active_fraction;
    if (step % config.eval_every == 0 || step == config.max_steps) {
      const double eval_loss = evaluation_loss(params, eval_batches, config.margin);
      require(std::isfinite(eval_loss), ErrorKind::kNumeric, "evaluation loss is not finite at step " + std::to_string(step));
      row.eval_loss = eval_loss;
      if (schedule.observe(step, eval_loss)) {
        result.best = params;
        result.best_eval_loss = eval_loss;
        result.best_step = step;
      }
    }
    result.log.push_back(row);
    result.steps = step;
    if (hooks.on_step) hooks.on_step(row);
    if (schedule.lr() < config.min_lr) {
      result.stop = StopReason::kMinLearningRate;
      break;
    }
  }
  result.optimizer.lr = schedule.lr();
  result.final = std::move(params);
  return result;
}

// Checkpoint with the optimizer state appended.
inline nn::Checkpoint checkpoint_with_optimizer(const EncoderParams<float>& params, const nn::AdamState<float>& adam) {
  auto ckpt = params.to_checkpoint();
  if (!adam.initialized()) return ckpt;
  nn::AdamSnapshot snap;
  snap.step = adam.step;
  snap.lr = adam.lr;
  snap.beta1 = adam.beta1;
  snap.beta2 = adam.beta2;
  snap.eps = adam.eps;
  const auto names = params.trainable_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    snap.moments.push_back({names[i], adam.first_moment[i], adam.second_moment[i]});
  }
  ckpt.adam = std::move(snap);
  return ckpt;
}

}  // namespace mcover

#endif  // MCOVER_TRAINING_HPP
