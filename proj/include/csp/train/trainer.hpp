#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "csp/model/decoder.hpp"
#include "csp/nd/params.hpp"

namespace csp::train {

using model::ModelConfig;
using nd::ParamStore;

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::size_t instances_per_epoch = 10000;
  double lr = 1e-4;
  std::size_t n_cities = 20;
  CoverageSpec spec = KNearest{7};
  std::size_t validation_size = 1000;
  std::uint64_t seed = 1;
  ModelConfig model;
  std::string out_dir;        // checkpoints and metrics; empty writes nothing
  bool record_timing = true;  // false writes wall_time_s as 0
  std::string resume_from;    // checkpoint to continue from

  /// ceil(instances_per_epoch / batch_size).
  std::size_t steps_per_epoch() const;
  /// Throws std::invalid_argument on zero sizes or a spec invalid for n_cities.
  void validate() const;
};

/// Frozen greedy policy and its cost on the fixed validation set.
struct BaselineState {
  ParamStore params;
  std::vector<Instance> validation;
  double cost = 0.0;
};

struct BatchLoss {
  nd::Var loss;
  double loss_value = 0.0;
  std::vector<Tour> sampled;
  std::vector<double> sample_costs;
  std::vector<double> baseline_costs;
  std::vector<double> log_probs;
};

/// Samples one rollout per instance from `params` (instance i uses seed
/// mix_seed(sample_seed, i)) and a greedy rollout from `baseline`, then
/// builds (1/B) sum_i (L_i - L*_i) * log p_i on `tape`, so descending it makes
/// samples cheaper than the baseline more likely. The advantage is a
/// constant; the baseline is evaluated on a separate tape.
BatchLoss reinforce_batch_loss(nd::Tape& tape, ParamStore& params, ParamStore& baseline,
                               const ModelConfig& config, const std::vector<Instance>& batch,
                               std::uint64_t sample_seed);

/// Greedy rollout cost of every instance.
std::vector<double> greedy_costs(ParamStore& params, const ModelConfig& config,
                                 const std::vector<Instance>& instances);

/// Mean greedy rollout cost.
double validate(ParamStore& params, const ModelConfig& config, const std::vector<Instance>& instances);

/// Replaces the baseline iff `candidate_cost` is strictly lower. Returns
/// whether it did.
bool maybe_update_baseline(BaselineState& state, const ParamStore& candidate, double candidate_cost);

/// Fixed validation instances of a run.
std::vector<Instance> validation_set(const TrainConfig& config);

/// Instance i of training step `step` in epoch `epoch`.
Instance training_instance(const TrainConfig& config, std::size_t epoch, std::size_t step, std::size_t i);

struct EpochSummary {
  std::size_t epoch = 0;
  double validation_cost = 0.0;
  double baseline_cost = 0.0;
  bool baseline_replaced = false;
};

struct TrainResult {
  ParamStore params;
  ParamStore baseline;
  double initial_validation_cost = 0.0;
  std::vector<EpochSummary> epochs;
};

/// Runs REINFORCE with the greedy rollout baseline. When out_dir is set,
/// writes metrics.csv, validation.csv, ckpt_epoch{k}.bin (k = 0 is the
/// initial model) and ckpt_best.bin. Progress lines go to `log` if given.
/// A non-finite loss writes ckpt_diverged.bin and throws std::runtime_error.
TrainResult train(const TrainConfig& config, std::ostream* log = nullptr);

struct LoadedModel {
  ModelConfig config;
  ParamStore params;
  nlohmann::json meta;
};

/// Reads the policy parameters of a training checkpoint.
/// Throws std::runtime_error for a missing or malformed file.
LoadedModel load_model(const std::string& path);

/// Writes `params` as a model-only checkpoint readable by load_model.
void save_model(const std::string& path, const ParamStore& params, const ModelConfig& config,
                nlohmann::json meta = nlohmann::json::object());

nlohmann::json model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace csp::train
