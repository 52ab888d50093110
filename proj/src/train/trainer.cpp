#include "csp/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "csp/nd/ops.hpp"

namespace csp::train {

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c;
constexpr std::uint64_t kTrainStream = 0x747261;
constexpr std::uint64_t kSampleStream = 0x736d70;
constexpr std::size_t kEncodeChunk = 100;
const std::string kBaselinePrefix = "baseline.";

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

class MetricsWriter {
 public:
  MetricsWriter(const std::string& dir, bool append) {
    if (dir.empty()) return;
    const auto mode = append ? std::ios::app : std::ios::trunc;
    steps_.open(std::filesystem::path(dir) / "metrics.csv", mode);
    epochs_.open(std::filesystem::path(dir) / "validation.csv", mode);
    if (!steps_ || !epochs_) throw std::runtime_error("cannot open metrics files in " + dir);
    if (!append) {
      steps_ << "epoch,step,mean_sample_cost,mean_baseline_cost,loss,wall_time_s,baseline_replaced\n";
      epochs_ << "epoch,validation_cost,baseline_cost,baseline_replaced\n";
    }
  }

  void step(std::size_t epoch, std::size_t step, double sample, double baseline, double loss,
            double seconds, bool replaced) {
    if (!steps_.is_open()) return;
    steps_ << epoch << ',' << step << ',' << format_double(sample) << ',' << format_double(baseline)
           << ',' << format_double(loss) << ',' << format_double(seconds) << ',' << replaced << '\n';
    steps_.flush();
  }

  void epoch(const EpochSummary& s) {
    if (!epochs_.is_open()) return;
    epochs_ << s.epoch << ',' << format_double(s.validation_cost) << ','
            << format_double(s.baseline_cost) << ',' << s.baseline_replaced << '\n';
    epochs_.flush();
  }

 private:
  std::ofstream steps_;
  std::ofstream epochs_;
};

double mean_of(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  return v.empty() ? 0.0 : total / static_cast<double>(v.size());
}

std::vector<const Instance*> pointers(const std::vector<Instance>& v, std::size_t begin, std::size_t end) {
  std::vector<const Instance*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&v[i]);
  return out;
}

std::string checkpoint_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_training_checkpoint(const std::string& path, const TrainConfig& config,
                               const ParamStore& params, const BaselineState& baseline,
                               std::size_t epoch, double initial_cost) {
  nd::ArrayFile file;
  file.meta["model"] = model_config_json(config.model);
  file.meta["epoch"] = epoch;
  file.meta["baseline_cost"] = baseline.cost;
  file.meta["initial_validation_cost"] = initial_cost;
  file.meta["n_cities"] = config.n_cities;
  file.meta["seed"] = config.seed;
  nd::export_params(params, file);
  nd::export_params(baseline.params, file, kBaselinePrefix, false);
  nd::write_array_file(path, file);
}

}  // namespace

std::size_t TrainConfig::steps_per_epoch() const {
  return (instances_per_epoch + batch_size - 1) / batch_size;
}

void TrainConfig::validate() const {
  if (batch_size == 0 || instances_per_epoch == 0 || validation_size == 0 || n_cities == 0) {
    throw std::invalid_argument("batch size, instances per epoch, validation size and n must be positive");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!std::holds_alternative<KNearest>(spec) && !std::holds_alternative<FixedRadius>(spec)) {
    throw std::invalid_argument("training supports k-nearest and fixed-radius coverage only");
  }
  validate_spec(spec, n_cities);
  model.encoder.validate();
}

std::vector<Instance> validation_set(const TrainConfig& config) {
  std::vector<Instance> out;
  out.reserve(config.validation_size);
  for (std::size_t i = 0; i < config.validation_size; ++i) {
    out.push_back(generate_instance(config.n_cities, config.spec, mix_seed(config.seed, kValidationStream, i)));
  }
  return out;
}

Instance training_instance(const TrainConfig& config, std::size_t epoch, std::size_t step, std::size_t i) {
  const std::uint64_t seed = mix_seed(mix_seed(config.seed, kTrainStream, epoch), step, i);
  return generate_instance(config.n_cities, config.spec, seed);
}

std::vector<double> greedy_costs(ParamStore& params, const ModelConfig& config,
                                 const std::vector<Instance>& instances) {
  std::vector<double> costs;
  costs.reserve(instances.size());
  for (std::size_t begin = 0; begin < instances.size(); begin += kEncodeChunk) {
    const std::size_t end = std::min(instances.size(), begin + kEncodeChunk);
    nd::Tape tape(false);
    const auto encoded = model::encode_batch(tape, params, pointers(instances, begin, end), config.encoder);
    for (std::size_t i = begin; i < end; ++i) {
      costs.push_back(model::decode(tape, params, config, instances[i], encoded[i - begin], {}).cost);
    }
  }
  return costs;
}

double validate(ParamStore& params, const ModelConfig& config, const std::vector<Instance>& instances) {
  return mean_of(greedy_costs(params, config, instances));
}

bool maybe_update_baseline(BaselineState& state, const ParamStore& candidate, double candidate_cost) {
  if (!(candidate_cost < state.cost)) return false;
  state.params = candidate;
  state.cost = candidate_cost;
  return true;
}

BatchLoss reinforce_batch_loss(nd::Tape& tape, ParamStore& params, ParamStore& baseline,
                               const ModelConfig& config, const std::vector<Instance>& batch,
                               std::uint64_t sample_seed) {
  BatchLoss out;
  out.baseline_costs = greedy_costs(baseline, config, batch);

  const auto encoded = model::encode_batch(tape, params, pointers(batch, 0, batch.size()), config.encoder);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<nd::Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    model::DecodeOptions options;
    options.mode = model::DecodeMode::kSample;
    options.seed = mix_seed(sample_seed, i);
    const model::Rollout r = model::decode(tape, params, config, batch[i], encoded[i], options);
    const double advantage = r.cost - out.baseline_costs[i];
    terms.push_back(nd::scale(r.log_prob_var, advantage * inv_b));
    out.sampled.push_back(r.tour);
    out.sample_costs.push_back(r.cost);
    out.log_probs.push_back(r.log_prob);
  }
  out.loss = nd::sum(nd::concat_rows(terms));
  out.loss_value = out.loss.value()[0];
  return out;
}

TrainResult train(const TrainConfig& config, std::ostream* log) {
  config.validate();
  using Clock = std::chrono::steady_clock;
  TrainResult result;
  BaselineState baseline;
  baseline.validation = validation_set(config);
  std::size_t first_epoch = 0;

  if (!config.resume_from.empty()) {
    const nd::ArrayFile file = nd::read_array_file(config.resume_from);
    result.params = model::init_model(config.model, config.seed);
    nd::import_params(result.params, file);
    baseline.params = result.params;
    nd::import_params(baseline.params, file, kBaselinePrefix, false);
    baseline.cost = file.meta.at("baseline_cost").get<double>();
    result.initial_validation_cost = file.meta.at("initial_validation_cost").get<double>();
    first_epoch = file.meta.at("epoch").get<std::size_t>();
  } else {
    result.params = model::init_model(config.model, config.seed);
    baseline.params = result.params;
    baseline.cost = validate(baseline.params, config.model, baseline.validation);
    result.initial_validation_cost = baseline.cost;
  }
  if (log) *log << "initial validation cost " << result.initial_validation_cost << '\n';

  const bool writing = !config.out_dir.empty();
  if (writing) std::filesystem::create_directories(config.out_dir);
  const bool append = !config.resume_from.empty() &&
                      std::filesystem::exists(std::filesystem::path(config.out_dir) / "metrics.csv");
  MetricsWriter metrics(config.out_dir, append);
  if (writing && config.resume_from.empty()) {
    write_training_checkpoint(checkpoint_path(config.out_dir, "ckpt_epoch0.bin"), config, result.params,
                              baseline, 0, result.initial_validation_cost);
  }
  const std::string best_path = writing ? checkpoint_path(config.out_dir, "ckpt_best.bin") : "";

  const nd::AdamConfig adam{config.lr};
  const std::size_t steps = config.steps_per_epoch();
  for (std::size_t epoch = first_epoch; epoch < config.epochs; ++epoch) {
    for (std::size_t step = 0; step < steps; ++step) {
      const auto start = Clock::now();
      std::vector<Instance> batch;
      batch.reserve(config.batch_size);
      for (std::size_t i = 0; i < config.batch_size; ++i) batch.push_back(training_instance(config, epoch, step, i));
      nd::Tape tape;
      BatchLoss loss;
      std::string failure;
      try {
        loss = reinforce_batch_loss(tape, result.params, baseline.params, config.model, batch,
                                    mix_seed(config.seed, kSampleStream, epoch * steps + step));
        if (!std::isfinite(loss.loss_value)) failure = "loss is " + std::to_string(loss.loss_value);
      } catch (const std::domain_error& e) {
        // Non-finite logits leave no selectable city.
        failure = e.what();
      }
      if (!failure.empty()) {
        if (writing) {
          write_training_checkpoint(checkpoint_path(config.out_dir, "ckpt_diverged.bin"), config,
                                    result.params, baseline, epoch, result.initial_validation_cost);
        }
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + failure);
      }
      tape.backward(loss.loss);
      nd::adam_step(result.params, adam);
      const double seconds =
          config.record_timing ? std::chrono::duration<double>(Clock::now() - start).count() : 0.0;
      metrics.step(epoch, step, mean_of(loss.sample_costs), mean_of(loss.baseline_costs), loss.loss_value,
                   seconds, false);
    }

    EpochSummary summary;
    summary.epoch = epoch + 1;
    summary.validation_cost = validate(result.params, config.model, baseline.validation);
    summary.baseline_replaced = maybe_update_baseline(baseline, result.params, summary.validation_cost);
    summary.baseline_cost = baseline.cost;
    metrics.epoch(summary);
    result.epochs.push_back(summary);
    if (log) {
      *log << "epoch " << summary.epoch << " validation cost " << summary.validation_cost << " baseline "
           << summary.baseline_cost << (summary.baseline_replaced ? " (replaced)" : "") << '\n';
    }
    if (writing) {
      write_training_checkpoint(checkpoint_path(config.out_dir, "ckpt_epoch" + std::to_string(epoch + 1) + ".bin"),
                                config, result.params, baseline, epoch + 1, result.initial_validation_cost);
      if (summary.baseline_replaced || !std::filesystem::exists(best_path)) {
        write_training_checkpoint(best_path, config, baseline.params, baseline, epoch + 1,
                                  result.initial_validation_cost);
      }
    }
  }
  result.baseline = std::move(baseline.params);
  return result;
}

nlohmann::json model_config_json(const ModelConfig& config) {
  return {{"d_h", config.encoder.d_h},
          {"num_layers", config.encoder.num_layers},
          {"num_heads", config.encoder.num_heads},
          {"d_ff", config.encoder.d_ff}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.encoder.d_h = j.at("d_h").get<std::size_t>();
  c.encoder.num_layers = j.at("num_layers").get<std::size_t>();
  c.encoder.num_heads = j.at("num_heads").get<std::size_t>();
  c.encoder.d_ff = j.at("d_ff").get<std::size_t>();
  c.encoder.validate();
  return c;
}

LoadedModel load_model(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  const nd::ArrayFile file = nd::read_array_file(path);
  if (!file.meta.contains("model")) throw std::runtime_error(path + ": checkpoint has no model config");
  LoadedModel out;
  out.config = model_config_from_json(file.meta.at("model"));
  out.params = model::init_model(out.config, 0);
  nd::import_params(out.params, file, "", false);
  out.meta = file.meta;
  return out;
}

void save_model(const std::string& path, const ParamStore& params, const ModelConfig& config,
                nlohmann::json meta) {
  nd::ArrayFile file;
  file.meta = std::move(meta);
  file.meta["model"] = model_config_json(config);
  nd::export_params(params, file, "", false);
  nd::write_array_file(path, file);
}

}  // namespace csp::train
