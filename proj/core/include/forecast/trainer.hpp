#pragma once

// Optimization loop, early stopping, rolling experiments and gradient checks.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "forecast/autograd.hpp"
#include "forecast/datastore.hpp"
#include "forecast/nets/checkpoint.hpp"
#include "forecast/nets/models.hpp"

namespace forecast::trainer {

enum class OptimizerKind { Adam, SGD };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  std::size_t patience = 4;
  bool clip_enabled = true;
  double clip_threshold = 5.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Caps the number of training batches per epoch; 0 uses all of them.
  std::size_t max_train_batches = 0;
  /// Start each experiment window from the previous window's best parameters.
  bool warm_start = false;
};

void validate(const TrainConfig& config);
std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view json, const TrainConfig& base);

/// Mean squared error over every element; throws GraphError on shape mismatch.
ag::Var mse_loss(const ag::Var& prediction, const ag::Var& truth);

double gradient_norm(const ag::ParameterSet& params);
/// Rescales all gradients so their global L2 norm is at most `threshold`.
/// Returns the norm before clipping.
double clip_gradients(ag::ParameterSet& params, double threshold);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ag::ParameterSet& params) = 0;
  virtual nets::NamedTensors state() const = 0;
  virtual void load_state(const nets::NamedTensors& state) = 0;
  virtual std::size_t steps() const = 0;
  double learning_rate = 1e-3;
};

class SGD final : public Optimizer {
 public:
  explicit SGD(double lr) { learning_rate = lr; }
  void step(ag::ParameterSet& params) override;
  nets::NamedTensors state() const override { return {}; }
  void load_state(const nets::NamedTensors&) override {}
  std::size_t steps() const override { return steps_; }

 private:
  std::size_t steps_ = 0;
};

class Adam final : public Optimizer {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  void step(ag::ParameterSet& params) override;
  nets::NamedTensors state() const override;
  void load_state(const nets::NamedTensors& state) override;
  std::size_t steps() const override { return steps_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

/// Stops once the validation loss has risen (strictly) for `patience`
/// consecutive epochs; any non-increase resets the count.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);
  /// Records one epoch's validation loss; returns true when training should stop.
  bool update(double val_loss);
  bool stopped() const { return stopped_; }
  bool improved() const { return improved_; }  // last update set a new best
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_loss() const { return best_loss_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t increases_ = 0;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = 0.0;
  double last_ = 0.0;
  bool stopped_ = false;
  bool improved_ = false;
};

struct Metrics {
  double mse = 0.0;            // normalized space
  double mae = 0.0;            // normalized space
  double physical_mse = 0.0;   // target feature units squared
  double physical_mae = 0.0;   // target feature units
  std::size_t samples = 0;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

/// One optimizer update on a normalized batch; returns the loss before the update.
double train_step(nets::ForecastModel& model, const datastore::BatchTensors& batch, Optimizer& optimizer,
                  const TrainConfig& config);

using EpochCallback = std::function<void(const EpochReport&)>;

/// Trains on `train` windows (regrouped into fresh batches every epoch),
/// validates on `val` and restores the parameters of the best validation epoch.
/// An empty validation set keeps the final parameters. Throws TrainingError on
/// a non-finite loss.
FitResult fit(nets::ForecastModel& model, const std::vector<datastore::SampleWindow>& train,
              const std::vector<datastore::SampleWindow>& val, const TrainConfig& config,
              Optimizer* optimizer = nullptr, const EpochCallback& on_epoch = {});

/// Loss over pre-assembled batches, weighted by batch size.
Metrics evaluate(nets::ForecastModel& model, const std::vector<datastore::Batch>& batches);
Metrics evaluate(nets::ForecastModel& model, const std::vector<datastore::SampleWindow>& windows,
                 std::size_t batch_size);

/// Model predictions for a batch in physical units, [b, T_out, M, N], plus
/// attention maps when the model produces them.
struct Prediction {
  Tensor predictions;
  Tensor truth;
  std::optional<Tensor> attention;
};
Prediction predict(nets::ForecastModel& model, const datastore::Batch& batch, std::size_t t_out);

// ---- rolling experiments -----------------------------------------------------

struct ModelSpec {
  std::string label;
  nets::ModelConfig model;
  TrainConfig train;
};

struct ExperimentResult {
  std::size_t experiment_id = 0;
  std::string model;
  bool ok = false;
  std::string error;
  FitResult fit;
  Metrics val;
  Metrics test;
  std::filesystem::path checkpoint;
  double seconds = 0.0;
};

struct SummaryTable {
  std::vector<std::size_t> experiments;
  std::vector<std::string> models;
  // [experiment][model]; NaN for failed runs
  std::vector<std::vector<double>> val_mse;
  std::vector<std::vector<double>> test_mse;
  std::vector<std::vector<double>> test_physical_mae;

  std::vector<double> mean_test_mse() const;
  std::string to_csv() const;
  std::string to_text() const;
};

struct SuiteResult {
  std::vector<ExperimentResult> results;
  SummaryTable table;
};

struct SuiteOptions {
  std::string target_feature = "temperature";
  std::size_t t_out = 10;
  /// Checkpoints and per-epoch loss CSVs go here when set.
  std::optional<std::filesystem::path> output_dir;
  EpochCallback on_epoch;
  std::function<void(const ExperimentResult&)> on_result;
};

SuiteResult run_experiments(std::shared_ptr<const datastore::GridSeries> series,
                            const std::vector<datastore::ExperimentWindow>& windows,
                            const std::vector<ModelSpec>& models, const SuiteOptions& options);

/// Per-epoch losses as CSV `epoch,train_loss,val_loss`.
std::string loss_csv(const FitResult& fit);

// ---- gradient checking ---------------------------------------------------------

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradientCheckOptions {
  double step = 1e-5;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Entries checked per tensor, evenly spaced; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
};

/// Compares analytic gradients of the scalar returned by `loss` against
/// central differences for every parameter in `params`.
GradientCheckResult gradient_check(const std::function<ag::Var()>& loss, ag::ParameterSet& params,
                                   const GradientCheckOptions& options = {});

}  // namespace forecast::trainer
