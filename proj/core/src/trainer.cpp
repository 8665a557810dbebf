#include "forecast/trainer.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "forecast/errors.hpp"

namespace forecast::trainer {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SGD;
  throw ConfigError("optimizer must be 'adam' or 'sgd', got '" + std::string(name) + "'");
}

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
  if (c.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (c.max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
  if (c.patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (c.clip_enabled && !(c.clip_threshold > 0.0)) throw ConfigError("train config: clip_threshold must be > 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.epsilon > 0.0)) {
    throw ConfigError("train config: Adam coefficients out of range");
  }
}

std::string to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"clip_enabled", c.clip_enabled},
              {"clip_threshold", c.clip_threshold},
              {"optimizer", to_string(c.optimizer)},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsilon", c.epsilon},
              {"seed", c.seed},
              {"max_train_batches", c.max_train_batches},
              {"warm_start", c.warm_start}}
      .dump();
}

TrainConfig train_config_from_json(std::string_view text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c = base;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
      else if (key == "patience") c.patience = value.get<std::size_t>();
      else if (key == "clip_enabled") c.clip_enabled = value.get<bool>();
      else if (key == "clip_threshold") c.clip_threshold = value.get<double>();
      else if (key == "optimizer") c.optimizer = parse_optimizer(value.get<std::string>());
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "max_train_batches") c.max_train_batches = value.get<std::size_t>();
      else if (key == "warm_start") c.warm_start = value.get<bool>();
      else throw ConfigError("unknown train config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config has a value of the wrong type: ") + e.what());
  }
  return c;
}

ag::Var mse_loss(const ag::Var& prediction, const ag::Var& truth) { return ag::mse(prediction, truth); }

double gradient_norm(const ag::ParameterSet& params) {
  double total = 0.0;
  for (const auto& p : params.items()) {
    const Tensor& g = p.var().grad();
    if (!g.empty()) total += g.l2_norm_squared();
  }
  return std::sqrt(total);
}

double clip_gradients(ag::ParameterSet& params, double threshold) {
  const double norm = gradient_norm(params);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (auto& p : params.items()) p.grad() *= factor;
  }
  return norm;
}

void SGD::step(ag::ParameterSet& params) {
  ++steps_;
  for (auto& p : params.items()) {
    double* w = p.value().raw();
    const double* g = p.grad().raw();
    for (std::size_t i = 0; i < p.value().size(); ++i) w[i] -= learning_rate * g[i];
  }
}

Adam::Adam(double lr, double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  learning_rate = lr;
}

void Adam::step(ag::ParameterSet& params) {
  if (m_.empty()) {
    for (const auto& p : params.items()) {
      names_.push_back(p.name());
      m_.emplace_back(p.value().shape());
      v_.emplace_back(p.value().shape());
    }
  }
  if (m_.size() != params.size()) throw TrainingError("optimizer state does not match the parameter set");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  std::size_t k = 0;
  for (auto& p : params.items()) {
    double* w = p.value().raw();
    const double* g = p.grad().raw();
    double* m = m_[k].raw();
    double* v = v_[k].raw();
    for (std::size_t i = 0; i < p.value().size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
    ++k;
  }
}

nets::NamedTensors Adam::state() const {
  nets::NamedTensors out;
  for (std::size_t k = 0; k < m_.size(); ++k) {
    out.emplace_back(names_[k] + ".m", m_[k]);
    out.emplace_back(names_[k] + ".v", v_[k]);
  }
  return out;
}

void Adam::load_state(const nets::NamedTensors& state) {
  if (state.size() % 2) throw DataError("Adam state must hold (m, v) pairs");
  names_.clear();
  m_.clear();
  v_.clear();
  for (std::size_t k = 0; k < state.size(); k += 2) {
    const std::string& name = state[k].first;
    names_.push_back(name.substr(0, name.size() - 2));
    m_.push_back(state[k].second);
    v_.push_back(state[k + 1].second);
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& c) {
  if (c.optimizer == OptimizerKind::SGD) return std::make_unique<SGD>(c.learning_rate);
  return std::make_unique<Adam>(c.learning_rate, c.beta1, c.beta2, c.epsilon);
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epochs_;
  improved_ = false;
  if (epochs_ == 1 || val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epochs_;
    improved_ = true;
  }
  if (epochs_ > 1 && val_loss > last_) {
    ++increases_;
  } else {
    increases_ = 0;
  }
  last_ = val_loss;
  if (increases_ >= patience_) stopped_ = true;
  return stopped_;
}

double train_step(nets::ForecastModel& model, const datastore::BatchTensors& batch, Optimizer& optimizer,
                  const TrainConfig& config) {
  auto& params = model.parameters();
  params.zero_grad();
  const std::size_t t_out = batch.targets.dim(1);
  const auto out = model.forward(ag::constant(batch.inputs), batch.target_feature, t_out);
  const ag::Var loss = mse_loss(out.predictions, ag::constant(batch.targets));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) return value;
  ag::backward(loss);
  if (config.clip_enabled) clip_gradients(params, config.clip_threshold);
  optimizer.step(params);
  return value;
}

Metrics evaluate(nets::ForecastModel& model, const std::vector<datastore::Batch>& batches) {
  ag::NoGradGuard no_grad;
  Metrics m;
  double se = 0.0, ae = 0.0, pse = 0.0, pae = 0.0;
  std::size_t count = 0;
  for (const auto& batch : batches) {
    const auto tensors = datastore::materialize(batch);
    const std::size_t t_out = tensors.targets.dim(1);
    const auto out = model.forward(ag::constant(tensors.inputs), tensors.target_feature, t_out);
    const Tensor& pred = out.predictions.value();
    const double range = batch.norm.is_degenerate(tensors.target_feature) ? 0.0 : batch.norm.range(tensors.target_feature);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double diff = pred[i] - tensors.targets[i];
      se += diff * diff;
      ae += std::abs(diff);
      pse += diff * diff * range * range;
      pae += std::abs(diff) * range;
    }
    count += pred.size();
    m.samples += batch.size();
  }
  if (count) {
    const double n = static_cast<double>(count);
    m.mse = se / n;
    m.mae = ae / n;
    m.physical_mse = pse / n;
    m.physical_mae = pae / n;
  }
  return m;
}

Metrics evaluate(nets::ForecastModel& model, const std::vector<datastore::SampleWindow>& windows,
                 std::size_t batch_size) {
  if (windows.empty()) return {};
  std::vector<datastore::Batch> batches;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    datastore::Batch b;
    b.windows.assign(windows.begin() + static_cast<std::ptrdiff_t>(begin),
                     windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), begin + batch_size)));
    b.norm = datastore::compute_record(b.windows);
    batches.push_back(std::move(b));
  }
  return evaluate(model, batches);
}

FitResult fit(nets::ForecastModel& model, const std::vector<datastore::SampleWindow>& train,
              const std::vector<datastore::SampleWindow>& val, const TrainConfig& config, Optimizer* optimizer,
              const EpochCallback& on_epoch) {
  validate(config);
  if (train.empty()) throw TrainingError("no training windows");
  std::unique_ptr<Optimizer> owned;
  if (!optimizer) {
    owned = make_optimizer(config);
    optimizer = owned.get();
  }
  // validation batches keep one grouping for the whole run
  std::vector<datastore::Batch> val_batches;
  if (!val.empty()) {
    for (std::size_t begin = 0; begin < val.size(); begin += config.batch_size) {
      datastore::Batch b;
      b.windows.assign(val.begin() + static_cast<std::ptrdiff_t>(begin),
                       val.begin() + static_cast<std::ptrdiff_t>(std::min(val.size(), begin + config.batch_size)));
      b.norm = datastore::compute_record(b.windows);
      val_batches.push_back(std::move(b));
    }
  }

  FitResult result;
  EarlyStopping stopper(config.patience);
  std::vector<Tensor> best = model.parameters().snapshot();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    auto batches = datastore::assemble_batches(train, config.batch_size, config.seed + epoch);
    if (config.max_train_batches && batches.size() > config.max_train_batches) batches.resize(config.max_train_batches);
    double total = 0.0;
    std::size_t samples = 0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      const double loss = train_step(model, datastore::materialize(batches[i]), *optimizer, config);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(i) + " (lr=" + format_double(optimizer->learning_rate) + ")");
      }
      total += loss * static_cast<double>(batches[i].size());
      samples += batches[i].size();
    }
    EpochReport report;
    report.epoch = epoch;
    report.train_loss = total / static_cast<double>(samples);
    report.val_loss = val_batches.empty() ? kNaN : evaluate(model, val_batches).mse;
    if (!val_batches.empty() && !std::isfinite(report.val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch) +
                          " (lr=" + format_double(optimizer->learning_rate) + ")");
    }
    report.seconds = seconds_since(start);
    result.train_losses.push_back(report.train_loss);
    result.val_losses.push_back(report.val_loss);
    if (on_epoch) on_epoch(report);
    if (val_batches.empty()) continue;
    const bool stop = stopper.update(report.val_loss);
    if (stopper.improved()) best = model.parameters().snapshot();
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  if (val_batches.empty()) {
    result.best_epoch = result.train_losses.size();
    result.best_val_loss = kNaN;
  } else {
    model.parameters().restore(best);
    result.best_epoch = stopper.best_epoch();
    result.best_val_loss = stopper.best_loss();
  }
  return result;
}

Prediction predict(nets::ForecastModel& model, const datastore::Batch& batch, std::size_t t_out) {
  ag::NoGradGuard no_grad;
  const auto tensors = datastore::materialize(batch);
  auto out = model.forward(ag::constant(tensors.inputs), tensors.target_feature, t_out);
  Prediction p;
  const std::size_t k = tensors.target_feature;
  p.predictions = datastore::denormalize(out.predictions.value(), batch.norm, k);
  p.truth = datastore::denormalize(tensors.targets, batch.norm, k);
  p.attention = std::move(out.attention);
  return p;
}

// ---- experiments ---------------------------------------------------------------

std::vector<double> SummaryTable::mean_test_mse() const {
  std::vector<double> out(models.size(), 0.0);
  for (std::size_t j = 0; j < models.size(); ++j) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& row : test_mse)
      if (std::isfinite(row[j])) {
        total += row[j];
        ++n;
      }
    out[j] = n ? total / static_cast<double>(n) : kNaN;
  }
  return out;
}

std::string SummaryTable::to_csv() const {
  std::ostringstream out;
  out << "experiment,split";
  for (const auto& m : models) out << ',' << m;
  out << '\n';
  auto rows = [&](const char* split, const std::vector<std::vector<double>>& values) {
    for (std::size_t i = 0; i < experiments.size(); ++i) {
      out << experiments[i] << ',' << split;
      for (double v : values[i]) out << ',' << (std::isfinite(v) ? format_double(v) : "failed");
      out << '\n';
    }
  };
  rows("val_mse", val_mse);
  rows("test_mse", test_mse);
  rows("test_physical_mae", test_physical_mae);
  return out.str();
}

std::string SummaryTable::to_text() const {
  std::ostringstream out;
  std::size_t width = 12;
  for (const auto& m : models) width = std::max(width, m.size() + 2);
  auto block = [&](const char* title, const std::vector<std::vector<double>>& values) {
    out << title << '\n' << std::left << std::setw(12) << "Experiment";
    for (const auto& m : models) out << std::right << std::setw(static_cast<int>(width)) << m;
    out << '\n';
    for (std::size_t i = 0; i < experiments.size(); ++i) {
      // mark the lowest score in each row
      std::size_t best = models.size();
      for (std::size_t j = 0; j < models.size(); ++j)
        if (std::isfinite(values[i][j]) && (best == models.size() || values[i][j] < values[i][best])) best = j;
      out << std::left << std::setw(12) << experiments[i];
      for (std::size_t j = 0; j < models.size(); ++j) {
        std::ostringstream cell;
        if (std::isfinite(values[i][j])) {
          cell << std::fixed << std::setprecision(4) << values[i][j] << (j == best ? "*" : " ");
        } else {
          cell << "failed ";
        }
        out << std::right << std::setw(static_cast<int>(width)) << cell.str();
      }
      out << '\n';
    }
    out << '\n';
  };
  block("Validation MSE (normalized)", val_mse);
  block("Test MSE (normalized)", test_mse);
  block("Test MAE (physical units)", test_physical_mae);
  out << "* lowest score in the row\n";
  return out.str();
}

std::string loss_csv(const FitResult& fit) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < fit.train_losses.size(); ++e) {
    out << e + 1 << ',' << format_double(fit.train_losses[e]) << ','
        << (std::isfinite(fit.val_losses[e]) ? format_double(fit.val_losses[e]) : "") << '\n';
  }
  return out.str();
}

SuiteResult run_experiments(std::shared_ptr<const datastore::GridSeries> series,
                            const std::vector<datastore::ExperimentWindow>& windows,
                            const std::vector<ModelSpec>& models, const SuiteOptions& options) {
  if (models.empty()) throw ConfigError("no models to run");
  const std::size_t target = series->feature_index(options.target_feature);
  SuiteResult suite;
  auto& table = suite.table;
  for (const auto& spec : models) table.models.push_back(spec.label);
  std::map<std::string, nets::NamedTensors> previous;  // warm-start source per model

  for (const auto& window : windows) {
    table.experiments.push_back(window.experiment_id);
    table.val_mse.emplace_back(models.size(), kNaN);
    table.test_mse.emplace_back(models.size(), kNaN);
    table.test_physical_mae.emplace_back(models.size(), kNaN);
    for (std::size_t j = 0; j < models.size(); ++j) {
      const ModelSpec& spec = models[j];
      ExperimentResult r;
      r.experiment_id = window.experiment_id;
      r.model = spec.label;
      const auto start = std::chrono::steady_clock::now();
      try {
        nets::ModelConfig mc = spec.model;
        mc.features = series->feature_count();
        mc.t_out = options.t_out;
        auto model = nets::make_model(mc);
        if (spec.train.warm_start && previous.count(spec.label)) nets::load_parameters(*model, previous[spec.label]);
        const std::size_t t_in = model->input_steps();
        const std::size_t floor = window.span.begin;
        const auto train = datastore::make_windows_for_targets(series, t_in, options.t_out, target, window.train, floor);
        const auto val = datastore::make_windows_for_targets(series, t_in, options.t_out, target, window.val, floor);
        const auto test = datastore::make_windows_for_targets(series, t_in, options.t_out, target, window.test, floor);
        if (train.empty() || val.empty() || test.empty()) {
          throw WindowingError("experiment " + std::to_string(window.experiment_id) +
                               " is too short for T_in=" + std::to_string(t_in) +
                               ", T_out=" + std::to_string(options.t_out) + " in every split");
        }
        auto optimizer = make_optimizer(spec.train);
        r.fit = fit(*model, train, val, spec.train, optimizer.get(), options.on_epoch);
        r.val = evaluate(*model, val, spec.train.batch_size);
        r.test = evaluate(*model, test, spec.train.batch_size);
        previous[spec.label] = nets::capture(*model).parameters;
        if (options.output_dir) {
          const auto dir = *options.output_dir / spec.label / ("exp_" + std::to_string(window.experiment_id));
          std::filesystem::create_directories(dir);
          std::ofstream(dir / "loss.csv") << loss_csv(r.fit);
          nets::Checkpoint cp = nets::capture(*model);
          cp.optimizer_state = optimizer->state();
          cp.metadata = json{{"optimizer", to_string(spec.train.optimizer)},
                             {"optimizer_steps", optimizer->steps()},
                             {"train_seed", spec.train.seed},
                             {"init_seed", mc.init_seed},
                             {"experiment_id", window.experiment_id},
                             {"best_epoch", r.fit.best_epoch},
                             {"train_config", json::parse(to_json(spec.train))}}
                            .dump();
          r.checkpoint = dir / "model.fckpt";
          nets::write_checkpoint(r.checkpoint, cp);
        }
        r.ok = true;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
        spdlog::warn("experiment {} / {} failed: {}", window.experiment_id, spec.label, e.what());
      }
      r.seconds = seconds_since(start);
      if (r.ok) {
        table.val_mse.back()[j] = r.val.mse;
        table.test_mse.back()[j] = r.test.mse;
        table.test_physical_mae.back()[j] = r.test.physical_mae;
      }
      if (options.on_result) options.on_result(r);
      suite.results.push_back(std::move(r));
    }
  }
  return suite;
}

// ---- gradient check -----------------------------------------------------------------

GradientCheckResult gradient_check(const std::function<ag::Var()>& loss, ag::ParameterSet& params,
                                   const GradientCheckOptions& options) {
  params.zero_grad();
  ag::backward(loss());
  std::vector<Tensor> analytic;
  for (auto& p : params.items()) analytic.push_back(p.grad());

  GradientCheckResult result;
  ag::NoGradGuard no_grad;
  std::size_t k = 0;
  for (auto& p : params.items()) {
    Tensor& value = p.value();
    const std::size_t n = value.size();
    const std::size_t count = options.max_entries_per_tensor ? std::min(n, options.max_entries_per_tensor) : n;
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = count == n ? c : c * n / count;
      const double saved = value[i];
      value[i] = saved + options.step;
      const double plus = loss().value()[0];
      value[i] = saved - options.step;
      const double minus = loss().value()[0];
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.checked;
      if (err > result.max_relative_error || result.checked == 1) {
        result.max_relative_error = err;
        result.worst_parameter = p.name();
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
    ++k;
  }
  return result;
}

}  // namespace forecast::trainer
