#include "commands.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"
#include "forecast/flowfield.hpp"
#include "forecast/interpolate.hpp"
#include "forecast/nets/checkpoint.hpp"
#include "forecast/trainer.hpp"
#include "raster.hpp"
#include "run_config.hpp"

#ifndef FORECAST_REVISION
#define FORECAST_REVISION "unknown"
#endif

namespace forecast::cli {

namespace fs = std::filesystem;
namespace ds = datastore;
using json = nlohmann::json;

namespace {

const std::vector<Rgb> kSeriesColors{{33, 102, 172}, {214, 96, 77}, {27, 120, 55}, {118, 42, 131}};

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

void write_text(const fs::path& path, const std::string& text) { open_out(path) << text; }

// Every command records what it ran with.
void prepare_output(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "effective_config.json", to_json(cfg));
  write_text(cfg.output_dir / "REVISION", std::string(FORECAST_REVISION) + "\n");
  spdlog::info("{}: writing to {}", command, cfg.output_dir.string());
}

ds::GridSchema grid_schema(const RunConfig& cfg) {
  ds::GridSchema schema;
  schema.features = cfg.data.features;
  schema.target = cfg.data.target;
  schema.format = cfg.data.format;
  return schema;
}

bool has_grid(const RunConfig& cfg) { return !cfg.data.grid.empty() || cfg.data.synthetic.has_value(); }

std::shared_ptr<const ds::GridSeries> load_series(const RunConfig& cfg) {
  if (!cfg.data.grid.empty()) return std::make_shared<const ds::GridSeries>(ds::ingest_grid(cfg.data.grid, grid_schema(cfg)));
  if (cfg.data.synthetic) {
    auto series = std::make_shared<const ds::GridSeries>(ds::synth_advection(*cfg.data.synthetic));
    series->feature_index(cfg.data.target);
    return series;
  }
  throw ConfigError("config needs data.grid or data.synthetic");
}

std::vector<ds::ExperimentWindow> make_splits(const RunConfig& cfg, const ds::GridSeries& series) {
  std::vector<ds::ExperimentWindow> windows;
  if (cfg.splits.mode == "steps") {
    const std::size_t window = cfg.splits.window_steps ? cfg.splits.window_steps : series.steps();
    const std::size_t stride = cfg.splits.stride_steps ? cfg.splits.stride_steps : window;
    windows = ds::rolling_splits(series.steps(), window, stride, cfg.splits.fractions);
  } else {
    const auto end = series.time_at(series.steps());
    windows = ds::rolling_splits(series.start_time(), end, series.step(), cfg.splits.window_months,
                                 cfg.splits.stride_months, cfg.splits.fractions);
  }
  if (cfg.splits.max_experiments && windows.size() > cfg.splits.max_experiments) {
    windows.resize(cfg.splits.max_experiments);
  }
  return windows;
}

const ds::ExperimentWindow& find_experiment(const std::vector<ds::ExperimentWindow>& windows, std::size_t id) {
  for (const auto& w : windows)
    if (w.experiment_id == id) return w;
  throw ConfigError("experiment " + std::to_string(id) + " does not exist for this split configuration");
}

fs::path checkpoint_path(const RunConfig& cfg, const std::string& label, std::size_t experiment) {
  return cfg.run_dir / label / ("exp_" + std::to_string(experiment)) / "model.fckpt";
}

double hours(ds::Duration d) { return static_cast<double>(d.count()) / 3600.0; }

void plot_learning_curve(const trainer::FitResult& fit, const fs::path& path) {
  write_png(line_chart({fit.train_losses, fit.val_losses}, kSeriesColors), path);
}

// Reads `epoch,train_loss,val_loss` back.
trainer::FitResult read_loss_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  trainer::FitResult fit;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string epoch, train, val;
    std::getline(ss, epoch, ',');
    std::getline(ss, train, ',');
    std::getline(ss, val, ',');
    if (train.empty()) continue;
    fit.train_losses.push_back(std::stod(train));
    fit.val_losses.push_back(val.empty() ? NAN : std::stod(val));
  }
  return fit;
}

std::pair<double, double> min_max(std::span<const double> values) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

// Rows of panels [steps, rows, cols] share one color scale across the figure.
void heatmap_strip(const std::vector<const Tensor*>& rows_of_frames, std::size_t pixel_scale, const fs::path& path) {
  std::vector<Panel> panels;
  double lo = INFINITY, hi = -INFINITY;
  const std::size_t steps = rows_of_frames[0]->dim(0), m = rows_of_frames[0]->dim(1), n = rows_of_frames[0]->dim(2);
  for (const Tensor* t : rows_of_frames) {
    const auto [a, b] = min_max(t->data());
    lo = std::min(lo, a);
    hi = std::max(hi, b);
    for (std::size_t s = 0; s < steps; ++s) panels.push_back({std::span<const double>(t->raw() + s * m * n, m * n), m, n});
  }
  write_png(heatmap_grid(panels, rows_of_frames.size(), steps, lo, hi, pixel_scale), path);
}

// ---- commands ----------------------------------------------------------------

int cmd_ingest(const RunConfig& cfg, std::ostream& out) {
  if (!has_grid(cfg) && cfg.data.stations.empty()) throw ConfigError("ingest needs data.grid, data.synthetic or data.stations");
  if (has_grid(cfg)) {
    const auto series = load_series(cfg);
    ds::write_grid_binary(*series, cfg.output_dir / "grid.fcgrid");
    json features = json::array();
    for (const auto& f : series->features()) features.push_back({{"name", f.name}, {"units", f.units}});
    const json summary{{"steps", series->steps()},
                       {"rows", series->rows()},
                       {"cols", series->cols()},
                       {"features", features},
                       {"start", ds::format_iso8601(series->start_time())},
                       {"end", ds::format_iso8601(series->time_at(series->steps() - 1))},
                       {"step_hours", hours(series->step())}};
    write_text(cfg.output_dir / "ingest_summary.json", summary.dump(2) + "\n");
    out << "grid [" << series->steps() << ", " << series->feature_count() << ", " << series->rows() << ", "
        << series->cols() << "] -> " << (cfg.output_dir / "grid.fcgrid").string() << "\n";
  }
  if (!cfg.data.stations.empty()) {
    std::optional<ds::Duration> step;
    if (cfg.data.station_step_hours) step = ds::Duration{std::llround(*cfg.data.station_step_hours * 3600)};
    const auto st = ds::ingest_stations(cfg.data.stations, step);
    const json summary{{"steps", st.steps()},
                       {"features", st.feature_count()},
                       {"stations", st.station_count()},
                       {"missing_rows", st.gaps.missing_rows},
                       {"missing_values", st.gaps.missing_values},
                       {"step_hours", hours(st.step)}};
    write_text(cfg.output_dir / "stations_summary.json", summary.dump(2) + "\n");
    out << "stations [" << st.steps() << ", " << st.feature_count() << ", " << st.station_count() << "]\n";
  }
  return 0;
}

int cmd_interpolate(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data.stations.empty()) throw ConfigError("interpolate needs data.stations");
  if (cfg.data.grid_template.empty()) throw ConfigError("interpolate needs data.grid_template");
  ds::GridSchema schema;
  schema.target.clear();
  schema.format = cfg.data.format;
  const auto tmpl = ds::ingest_grid(cfg.data.grid_template, schema);
  std::optional<ds::Duration> step;
  if (cfg.data.station_step_hours) step = ds::Duration{std::llround(*cfg.data.station_step_hours * 3600)};
  const auto stations = ds::ingest_stations(cfg.data.stations, step);
  const auto result = interpolate::interpolate_series(stations, tmpl.geometry(), cfg.candidates);
  ds::write_grid_binary(result.grid, cfg.output_dir / "interpolated.fcgrid");
  auto csv = open_out(cfg.output_dir / "powers.csv");
  csv << "t,feature,power\n";
  for (std::size_t t = 0; t < result.powers.steps; ++t)
    for (std::size_t k = 0; k < result.powers.features; ++k)
      csv << t << ',' << stations.features[k].name << ',' << result.powers.at(t, k) << '\n';
  out << "interpolated " << stations.station_count() << " stations onto " << tmpl.rows() << "x" << tmpl.cols()
      << " cells for " << stations.steps() << " steps\n";
  return 0;
}

int cmd_flow(const RunConfig& cfg, std::ostream& out) {
  const auto series = load_series(cfg);
  const std::size_t k = series->feature_index(cfg.data.target);
  const std::size_t steps = std::min(series->steps(), std::max<std::size_t>(cfg.flow.max_frames, 2));
  if (steps < 2) throw DataError("flow needs at least 2 time steps");
  const std::size_t m = series->rows(), n = series->cols(), plane = m * n;
  Tensor frames({steps, m, n});
  for (std::size_t t = 0; t < steps; ++t) std::copy(series->plane(t, k), series->plane(t, k) + plane, frames.raw() + t * plane);
  const Tensor flows = flowfield::flow_sequence(frames);
  const std::size_t per = (m - 2) * (n - 2) * 2;
  const fs::path dir = cfg.output_dir / "flow";
  auto vectors = open_out(dir / "flow_vectors.csv");
  vectors << "t,row,col,vertical,horizontal\n";
  for (std::size_t t = 1; t < steps; ++t) {
    const double* f = flows.raw() + (t - 1) * per;
    for (std::size_t i = 0; i + 2 < m; ++i)
      for (std::size_t j = 0; j + 2 < n; ++j) {
        const std::size_t c = i * (n - 2) + j;
        vectors << t << ',' << i + 1 << ',' << j + 1 << ',' << f[2 * c] << ',' << f[2 * c + 1] << '\n';
      }
    if (cfg.plots.enabled) {
      char name[32];
      std::snprintf(name, sizeof name, "flow_t%03zu.png", t);
      write_png(quiver({std::span<const double>(frames.raw() + t * plane, plane), m, n},
                       std::span<const double>(f, per), cfg.plots.quiver_stride, cfg.plots.pixel_scale),
                dir / name);
    }
  }

  std::mt19937_64 rng(cfg.flow.seed);
  std::vector<double> signs(plane);
  for (double& s : signs) s = (rng() & 1) ? 1.0 : -1.0;
  const double scale = cfg.flow.scale;
  const std::vector<std::pair<std::string, flowfield::CellTransform>> transforms{
      {"identity", [](double v, std::size_t, std::size_t) { return v; }},
      {"positive_scale", [scale](double v, std::size_t, std::size_t) { return scale * v; }},
      {"sign_flip", [&](double v, std::size_t i, std::size_t j) { return signs[i * n + j] * v; }},
  };
  auto diag = open_out(dir / "diagnostics.csv");
  diag << "transform,mean_angle_degrees,mean_magnitude_ratio,vectors\n";
  for (const auto& [name, transform] : transforms) {
    const auto s = flowfield::perturbation_diagnostic(frames, transform);
    diag << name << ',' << s.mean_angle_degrees << ',' << s.mean_magnitude_ratio << ',' << s.vectors << '\n';
    out << name << ": mean angle " << s.mean_angle_degrees << " deg, magnitude ratio " << s.mean_magnitude_ratio
        << "\n";
  }
  return 0;
}

std::vector<trainer::ModelSpec> model_specs(const RunConfig& cfg) {
  std::vector<trainer::ModelSpec> specs;
  for (const auto& name : cfg.models) specs.push_back({name, cfg.model_configs.at(name), cfg.train});
  return specs;
}

json metrics_json(const trainer::Metrics& m) {
  return {{"mse", m.mse}, {"mae", m.mae}, {"physical_mse", m.physical_mse}, {"physical_mae", m.physical_mae},
          {"samples", m.samples}};
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto series = load_series(cfg);
  const auto windows = make_splits(cfg, *series);
  trainer::SuiteOptions options;
  options.target_feature = cfg.data.target;
  options.t_out = cfg.t_out;
  options.output_dir = cfg.output_dir;
  options.on_epoch = [](const trainer::EpochReport& r) {
    spdlog::info("epoch {}: train {:.6f} val {:.6f} ({:.1f} s)", r.epoch, r.train_loss, r.val_loss, r.seconds);
  };
  options.on_result = [](const trainer::ExperimentResult& r) {
    if (r.ok) {
      spdlog::info("experiment {} / {}: test mse {:.6f}, physical mae {:.4f}", r.experiment_id, r.model, r.test.mse,
                   r.test.physical_mae);
    }
  };
  const auto suite = trainer::run_experiments(series, windows, model_specs(cfg), options);

  json results = json::array();
  std::size_t failures = 0;
  for (const auto& r : suite.results) {
    json entry{{"experiment", r.experiment_id}, {"model", r.model}, {"ok", r.ok}, {"seconds", r.seconds}};
    if (r.ok) {
      entry["best_epoch"] = r.fit.best_epoch;
      entry["best_val_loss"] = r.fit.best_val_loss;
      entry["epochs"] = r.fit.train_losses.size();
      entry["stopped_early"] = r.fit.stopped_early;
      entry["val"] = metrics_json(r.val);
      entry["test"] = metrics_json(r.test);
      entry["checkpoint"] = r.checkpoint.string();
      if (cfg.plots.enabled) plot_learning_curve(r.fit, r.checkpoint.parent_path() / "learning_curve.png");
    } else {
      entry["error"] = r.error;
      ++failures;
    }
    results.push_back(entry);
  }
  write_text(cfg.output_dir / "results.json", results.dump(2) + "\n");
  write_text(cfg.output_dir / "summary.csv", suite.table.to_csv());
  write_text(cfg.output_dir / "summary.txt", suite.table.to_text());
  out << suite.table.to_text();
  if (failures == suite.results.size()) throw TrainingError("every experiment failed; see results.json");
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  const auto series = load_series(cfg);
  const auto windows = make_splits(cfg, *series);
  const std::size_t target = series->feature_index(cfg.data.target);
  trainer::SummaryTable table;
  table.models = cfg.models;
  json errors = json::array();
  for (const auto& w : windows) {
    table.experiments.push_back(w.experiment_id);
    table.val_mse.emplace_back(cfg.models.size(), NAN);
    table.test_mse.emplace_back(cfg.models.size(), NAN);
    table.test_physical_mae.emplace_back(cfg.models.size(), NAN);
    for (std::size_t j = 0; j < cfg.models.size(); ++j) {
      const fs::path path = checkpoint_path(cfg, cfg.models[j], w.experiment_id);
      try {
        if (!fs::exists(path)) throw DataError("missing checkpoint " + path.string());
        auto model = nets::load_model(path);
        const std::size_t t_out = model->config().t_out;
        const auto val = ds::make_windows_for_targets(series, model->input_steps(), t_out, target, w.val, w.span.begin);
        const auto test = ds::make_windows_for_targets(series, model->input_steps(), t_out, target, w.test, w.span.begin);
        if (val.empty() || test.empty()) throw WindowingError("split too short for this model");
        table.val_mse.back()[j] = trainer::evaluate(*model, val, cfg.train.batch_size).mse;
        const auto m = trainer::evaluate(*model, test, cfg.train.batch_size);
        table.test_mse.back()[j] = m.mse;
        table.test_physical_mae.back()[j] = m.physical_mae;
      } catch (const std::exception& e) {
        spdlog::warn("experiment {} / {}: {}", w.experiment_id, cfg.models[j], e.what());
        errors.push_back({{"experiment", w.experiment_id}, {"model", cfg.models[j]}, {"error", e.what()}});
      }
    }
  }
  write_text(cfg.output_dir / "evaluation.csv", table.to_csv());
  write_text(cfg.output_dir / "evaluation.txt", table.to_text());
  if (!errors.empty()) write_text(cfg.output_dir / "evaluation_errors.json", errors.dump(2) + "\n");
  out << table.to_text();
  if (errors.size() == windows.size() * cfg.models.size()) throw DataError("no checkpoint could be evaluated");
  return 0;
}

void write_prediction_csv(const trainer::Prediction& p, const fs::path& path) {
  auto csv = open_out(path);
  csv << "step,row,col,predicted,truth\n";
  const std::size_t steps = p.predictions.dim(1), m = p.predictions.dim(2), n = p.predictions.dim(3);
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = (s * m + i) * n + j;
        csv << s + 1 << ',' << i << ',' << j << ',' << p.predictions[idx] << ',' << p.truth[idx] << '\n';
      }
}

int cmd_predict(const RunConfig& cfg, std::ostream& out) {
  const auto series = load_series(cfg);
  const auto windows = make_splits(cfg, *series);
  const auto& w = find_experiment(windows, cfg.predict.experiment);
  const std::size_t target = series->feature_index(cfg.data.target);
  const ds::IndexRange range = cfg.predict.split == "train" ? w.train : cfg.predict.split == "val" ? w.val : w.test;
  const fs::path dir = cfg.output_dir / "predict";

  std::vector<Tensor> rows;  // truth first, then one per model
  std::vector<std::string> labels;
  for (const auto& label : cfg.models) {
    auto model = nets::load_model(checkpoint_path(cfg, label, w.experiment_id));
    const std::size_t t_out = model->kind() == nets::ModelKind::UNet ? model->config().t_out : cfg.t_out;
    const auto samples = ds::make_windows_for_targets(series, model->input_steps(), t_out, target, range, w.span.begin);
    if (cfg.predict.sample >= samples.size()) {
      throw DataError("predict.sample " + std::to_string(cfg.predict.sample) + " out of range; the " +
                      cfg.predict.split + " split has " + std::to_string(samples.size()) + " windows");
    }
    const auto& sample = samples[cfg.predict.sample];
    const auto batch = ds::assemble_batches({sample}, 1, 0).front();
    const auto p = trainer::predict(*model, batch, t_out);
    const fs::path mdir = dir / label;
    write_prediction_csv(p, mdir / "prediction.csv");
    auto frames = open_out(mdir / "frames.csv");
    frames << "step,valid_time,lead_hours\n";
    for (std::size_t s = 1; s <= t_out; ++s) {
      frames << s << ',' << ds::format_iso8601(series->time_at(sample.anchor + s)) << ','
             << hours(series->step()) * static_cast<double>(s) << '\n';
    }
    const std::size_t m = series->rows(), n = series->cols();
    Tensor pred = p.predictions.reshaped({t_out, m, n}), truth = p.truth.reshaped({t_out, m, n});
    if (cfg.plots.enabled) heatmap_strip({&truth, &pred}, cfg.plots.pixel_scale, mdir / "heatmap.png");
    if (p.attention) {
      const auto& a = *p.attention;  // [1, T_in, d, M, N]
      const std::size_t t_in = a.dim(1), d = a.dim(2), plane = m * n;
      auto csv = open_out(mdir / "attention.csv");
      csv << "input_step,feature,row,col,weight\n";
      for (std::size_t t = 0; t < t_in; ++t)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t c = 0; c < plane; ++c)
            csv << t + 1 << ',' << series->features()[k].name << ',' << c / n << ',' << c % n << ','
                << a[(t * d + k) * plane + c] << '\n';
      if (cfg.plots.enabled) {
        // rows are features, columns input steps
        std::vector<Panel> panels;
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t t = 0; t < t_in; ++t)
            panels.push_back({std::span<const double>(a.raw() + (t * d + k) * plane, plane), m, n});
        write_png(heatmap_grid(panels, d, t_in, 0.0, a.max_abs(), cfg.plots.pixel_scale), mdir / "attention.png");
      }
    }
    if (rows.empty()) rows.push_back(truth);
    if (pred.dim(0) == rows.front().dim(0)) {
      rows.push_back(std::move(pred));
      labels.push_back(label);
    }
    out << label << ": " << t_out << " frames from " << ds::format_iso8601(series->time_at(sample.anchor + 1))
        << " to " << ds::format_iso8601(series->time_at(sample.anchor + t_out)) << "\n";
  }
  if (cfg.plots.enabled && !rows.empty()) {
    std::vector<const Tensor*> ptrs;
    for (const auto& r : rows) ptrs.push_back(&r);
    heatmap_strip(ptrs, cfg.plots.pixel_scale, dir / "comparison.png");
    auto legend = open_out(dir / "comparison_rows.csv");
    legend << "row,label\n0,truth\n";
    for (std::size_t i = 0; i < labels.size(); ++i) legend << i + 1 << ',' << labels[i] << '\n';
  }
  return 0;
}

int cmd_eda(const RunConfig& cfg, std::ostream& out) {
  const auto series = load_series(cfg);
  const auto corr = ds::compute_correlation(*series);
  const std::size_t d = series->feature_count();
  auto csv = open_out(cfg.output_dir / "eda" / "correlation.csv");
  csv << "feature";
  for (const auto& f : series->features()) csv << ',' << f.name;
  csv << '\n';
  for (std::size_t a = 0; a < d; ++a) {
    csv << series->features()[a].name;
    for (std::size_t b = 0; b < d; ++b) csv << ',' << corr.matrix[a * d + b];
    csv << '\n';
  }
  if (cfg.plots.enabled) {
    write_png(heatmap_grid({{corr.matrix.data(), d, d}}, 1, 1, -1.0, 1.0, 32, true),
              cfg.output_dir / "eda" / "correlation.png");
  }
  write_text(cfg.output_dir / "eda" / "summary.json",
             json{{"zero_variance_entries", corr.zero_variance_entries}}.dump(2) + "\n");

  const std::string feature = cfg.eda.feature.empty() ? cfg.data.target : cfg.eda.feature;
  for (std::size_t lag : cfg.eda.lags) {
    const auto pairs = ds::shifted_trend(*series, cfg.eda.cell[0], cfg.eda.cell[1], feature, lag);
    const std::string stem = "lag_" + std::to_string(lag);
    auto lag_csv = open_out(cfg.output_dir / "eda" / (stem + ".csv"));
    lag_csv << "t,current,lagged\n";
    for (std::size_t i = 0; i < pairs.current.size(); ++i)
      lag_csv << i + lag << ',' << pairs.current[i] << ',' << pairs.lagged[i] << '\n';
    if (cfg.plots.enabled) {
      write_png(line_chart({pairs.current, pairs.lagged}, kSeriesColors), cfg.output_dir / "eda" / (stem + ".png"));
      write_png(scatter_chart(pairs.lagged, pairs.current), cfg.output_dir / "eda" / (stem + "_scatter.png"));
    }
    out << "lag " << lag << " (" << hours(series->step()) * static_cast<double>(lag) << " h): " << pairs.current.size()
        << " pairs\n";
  }
  out << "correlation over " << d << " features written\n";
  return 0;
}

// Re-renders figures from the CSVs of an existing run.
int cmd_plot(const RunConfig& cfg, std::ostream& out) {
  if (!fs::exists(cfg.run_dir)) throw DataError("run directory not found: " + cfg.run_dir.string());
  const fs::path dest = cfg.output_dir / "plots";
  std::size_t count = 0;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(cfg.run_dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    if (path.parent_path().string().starts_with(dest.string())) continue;
    const fs::path rel = fs::relative(path.parent_path(), cfg.run_dir);
    if (path.filename() == "loss.csv") {
      fs::create_directories(dest / rel);
      plot_learning_curve(read_loss_csv(path), dest / rel / "learning_curve.png");
      ++count;
    } else if (path.filename() == "prediction.csv") {
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      std::vector<std::array<double, 5>> rows;
      while (std::getline(in, line)) {
        std::array<double, 5> r{};
        std::stringstream ss(line);
        std::string field;
        for (double& v : r) {
          std::getline(ss, field, ',');
          v = std::stod(field);
        }
        rows.push_back(r);
      }
      if (rows.empty()) continue;
      std::size_t steps = 0, m = 0, n = 0;
      for (const auto& r : rows) {
        steps = std::max(steps, static_cast<std::size_t>(r[0]));
        m = std::max(m, static_cast<std::size_t>(r[1]) + 1);
        n = std::max(n, static_cast<std::size_t>(r[2]) + 1);
      }
      Tensor pred({steps, m, n}), truth({steps, m, n});
      for (const auto& r : rows) {
        const std::size_t idx = ((static_cast<std::size_t>(r[0]) - 1) * m + static_cast<std::size_t>(r[1])) * n +
                                static_cast<std::size_t>(r[2]);
        pred[idx] = r[3];
        truth[idx] = r[4];
      }
      fs::create_directories(dest / rel);
      heatmap_strip({&truth, &pred}, cfg.plots.pixel_scale, dest / rel / "heatmap.png");
      ++count;
    }
  }
  out << count << " figures written under " << dest.string() << "\n";
  return 0;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const CLI::Error*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  return 1;
}

std::string error_line(const std::exception& e) {
  const int code = exit_code_for(e);
  const char* kind = code == 2 ? "config" : code == 3 ? "data" : "runtime";
  std::string message = e.what();
  std::replace(message.begin(), message.end(), '\n', ' ');
  return json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatio-temporal weather forecasting: ingest, interpolate, train, evaluate, predict", "forecast"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides overrides;
  std::string out_dir, run_dir, model;
  std::uint64_t seed = 0;
  bool verbose = false, quiet = false;

  using Handler = int (*)(const RunConfig&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"ingest", "Read grid and/or station files and write the portable grid", cmd_ingest},
      {"interpolate", "Interpolate station observations onto a grid template", cmd_interpolate},
      {"flow", "Flow-field images and perturbation diagnostics", cmd_flow},
      {"train", "Run the rolling experiments for the configured models", cmd_train},
      {"evaluate", "Summary table from trained checkpoints", cmd_evaluate},
      {"predict", "Forecast one sample with every configured model", cmd_predict},
      {"eda", "Correlation matrix and lag trends", cmd_eda},
      {"plot", "Re-render figures from a run's CSV files", cmd_plot},
  };
  Handler selected = nullptr;
  std::string selected_name;
  for (const auto& [name, help, handler] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("-o,--out", out_dir, "Output directory");
    sub->add_option("--run", run_dir, "Trained run directory (evaluate, predict, plot)");
    sub->add_option("-s,--seed", seed, "Seed for initialization and batching");
    sub->add_option("-m,--model", model, "Single model to use instead of config.models");
    sub->add_flag("-v,--verbose", verbose, "Debug logging");
    sub->add_flag("-q,--quiet", quiet, "Warnings and errors only");
    sub->callback([&selected, &selected_name, h = handler, n = name] {
      selected = h;
      selected_name = n;
    });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line(e) << "\n";
    return 2;
  }

  spdlog::set_level(quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);
  try {
    for (const auto* sub : app.get_subcommands()) {
      if (sub->count("--out")) overrides.output_dir = fs::absolute(out_dir);
      if (sub->count("--run")) overrides.run_dir = fs::absolute(run_dir);
      if (sub->count("--seed")) overrides.seed = seed;
      if (sub->count("--model")) overrides.model = model;
    }
    const RunConfig cfg = load_run_config(config_path, overrides);
    prepare_output(cfg, selected_name);
    return selected(cfg, out);
  } catch (const std::exception& e) {
    err << error_line(e) << "\n";
    return exit_code_for(e);
  }
}

}  // namespace forecast::cli
