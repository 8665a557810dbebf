#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "forecast/errors.hpp"

namespace forecast::cli {

using json = nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects whatever is left unread.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError("unknown config key '" + where_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base_dir) {
  if (p.empty() || p.is_absolute()) return p;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) return std::filesystem::path(root) / p;
  return base_dir / p;
}

datastore::SynthConfig parse_synthetic(const json& j) {
  datastore::SynthConfig s;
  Section sec(j, "data.synthetic");
  sec.read("rows", s.rows);
  sec.read("cols", s.cols);
  sec.read("steps", s.steps);
  sec.read("features", s.features);
  sec.read("seed", s.seed);
  sec.read("blobs", s.blobs);
  sec.read("speed", s.speed);
  sec.read("turn_rate", s.turn_rate);
  sec.read("sigma", s.sigma);
  sec.read("noise", s.noise);
  double hours = static_cast<double>(s.step.count()) / 3600.0;
  sec.read("step_hours", hours);
  if (!(hours > 0)) throw ConfigError("data.synthetic.step_hours must be positive");
  s.step = datastore::Duration{static_cast<std::int64_t>(hours * 3600.0)};
  if (sec.has("start")) {
    std::string start;
    sec.read("start", start);
    try {
      s.start = datastore::parse_iso8601(start);
    } catch (const DataError& e) {
      throw ConfigError(std::string("data.synthetic.start: ") + e.what());
    }
  }
  sec.finish();
  return s;
}

json synthetic_json(const datastore::SynthConfig& s) {
  return {{"rows", s.rows},         {"cols", s.cols},     {"steps", s.steps},
          {"features", s.features}, {"seed", s.seed},     {"blobs", s.blobs},
          {"speed", s.speed},       {"turn_rate", s.turn_rate}, {"sigma", s.sigma},
          {"noise", s.noise},       {"step_hours", static_cast<double>(s.step.count()) / 3600.0},
          {"start", datastore::format_iso8601(s.start)}};
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const Overrides& overrides) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "config");

  if (top.has("data")) {
    Section d(top.raw("data"), "data");
    std::string grid, stations, tmpl;
    d.read("grid", grid);
    d.read("stations", stations);
    d.read("grid_template", tmpl);
    c.data.grid = resolve(grid, base_dir);
    c.data.stations = resolve(stations, base_dir);
    c.data.grid_template = resolve(tmpl, base_dir);
    d.read("format", c.data.format);
    d.read("features", c.data.features);
    d.read("target", c.data.target);
    if (d.has("station_step_hours")) {
      double h = 0;
      d.read("station_step_hours", h);
      c.data.station_step_hours = h;
    }
    if (d.has("synthetic")) c.data.synthetic = parse_synthetic(d.raw("synthetic"));
    d.finish();
  }

  top.read("models", c.models);
  if (overrides.model) c.models = {*overrides.model};
  if (c.models.empty()) throw ConfigError("config.models is empty");

  top.read("seed", c.seed);
  if (overrides.seed) c.seed = *overrides.seed;
  const bool seed_given = root.contains("seed") || overrides.seed.has_value();

  if (top.has("train")) c.train = trainer::train_config_from_json(top.raw("train").dump(), c.train);
  if (seed_given && (overrides.seed || !(root.contains("train") && root["train"].contains("seed")))) {
    c.train.seed = c.seed;
  }
  trainer::validate(c.train);

  top.read("t_out", c.t_out);
  if (c.t_out < 1) throw ConfigError("config.t_out must be >= 1");

  json model_json = json::object();
  if (top.has("model_overrides")) {
    model_json = top.raw("model_overrides");
    if (!model_json.is_object()) throw ConfigError("config.model_overrides must be an object");
  }
  for (const auto& [name, value] : model_json.items()) {
    if (std::find(c.models.begin(), c.models.end(), name) == c.models.end() && !overrides.model) {
      throw ConfigError("model_overrides names '" + name + "', which is not in config.models");
    }
  }
  for (const auto& name : c.models) {
    const nets::ModelKind kind = nets::parse_model_kind(name);
    nets::ModelConfig mc = nets::default_model_config(kind);
    const bool has_override = model_json.contains(name);
    if (has_override) mc = nets::model_config_from_json(model_json[name].dump(), mc);
    mc.kind = kind;
    if (seed_given && (overrides.seed || !(has_override && model_json[name].contains("init_seed")))) {
      mc.init_seed = c.seed;
    }
    mc.t_out = c.t_out;
    c.model_configs[name] = mc;
  }

  if (top.has("splits")) {
    Section s(top.raw("splits"), "splits");
    s.read("mode", c.splits.mode);
    s.read("window_months", c.splits.window_months);
    s.read("stride_months", c.splits.stride_months);
    s.read("window_steps", c.splits.window_steps);
    s.read("stride_steps", c.splits.stride_steps);
    s.read("max_experiments", c.splits.max_experiments);
    if (s.has("fractions")) {
      std::vector<double> f;
      s.read("fractions", f);
      if (f.size() != 3) throw ConfigError("splits.fractions must hold [train, val, test]");
      c.splits.fractions = {f[0], f[1], f[2]};
    }
    s.finish();
  }
  if (c.splits.mode != "calendar" && c.splits.mode != "steps") {
    throw ConfigError("splits.mode must be 'calendar' or 'steps'");
  }

  if (top.has("plots")) {
    Section p(top.raw("plots"), "plots");
    p.read("enabled", c.plots.enabled);
    p.read("pixel_scale", c.plots.pixel_scale);
    p.read("quiver_stride", c.plots.quiver_stride);
    p.finish();
  }
  if (c.plots.pixel_scale < 1 || c.plots.quiver_stride < 1) {
    throw ConfigError("plots.pixel_scale and plots.quiver_stride must be >= 1");
  }
  if (top.has("flow")) {
    Section f(top.raw("flow"), "flow");
    f.read("max_frames", c.flow.max_frames);
    f.read("scale", c.flow.scale);
    f.read("seed", c.flow.seed);
    f.finish();
  }
  if (top.has("eda")) {
    Section e(top.raw("eda"), "eda");
    e.read("cell", c.eda.cell);
    e.read("lags", c.eda.lags);
    e.read("feature", c.eda.feature);
    e.finish();
  }
  if (top.has("predict")) {
    Section p(top.raw("predict"), "predict");
    p.read("experiment", c.predict.experiment);
    p.read("split", c.predict.split);
    p.read("sample", c.predict.sample);
    p.finish();
  }
  if (c.predict.split != "train" && c.predict.split != "val" && c.predict.split != "test") {
    throw ConfigError("predict.split must be train, val or test");
  }
  top.read("candidates", c.candidates);
  if (c.candidates.empty()) throw ConfigError("config.candidates is empty");
  for (double p : c.candidates)
    if (!(p > 0)) throw ConfigError("interpolation candidate powers must be positive");

  std::string out, run;
  top.read("output_dir", out);
  top.read("run_dir", run);
  if (!out.empty()) c.output_dir = out;
  if (!run.empty()) c.run_dir = run;
  if (overrides.output_dir) c.output_dir = *overrides.output_dir;
  if (overrides.run_dir) c.run_dir = *overrides.run_dir;
  if (c.output_dir.is_relative() && !overrides.output_dir) c.output_dir = base_dir / c.output_dir;
  if (!c.run_dir.empty() && c.run_dir.is_relative() && !overrides.run_dir) c.run_dir = base_dir / c.run_dir;
  if (c.run_dir.empty()) c.run_dir = c.output_dir;
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), std::filesystem::absolute(path).parent_path(), overrides);
}

std::string to_json(const RunConfig& c) {
  json data{{"grid", c.data.grid.string()},
            {"stations", c.data.stations.string()},
            {"grid_template", c.data.grid_template.string()},
            {"format", c.data.format},
            {"features", c.data.features},
            {"target", c.data.target}};
  if (c.data.station_step_hours) data["station_step_hours"] = *c.data.station_step_hours;
  if (c.data.synthetic) data["synthetic"] = synthetic_json(*c.data.synthetic);
  json models = json::object();
  for (const auto& [name, mc] : c.model_configs) models[name] = json::parse(nets::to_json(mc));
  json root{
      {"data", data},
      {"models", c.models},
      {"model_overrides", models},
      {"train", json::parse(trainer::to_json(c.train))},
      {"t_out", c.t_out},
      {"splits",
       {{"mode", c.splits.mode},
        {"window_months", c.splits.window_months},
        {"stride_months", c.splits.stride_months},
        {"window_steps", c.splits.window_steps},
        {"stride_steps", c.splits.stride_steps},
        {"fractions", {c.splits.fractions.train, c.splits.fractions.val, c.splits.fractions.test}},
        {"max_experiments", c.splits.max_experiments}}},
      {"plots",
       {{"enabled", c.plots.enabled}, {"pixel_scale", c.plots.pixel_scale}, {"quiver_stride", c.plots.quiver_stride}}},
      {"flow", {{"max_frames", c.flow.max_frames}, {"scale", c.flow.scale}, {"seed", c.flow.seed}}},
      {"eda", {{"cell", c.eda.cell}, {"lags", c.eda.lags}, {"feature", c.eda.feature}}},
      {"predict", {{"experiment", c.predict.experiment}, {"split", c.predict.split}, {"sample", c.predict.sample}}},
      {"candidates", c.candidates},
      {"output_dir", c.output_dir.string()},
      {"run_dir", c.run_dir.string()},
      {"seed", c.seed},
  };
  return root.dump(2) + "\n";
}

}  // namespace forecast::cli
