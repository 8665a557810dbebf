#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "forecast/errors.hpp"
#include "forecast/nets/checkpoint.hpp"
#include "helpers.hpp"

namespace ag = forecast::ag;
using namespace forecast::nets;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "forecast_ckpt_tests";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig tiny() {
  ModelConfig c = default_model_config(ModelKind::WeatherModel);
  c.features = 2;
  c.t_in = 2;
  c.t_out = 2;
  c.encoder_hidden = {2};
  c.decoder_hidden = {2};
  c.encoder_kernels = {3};
  c.decoder_kernels = {3};
  c.attention_q = 2;
  c.init_seed = 9;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresIdenticalForward) {
  auto model = make_model(tiny());
  auto cp = capture(*model);
  cp.optimizer_state = {{"encoder.0.wx.m", forecast::Tensor({2, 2}, 0.5)}};
  cp.metadata = R"({"epoch": 3})";
  const auto path = temp_path("wm.fckpt");
  write_checkpoint(path, cp);

  const auto back = read_checkpoint(path);
  EXPECT_EQ(back.parameters.size(), cp.parameters.size());
  EXPECT_EQ(back.optimizer_state[0].first, "encoder.0.wx.m");
  EXPECT_NE(back.metadata.find("\"epoch\""), std::string::npos);
  EXPECT_EQ(back.model.encoder_hidden, tiny().encoder_hidden);

  auto loaded = load_model(path);
  std::mt19937_64 rng(1);
  const auto x = ag::constant(testing_support::random_tensor({1, 2, 2, 4, 4}, rng));
  // parameters are stored as float32, so reload the source model from the file too
  load_parameters(*model, back.parameters);
  EXPECT_EQ(model->forward(x, 0).predictions.value(), loaded->forward(x, 0).predictions.value());
}

TEST(Checkpoint, ShapeMismatchAndMissingNames) {
  auto model = make_model(tiny());
  auto cp = capture(*model);
  cp.parameters[0].second = forecast::Tensor({1});
  EXPECT_THROW(load_parameters(*model, cp.parameters), forecast::DataError);
  cp = capture(*model);
  cp.parameters.pop_back();
  EXPECT_THROW(load_parameters(*model, cp.parameters), forecast::DataError);
}

TEST(Checkpoint, CorruptFileIsDataError) {
  const auto path = temp_path("bad.fckpt");
  std::ofstream(path) << "FCKPT001garbage";
  EXPECT_THROW(read_checkpoint(path), forecast::DataError);
  EXPECT_THROW(read_checkpoint(temp_path("absent.fckpt")), forecast::DataError);
}
