#include <chrono>
#include <cmath>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"

namespace forecast::datastore {

namespace {

std::size_t floor_fraction(double fraction, std::size_t n) {
  if (fraction < 0.0) throw SplitError("split fractions must be non-negative");
  // tolerance absorbs representation error in fractions like 0.1
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

TimePoint add_months(TimePoint t, int months) {
  using namespace std::chrono;
  const sys_days day = floor<days>(t);
  const auto time_of_day = t - day;
  year_month_day ymd{day};
  ymd += std::chrono::months(months);
  if (!ymd.ok()) ymd = ymd.year() / ymd.month() / last;
  return TimePoint{sys_days{ymd} + time_of_day};
}

}  // namespace

ExperimentWindow split_window(std::size_t experiment_id, std::size_t begin, std::size_t length,
                              const SplitFractions& fractions) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) throw SplitError("split fractions must sum to 1");
  const std::size_t val = floor_fraction(fractions.val, length);
  const std::size_t test = floor_fraction(fractions.test, length);
  if (val + test > length) throw SplitError("window too short for requested fractions");
  const std::size_t train = length - val - test;
  ExperimentWindow w;
  w.experiment_id = experiment_id;
  w.span = {begin, begin + length};
  w.train = {begin, begin + train};
  w.val = {w.train.end, w.train.end + val};
  w.test = {w.val.end, w.val.end + test};
  return w;
}

std::vector<ExperimentWindow> rolling_splits(std::size_t total_steps, std::size_t window_steps,
                                             std::size_t stride_steps, const SplitFractions& fractions) {
  if (window_steps == 0 || stride_steps == 0) throw SplitError("window and stride must be positive");
  if (total_steps < window_steps) {
    throw SplitError("span of " + std::to_string(total_steps) + " steps is shorter than the window of " +
                     std::to_string(window_steps));
  }
  std::vector<ExperimentWindow> out;
  for (std::size_t start = 0, id = 0; start + window_steps <= total_steps; start += stride_steps, ++id) {
    out.push_back(split_window(id, start, window_steps, fractions));
  }
  return out;
}

std::vector<ExperimentWindow> rolling_splits(TimePoint span_start, TimePoint span_end, Duration step,
                                             int window_months, int stride_months, const SplitFractions& fractions) {
  if (step.count() <= 0) throw SplitError("time step must be positive");
  if (window_months <= 0 || stride_months <= 0) throw SplitError("window and stride must be positive");
  if (add_months(span_start, window_months) > span_end) throw SplitError("span is shorter than the window");
  std::vector<ExperimentWindow> out;
  for (std::size_t id = 0;; ++id) {
    const TimePoint start = add_months(span_start, static_cast<int>(id) * stride_months);
    const TimePoint end = add_months(start, window_months);
    if (end > span_end) break;
    const auto begin_index = static_cast<std::size_t>((start - span_start) / step);
    const auto end_index = static_cast<std::size_t>((end - span_start) / step);
    ExperimentWindow w = split_window(id, begin_index, end_index - begin_index, fractions);
    w.start_time = start;
    out.push_back(w);
  }
  return out;
}

}  // namespace forecast::datastore
