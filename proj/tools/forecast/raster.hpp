#pragma once

// Minimal RGB rasters for diagnostic figures: heatmap panels, line charts and
// quiver plots, written as PNG. Every figure is accompanied by a CSV of the
// plotted numbers, so nothing here needs axis labels or text.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace forecast::cli {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{200, 200, 200};

class Image {
 public:
  Image(std::size_t width, std::size_t height, Rgb background = kWhite);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  void set(long x, long y, Rgb c);  // ignores out-of-bounds pixels
  Rgb get(std::size_t x, std::size_t y) const;
  void fill_rect(long x, long y, std::size_t w, std::size_t h, Rgb c);
  void line(double x0, double y0, double x1, double y1, Rgb c);
  const std::vector<std::uint8_t>& pixels() const { return rgb_; }

 private:
  std::size_t width_, height_;
  std::vector<std::uint8_t> rgb_;
};

/// Perceptually ordered blue-green-yellow map for t in [0, 1].
Rgb sequential_color(double t);
/// Blue-white-red map for t in [-1, 1].
Rgb diverging_color(double t);

/// One heatmap panel: a row-major [rows, cols] field.
struct Panel {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Panels laid out on a grid of `layout_rows` x `layout_cols`, all on the
/// shared color scale [lo, hi].
Image heatmap_grid(const std::vector<Panel>& panels, std::size_t layout_rows, std::size_t layout_cols, double lo,
                   double hi, std::size_t pixel_scale, bool diverging = false);

/// Line chart of several series over a common x index, auto-scaled to the data.
Image line_chart(const std::vector<std::vector<double>>& series, const std::vector<Rgb>& colors,
                 std::size_t width = 480, std::size_t height = 320);

/// Scatter of (x, y) pairs with the identity line for reference.
Image scatter_chart(std::span<const double> x, std::span<const double> y, std::size_t size = 360);

/// Heatmap of the field with an arrow per `stride`-th interior cell.
/// `flow` is [rows-2, cols-2, 2] with channel 0 vertical, 1 horizontal.
Image quiver(const Panel& field, std::span<const double> flow, std::size_t stride, std::size_t pixel_scale);

void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace forecast::cli
