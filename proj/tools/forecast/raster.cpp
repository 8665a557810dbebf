#include "raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "forecast/errors.hpp"

namespace forecast::cli {

namespace {

Rgb lerp(Rgb a, Rgb b, double t) {
  Rgb out;
  for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::lround(a[i] + (b[i] - a[i]) * t));
  return out;
}

Rgb ramp(const std::vector<Rgb>& stops, double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  return lerp(stops[i], stops[i + 1], t - static_cast<double>(i));
}

std::pair<double, double> data_range(const std::vector<std::vector<double>>& series) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series)
    for (double v : s)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (hi == lo) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

Image::Image(std::size_t width, std::size_t height, Rgb background)
    : width_(width), height_(height), rgb_(width * height * 3) {
  for (std::size_t i = 0; i < width * height; ++i) std::copy(background.begin(), background.end(), &rgb_[i * 3]);
}

void Image::set(long x, long y, Rgb c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(width_) || y >= static_cast<long>(height_)) return;
  std::copy(c.begin(), c.end(), &rgb_[(static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x)) * 3]);
}

Rgb Image::get(std::size_t x, std::size_t y) const {
  const std::uint8_t* p = &rgb_[(y * width_ + x) * 3];
  return {p[0], p[1], p[2]};
}

void Image::fill_rect(long x, long y, std::size_t w, std::size_t h, Rgb c) {
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t i = 0; i < w; ++i) set(x + static_cast<long>(i), y + static_cast<long>(j), c);
}

void Image::line(double x0, double y0, double x1, double y1, Rgb c) {
  const double steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1.0});
  for (int i = 0; i <= static_cast<int>(std::ceil(steps)); ++i) {
    const double t = i / std::ceil(steps);
    set(std::lround(x0 + (x1 - x0) * t), std::lround(y0 + (y1 - y0) * t), c);
  }
}

Rgb sequential_color(double t) {
  static const std::vector<Rgb> stops{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  return ramp(stops, t);
}

Rgb diverging_color(double t) {
  static const std::vector<Rgb> stops{{33, 102, 172}, {247, 247, 247}, {178, 24, 43}};
  return ramp(stops, (t + 1.0) / 2.0);
}

Image heatmap_grid(const std::vector<Panel>& panels, std::size_t layout_rows, std::size_t layout_cols, double lo,
                   double hi, std::size_t pixel_scale, bool diverging) {
  if (panels.empty()) throw DomainError("heatmap needs at least one panel");
  const std::size_t rows = panels[0].rows, cols = panels[0].cols, gap = std::max<std::size_t>(2, pixel_scale / 2);
  const std::size_t pw = cols * pixel_scale, ph = rows * pixel_scale;
  Image img(layout_cols * pw + (layout_cols + 1) * gap, layout_rows * ph + (layout_rows + 1) * gap);
  const double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t p = 0; p < panels.size() && p < layout_rows * layout_cols; ++p) {
    const auto& panel = panels[p];
    const long ox = static_cast<long>(gap + (p % layout_cols) * (pw + gap));
    const long oy = static_cast<long>(gap + (p / layout_cols) * (ph + gap));
    for (std::size_t i = 0; i < panel.rows; ++i)
      for (std::size_t j = 0; j < panel.cols; ++j) {
        const double v = panel.values[i * panel.cols + j];
        const Rgb c = diverging ? diverging_color(v) : sequential_color((v - lo) / range);
        img.fill_rect(ox + static_cast<long>(j * pixel_scale), oy + static_cast<long>(i * pixel_scale), pixel_scale,
                      pixel_scale, c);
      }
  }
  return img;
}

Image line_chart(const std::vector<std::vector<double>>& series, const std::vector<Rgb>& colors, std::size_t width,
                 std::size_t height) {
  Image img(width, height);
  const double margin = 20;
  const double w = static_cast<double>(width) - 2 * margin, h = static_cast<double>(height) - 2 * margin;
  img.line(margin, margin, margin, margin + h, kBlack);
  img.line(margin, margin + h, margin + w, margin + h, kBlack);
  const auto [lo, hi] = data_range(series);
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.size());
  const double dx = n > 1 ? w / static_cast<double>(n - 1) : 0.0;
  auto y_of = [&](double v) { return margin + h - (v - lo) / (hi - lo) * h; };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Rgb c = colors.empty() ? kBlack : colors[k % colors.size()];
    const auto& s = series[k];
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double x = margin + dx * static_cast<double>(i);
      if (!std::isfinite(s[i])) continue;
      img.fill_rect(std::lround(x) - 1, std::lround(y_of(s[i])) - 1, 3, 3, c);
      if (i > 0 && std::isfinite(s[i - 1])) img.line(x - dx, y_of(s[i - 1]), x, y_of(s[i]), c);
    }
  }
  return img;
}

Image scatter_chart(std::span<const double> x, std::span<const double> y, std::size_t size) {
  Image img(size, size);
  const double margin = 20, w = static_cast<double>(size) - 2 * margin;
  const auto [lo, hi] = data_range({std::vector<double>(x.begin(), x.end()), std::vector<double>(y.begin(), y.end())});
  auto px = [&](double v) { return margin + (v - lo) / (hi - lo) * w; };
  auto py = [&](double v) { return margin + w - (v - lo) / (hi - lo) * w; };
  img.line(margin, margin + w, margin + w, margin, kGrey);
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i)
    img.fill_rect(std::lround(px(x[i])) - 1, std::lround(py(y[i])) - 1, 3, 3, {33, 102, 172});
  return img;
}

Image quiver(const Panel& field, std::span<const double> flow, std::size_t stride, std::size_t pixel_scale) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : field.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image img = heatmap_grid({field}, 1, 1, lo, hi, pixel_scale);
  const long gap = static_cast<long>(std::max<std::size_t>(2, pixel_scale / 2));
  const std::size_t rows = field.rows - 2, cols = field.cols - 2;
  double longest = 0.0;
  for (std::size_t c = 0; c < rows * cols; ++c) longest = std::max(longest, std::hypot(flow[2 * c], flow[2 * c + 1]));
  if (longest == 0.0) return img;
  const double reach = 0.9 * static_cast<double>(pixel_scale * stride);
  for (std::size_t k = 0; k < rows; k += stride)
    for (std::size_t l = 0; l < cols; l += stride) {
      const double vy = flow[2 * (k * cols + l)], vx = flow[2 * (k * cols + l) + 1];
      const double len = std::hypot(vx, vy) / longest * reach;
      if (len < 1.0) continue;
      const double cx = static_cast<double>(gap) + (static_cast<double>(l) + 1.5) * static_cast<double>(pixel_scale);
      const double cy = static_cast<double>(gap) + (static_cast<double>(k) + 1.5) * static_cast<double>(pixel_scale);
      const double ux = vx / std::hypot(vx, vy), uy = vy / std::hypot(vx, vy);
      const double ex = cx + ux * len, ey = cy + uy * len;
      img.line(cx, cy, ex, ey, kWhite);
      const double head = std::max(2.0, len * 0.3);
      img.line(ex, ey, ex - head * (ux * 0.87 - uy * 0.5), ey - head * (uy * 0.87 + ux * 0.5), kWhite);
      img.line(ex, ey, ex - head * (ux * 0.87 + uy * 0.5), ey - head * (uy * 0.87 - ux * 0.5), kWhite);
    }
  return img;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels().data() + y * image.width() * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace forecast::cli
