#include "dualpol/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "dualpol/fsio.hpp"

namespace dualpol::plot {

namespace {

// 5x7 glyphs, one bit per pixel, rows top-down; covers what chart labels need.
struct Glyph {
  char c;
  uint8_t rows[7];
};

const Glyph kFont[] = {
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1e}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1b, 0x11}},
    {'X', {0x11, 0x0a, 0x04, 0x04, 0x04, 0x0a, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1e, 0x01, 0x01, 0x0e, 0x01, 0x01, 0x1e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
    {'%', {0x19, 0x1a, 0x02, 0x04, 0x08, 0x0b, 0x13}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {'@', {0x0e, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0e}},
    {' ', {0, 0, 0, 0, 0, 0, 0}},
};

const uint8_t* glyph(char c) {
  c = char(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.c == c) return g.rows;
  return kFont[sizeof(kFont) / sizeof(kFont[0]) - 1].rows;  // space
}

struct Canvas {
  int w, h;
  std::vector<uint8_t> px;  // top-down rows, rgb
  Canvas(int w_, int h_) : w(w_), h(h_), px(size_t(w_) * h_ * 3, 0xff) {}

  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    size_t i = (size_t(y) * w + x) * 3;
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }

  void rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, r, g, b);
  }

  void text(int x, int y, const std::string& s, uint8_t r = 0, uint8_t g = 0, uint8_t b = 0) {
    for (char c : s) {
      const uint8_t* rows = glyph(c);
      for (int ry = 0; ry < 7; ++ry)
        for (int rx = 0; rx < 5; ++rx)
          if (rows[ry] & (1 << (4 - rx))) set(x + rx, y + ry, r, g, b);
      x += 6;
    }
  }
};

const uint8_t kPalette[][3] = {
    {66, 133, 244}, {219, 68, 55}, {244, 180, 0}, {15, 157, 88}, {120, 80, 200}, {90, 90, 90}};

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

void render_chart(const std::string& path, const std::string& title,
                  const std::vector<std::string>& series_names,
                  const std::vector<std::string>& group_labels,
                  const std::vector<std::vector<Bar>>& groups, double y_max) {
  if (groups.empty()) throw std::invalid_argument("bar chart needs at least one bar");
  size_t n_series = groups[0].size();
  for (auto& g : groups)
    if (g.size() != n_series) throw std::invalid_argument("ragged bar chart groups");

  if (y_max <= 0) {
    for (auto& g : groups)
      for (auto& b : g) y_max = std::max(y_max, b.value + b.err);
    if (y_max <= 0) y_max = 1;
    y_max *= 1.1;
  }

  const int bar_w = 28, gap = 14, group_gap = 26;
  const int left = 46, top = 28, bottom = 34;
  int group_w = int(n_series) * bar_w + (int(n_series) - 1) * 4;
  int W = left + 16 + int(groups.size()) * (group_w + group_gap);
  int legend_h = series_names.size() > 1 ? 12 * int(series_names.size()) : 0;
  W = std::max(W, 8 + 6 * int(title.size()));
  int H = 220 + legend_h;
  (void)gap;
  Canvas cv(W, H);
  int plot_h = H - top - bottom - legend_h;
  int base_y = top + plot_h;

  cv.text(8, 8, title);
  // axis + horizontal guides at quarters
  cv.rect(left, top, left, base_y, 0, 0, 0);
  cv.rect(left, base_y, W - 8, base_y, 0, 0, 0);
  for (int q = 0; q <= 4; ++q) {
    double v = y_max * q / 4.0;
    int y = base_y - int(std::lround(plot_h * v / y_max));
    cv.rect(left - 3, y, left, y, 0, 0, 0);
    cv.text(4, y - 3, fmt(v));
  }

  int x = left + 16;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    int gx = x;
    for (size_t si = 0; si < groups[gi].size(); ++si) {
      const Bar& b = groups[gi][si];
      const uint8_t* col = kPalette[si % 6];
      double v = std::clamp(b.value, 0.0, y_max);
      int bh = int(std::lround(plot_h * v / y_max));
      cv.rect(gx, base_y - bh, gx + bar_w - 1, base_y - 1, col[0], col[1], col[2]);
      if (b.err > 0) {
        int ylo = base_y - int(std::lround(plot_h * std::clamp(b.value - b.err, 0.0, y_max) / y_max));
        int yhi = base_y - int(std::lround(plot_h * std::clamp(b.value + b.err, 0.0, y_max) / y_max));
        int cx = gx + bar_w / 2;
        cv.rect(cx, yhi, cx, ylo, 0, 0, 0);
        cv.rect(cx - 3, yhi, cx + 3, yhi, 0, 0, 0);
        cv.rect(cx - 3, ylo, cx + 3, ylo, 0, 0, 0);
      }
      cv.text(gx, base_y - bh - 10, fmt(b.value));
      gx += bar_w + 4;
    }
    const std::string& label = group_labels[gi];
    cv.text(x + (group_w - 6 * int(label.size())) / 2, base_y + 6, label);
    x += group_w + group_gap;
  }

  if (series_names.size() > 1) {
    int ly = base_y + 20;
    for (size_t si = 0; si < series_names.size(); ++si) {
      const uint8_t* col = kPalette[si % 6];
      cv.rect(left, ly + 1, left + 8, ly + 7, col[0], col[1], col[2]);
      cv.text(left + 12, ly, series_names[si]);
      ly += 12;
    }
  }
  write_bmp(path, cv.w, cv.h, cv.px);
}

}  // namespace

void write_bmp(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  if (int64_t(rgb.size()) != int64_t(width) * height * 3)
    throw std::invalid_argument("write_bmp: pixel buffer size mismatch");
  int row_bytes = (width * 3 + 3) & ~3;
  uint32_t data_size = uint32_t(row_bytes) * uint32_t(height);
  fsio::Writer w;
  w.u8('B');
  w.u8('M');
  w.u32(54 + data_size);
  w.u32(0);
  w.u32(54);
  w.u32(40);  // BITMAPINFOHEADER
  w.u32(uint32_t(width));
  w.u32(uint32_t(height));
  w.u16(1);
  w.u16(24);
  w.u32(0);
  w.u32(data_size);
  w.u32(2835);
  w.u32(2835);
  w.u32(0);
  w.u32(0);
  std::string pad(size_t(row_bytes - width * 3), '\0');
  for (int y = height - 1; y >= 0; --y) {  // BMP rows are bottom-up, BGR
    for (int x = 0; x < width; ++x) {
      size_t i = (size_t(y) * width + x) * 3;
      w.u8(rgb[i + 2]);
      w.u8(rgb[i + 1]);
      w.u8(rgb[i]);
    }
    w.buf.append(pad);
  }
  fsio::atomic_write(path, w.buf);
}

void bar_chart(const std::string& path, const std::string& title,
               const std::vector<Bar>& bars, double y_max) {
  std::vector<std::string> labels;
  std::vector<std::vector<Bar>> groups;
  for (const auto& b : bars) {
    labels.push_back(b.label);
    groups.push_back({b});
  }
  render_chart(path, title, {""}, labels, groups, y_max);
}

void grouped_bar_chart(const std::string& path, const std::string& title,
                       const std::vector<std::string>& series_names,
                       const std::vector<std::string>& group_labels,
                       const std::vector<std::vector<Bar>>& groups, double y_max) {
  if (group_labels.size() != groups.size())
    throw std::invalid_argument("group label count mismatch");
  render_chart(path, title, series_names, group_labels, groups, y_max);
}

}  // namespace dualpol::plot
