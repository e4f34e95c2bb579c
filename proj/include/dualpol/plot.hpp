#pragma once

#include <string>
#include <vector>

// Minimal static chart output: uncompressed 24-bit BMP bar charts with error
// whiskers and a built-in 5x7 pixel font.

namespace dualpol::plot {

struct Bar {
  std::string label;
  double value = 0;
  double err = 0;  // half-length of the error whisker, same units as value
};

void write_bmp(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);  // rows top-down, 3 bytes/pixel

// y_max <= 0 picks the axis limit from the data.
void bar_chart(const std::string& path, const std::string& title,
               const std::vector<Bar>& bars, double y_max = 0);

// Grouped variant: one group per label, series side by side within a group.
void grouped_bar_chart(const std::string& path, const std::string& title,
                       const std::vector<std::string>& series_names,
                       const std::vector<std::string>& group_labels,
                       const std::vector<std::vector<Bar>>& groups,  // [group][series]
                       double y_max = 0);

}  // namespace dualpol::plot
