#pragma once

// Dependency-free raster plots written as binary PPM.

#include "setcomm/agents.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace setcomm::plot {

using Color = std::array<std::uint8_t, 3>;

class Canvas {
 public:
  Canvas(int width, int height, Color background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Color c);
  Color get(int x, int y) const;
  void line(double x0, double y0, double x1, double y1, Color c);
  void dot(double x, double y, int radius, Color c);
  void save_ppm(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<std::uint8_t> rgb_;
};

// Distinct, stable color per token; EOS-less positions stay blank.
Color token_color(int token);

// One prefix-tree node: `count` messages start with prefix + [token].
struct PrefixRow {
  std::vector<int> prefix;
  int token = 0;
  std::size_t count = 0;
};

// Rows ordered by depth, then prefix, then token.
std::vector<PrefixRow> prefix_tree(std::span<const agents::Message> messages);

// Concentric rings, innermost = first token; wedge angle proportional to
// count within the parent wedge.
Canvas sunburst(std::span<const agents::Message> messages, int size = 256);

struct Series {
  std::vector<double> x, y;
  Color color{0, 0, 0};
};

Canvas line_plot(std::span<const Series> series, int width = 320, int height = 240);
Canvas scatter_plot(std::span<const double> x, std::span<const double> y, int width = 320, int height = 240);

}  // namespace setcomm::plot
