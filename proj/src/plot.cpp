#include "setcomm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

namespace setcomm::plot {

Canvas::Canvas(int width, int height, Color background) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("Canvas: empty size");
  rgb_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) std::copy(background.begin(), background.end(), rgb_.begin() + i);
}

void Canvas::set(int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  std::copy(c.begin(), c.end(), rgb_.begin() + (static_cast<std::size_t>(y) * width_ + x) * 3);
}

Color Canvas::get(int x, int y) const {
  const auto* p = rgb_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {p[0], p[1], p[2]};
}

void Canvas::line(double x0, double y0, double x1, double y1, Color c) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

void Canvas::dot(double x, double y, int radius, Color c) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) set(static_cast<int>(std::lround(x)) + dx, static_cast<int>(std::lround(y)) + dy, c);
}

void Canvas::save_ppm(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << width_ << ' ' << height_ << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb_.data()), static_cast<std::streamsize>(rgb_.size()));
}

Color token_color(int token) {
  static const Color palette[] = {{230, 25, 75},   {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                  {245, 130, 48},  {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
                                  {210, 245, 60},  {250, 190, 212}, {0, 128, 128}, {220, 190, 255},
                                  {170, 110, 40},  {128, 0, 0},    {170, 255, 195}, {128, 128, 0},
                                  {255, 215, 180}, {0, 0, 128},    {128, 128, 128}, {40, 40, 40}};
  constexpr int n = sizeof(palette) / sizeof(palette[0]);
  if (token < n) return palette[token];
  const auto h = static_cast<std::uint32_t>(token) * 2654435761u;
  return {static_cast<std::uint8_t>(64 + (h & 127)), static_cast<std::uint8_t>(64 + ((h >> 8) & 127)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 127))};
}

std::vector<PrefixRow> prefix_tree(std::span<const agents::Message> messages) {
  std::map<std::pair<std::size_t, std::vector<int>>, std::size_t> counts;  // (depth, prefix+token)
  for (const auto& m : messages) {
    for (std::size_t d = 0; d < m.size(); ++d) {
      ++counts[{d, std::vector<int>(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(d + 1))}];
    }
  }
  std::vector<PrefixRow> rows;
  for (const auto& [key, n] : counts) {
    PrefixRow r;
    r.prefix.assign(key.second.begin(), key.second.end() - 1);
    r.token = key.second.back();
    r.count = n;
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

struct Node {
  std::map<int, Node> children;
  std::size_t count = 0;
};

// Colour of the wedge at (depth, angle in [0, 1)), or nothing.
const Node* locate(const Node& root, std::size_t depth, double angle, int& token) {
  const Node* node = &root;
  double lo = 0, span = 1;
  for (std::size_t d = 0; d <= depth; ++d) {
    const Node* next = nullptr;
    double start = lo;
    for (const auto& [tok, child] : node->children) {
      const double w = span * static_cast<double>(child.count) / static_cast<double>(node->count);
      if (angle < start + w) {
        next = &child;
        token = tok;
        lo = start;
        span = w;
        break;
      }
      start += w;
    }
    if (!next) return nullptr;
    node = next;
  }
  return node;
}

}  // namespace

Canvas sunburst(std::span<const agents::Message> messages, int size) {
  Canvas canvas(size, size);
  Node root;
  std::size_t depth = 0;
  for (const auto& m : messages) {
    ++root.count;
    Node* n = &root;
    for (int tok : m) {
      n = &n->children[tok];
      ++n->count;
    }
    depth = std::max(depth, m.size());
  }
  if (root.count == 0 || depth == 0) return canvas;
  const double c = size / 2.0;
  const double inner = size * 0.08;
  const double ring = (size / 2.0 - inner - 2) / static_cast<double>(depth);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - c, dy = y + 0.5 - c;
      const double r = std::hypot(dx, dy);
      if (r < inner) continue;
      const auto d = static_cast<std::size_t>((r - inner) / ring);
      if (d >= depth) continue;
      double a = std::atan2(dx, -dy) / (2 * std::numbers::pi);
      if (a < 0) a += 1;
      int token = 0;
      if (locate(root, d, a, token)) canvas.set(x, y, token_color(token));
    }
  }
  return canvas;
}

namespace {

struct Frame {
  double xmin, xmax, ymin, ymax;
  int width, height, margin = 24;
  double px(double x) const { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); }
};

Frame make_frame(std::span<const double> xs, std::span<const double> ys, int w, int h) {
  Frame f{0, 1, 0, 1, w, h};
  if (!xs.empty()) {
    f.xmin = *std::min_element(xs.begin(), xs.end());
    f.xmax = *std::max_element(xs.begin(), xs.end());
  }
  if (!ys.empty()) {
    f.ymin = *std::min_element(ys.begin(), ys.end());
    f.ymax = *std::max_element(ys.begin(), ys.end());
  }
  if (f.xmax - f.xmin < 1e-12) f.xmax = f.xmin + 1;
  if (f.ymax - f.ymin < 1e-12) f.ymax = f.ymin + 1;
  const double pad = 0.05 * (f.ymax - f.ymin);
  f.ymin -= pad;
  f.ymax += pad;
  return f;
}

void axes(Canvas& cv, const Frame& f) {
  const Color k{0, 0, 0};
  cv.line(f.margin, f.height - f.margin, f.width - f.margin, f.height - f.margin, k);
  cv.line(f.margin, f.margin, f.margin, f.height - f.margin, k);
  if (f.ymin < 0 && f.ymax > 0) cv.line(f.margin, f.py(0), f.width - f.margin, f.py(0), {180, 180, 180});
}

}  // namespace

Canvas line_plot(std::span<const Series> series, int width, int height) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  Canvas cv(width, height);
  const Frame f = make_frame(xs, ys, width, height);
  axes(cv, f);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i > 0) cv.line(f.px(s.x[i - 1]), f.py(s.y[i - 1]), f.px(s.x[i]), f.py(s.y[i]), s.color);
      cv.dot(f.px(s.x[i]), f.py(s.y[i]), 2, s.color);
    }
  }
  return cv;
}

Canvas scatter_plot(std::span<const double> x, std::span<const double> y, int width, int height) {
  if (x.size() != y.size()) throw std::invalid_argument("scatter_plot: length mismatch");
  Canvas cv(width, height);
  const Frame f = make_frame(x, y, width, height);
  axes(cv, f);
  for (std::size_t i = 0; i < x.size(); ++i) cv.dot(f.px(x[i]), f.py(y[i]), 3, {0, 90, 200});
  return cv;
}

}  // namespace setcomm::plot
