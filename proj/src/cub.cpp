#include "setcomm/cub.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include <jpeglib.h>

namespace setcomm::cub {

namespace fs = std::filesystem;

std::vector<std::uint8_t> round_class_attributes(std::span<const std::vector<std::uint8_t>> instances) {
  if (instances.empty()) throw std::invalid_argument("round_class_attributes: no instances");
  const std::size_t k = instances.front().size();
  std::vector<std::size_t> ones(k, 0);
  for (const auto& v : instances) {
    if (v.size() != k) throw std::invalid_argument("round_class_attributes: ragged attribute vectors");
    for (std::size_t a = 0; a < k; ++a) ones[a] += v[a] ? 1 : 0;
  }
  std::vector<std::uint8_t> out(k);
  // mean >= 1/2  <=>  2 * ones >= n, exact in integers
  for (std::size_t a = 0; a < k; ++a) out[a] = 2 * ones[a] >= instances.size() ? 1 : 0;
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_classes(std::vector<int> class_ids, std::uint64_t seed,
                                                            std::size_t n_train, std::size_t n_test) {
  if (class_ids.size() < n_train + n_test) {
    throw IngestionError("need " + std::to_string(n_train + n_test) + " classes, found " +
                         std::to_string(class_ids.size()));
  }
  std::sort(class_ids.begin(), class_ids.end());
  Rng rng(derive_seed(seed, {0xb1d5}));
  std::shuffle(class_ids.begin(), class_ids.end(), rng);
  std::vector<int> train(class_ids.begin(), class_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<int> test(class_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                        class_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  return {train, test};
}

namespace {

const char* kLayout =
    "expected CUB_200_2011 layout: images.txt, classes.txt, image_class_labels.txt, images/<class>/<file>.jpg, "
    "attributes/image_attribute_labels.txt";

std::ifstream open_table(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("missing " + path.string() + "; " + kLayout);
  return is;
}

}  // namespace

BirdData load_cub(const fs::path& root_in, std::uint64_t seed) {
  fs::path root = root_in;
  if (!fs::exists(root / "images.txt") && fs::exists(root / "CUB_200_2011" / "images.txt")) root /= "CUB_200_2011";

  std::map<int, std::string> class_names;
  {
    auto is = open_table(root / "classes.txt");
    int id;
    std::string name;
    while (is >> id >> name) class_names[id] = name;
  }
  std::map<int, fs::path> image_paths;
  {
    auto is = open_table(root / "images.txt");
    int id;
    std::string rel;
    while (is >> id >> rel) image_paths[id] = root / "images" / rel;
  }
  std::map<int, int> image_class;
  {
    auto is = open_table(root / "image_class_labels.txt");
    int id, cls;
    while (is >> id >> cls) image_class[id] = cls;
  }
  std::map<int, std::map<int, std::uint8_t>> raw;
  int n_attr = 0;
  {
    auto is = open_table(root / "attributes" / "image_attribute_labels.txt");
    std::string line;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      int img, attr, present;
      if (!(ls >> img >> attr >> present)) continue;
      raw[img][attr] = present ? 1 : 0;
      n_attr = std::max(n_attr, attr);
    }
  }
  if (class_names.empty() || image_paths.empty()) throw IngestionError(std::string("empty CUB tables; ") + kLayout);

  std::map<int, BirdClass> classes;
  for (const auto& [id, name] : class_names) classes[id] = BirdClass{id, name, {}, {}};
  for (const auto& [img, path] : image_paths) {
    const auto cls = image_class.find(img);
    if (cls == image_class.end()) throw IngestionError("image " + std::to_string(img) + " has no class label");
    const auto bc = classes.find(cls->second);
    if (bc == classes.end()) throw IngestionError("image " + std::to_string(img) + " names unknown class");
    if (!fs::exists(path)) throw IngestionError("missing image file " + path.string());
    BirdImage bi{path, std::vector<std::uint8_t>(static_cast<std::size_t>(n_attr), 0)};
    const auto attrs = raw.find(img);
    if (attrs == raw.end()) throw IngestionError("image " + std::to_string(img) + " has no attribute labels");
    for (const auto& [a, v] : attrs->second) bi.attributes[static_cast<std::size_t>(a - 1)] = v;
    bc->second.images.push_back(std::move(bi));
  }
  std::vector<int> ids;
  for (auto& [id, c] : classes) {
    if (c.images.empty()) throw IngestionError("class " + c.name + " has no images");
    std::vector<std::vector<std::uint8_t>> inst;
    for (const auto& im : c.images) inst.push_back(im.attributes);
    c.class_attributes = round_class_attributes(inst);
    ids.push_back(id);
  }
  const auto [train_ids, test_ids] = split_classes(ids, seed);
  BirdData data;
  data.n_attributes = n_attr;
  for (int id : train_ids) data.train.push_back(classes.at(id));
  for (int id : test_ids) data.test.push_back(classes.at(id));
  return data;
}

namespace {

struct JpegError {
  jpeg_error_mgr mgr;
};

[[noreturn]] void jpeg_throw(j_common_ptr cinfo) {
  char buf[JMSG_LENGTH_MAX];
  (*cinfo->err->format_message)(cinfo, buf);
  throw IngestionError(std::string("jpeg: ") + buf);
}

}  // namespace

world::Scene load_bird_image(const fs::path& path, int resolution) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw IngestionError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  jpeg_error_mgr err{};
  cinfo.err = jpeg_std_error(&err);
  err.error_exit = jpeg_throw;
  std::vector<std::uint8_t> rgb;
  int w = 0, h = 0;
  jpeg_create_decompress(&cinfo);
  try {
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    w = static_cast<int>(cinfo.output_width);
    h = static_cast<int>(cinfo.output_height);
    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
  jpeg_destroy_decompress(&cinfo);

  world::Scene s;
  s.resolution = resolution;
  s.pixels.resize(static_cast<std::size_t>(resolution) * resolution * 3);
  for (int y = 0; y < resolution; ++y) {
    const float sy = std::clamp((y + 0.5f) * h / resolution - 0.5f, 0.0f, static_cast<float>(h - 1));
    const int y0 = static_cast<int>(sy), y1 = std::min(h - 1, y0 + 1);
    const float fy = sy - y0;
    for (int x = 0; x < resolution; ++x) {
      const float sx = std::clamp((x + 0.5f) * w / resolution - 0.5f, 0.0f, static_cast<float>(w - 1));
      const int x0 = static_cast<int>(sx), x1 = std::min(w - 1, x0 + 1);
      const float fx = sx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        auto px = [&](int yy, int xx) { return rgb[(static_cast<std::size_t>(yy) * w + xx) * 3 + ch] / 255.0f; };
        const float v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        s.pixels[(static_cast<std::size_t>(y) * resolution + x) * 3 + ch] = v;
      }
    }
  }
  return s;
}

BirdGame sample_bird_game(std::span<const BirdClass> classes, std::size_t class_index, int n_targets,
                          int n_distractors, Rng& rng) {
  if (classes.size() < 2) throw std::invalid_argument("sample_bird_game: need at least two classes");
  const auto& cls = classes[class_index];
  if (cls.images.empty()) throw std::invalid_argument("sample_bird_game: class without images");
  BirdGame g;
  g.class_id = cls.class_id;
  std::vector<std::size_t> idx(cls.images.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  for (int i = 0; i < n_targets; ++i) g.targets.push_back(&cls.images[idx[static_cast<std::size_t>(i) % idx.size()]]);
  std::uniform_int_distribution<std::size_t> other(0, classes.size() - 2);
  for (int i = 0; i < n_distractors; ++i) {
    std::size_t c = other(rng);
    if (c >= class_index) ++c;
    std::uniform_int_distribution<std::size_t> pick(0, classes[c].images.size() - 1);
    g.distractors.push_back(&classes[c].images[pick(rng)]);
  }
  return g;
}

}  // namespace setcomm::cub
