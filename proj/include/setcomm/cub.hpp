#pragma once

// Caltech-UCSD Birds ingestion: class attribute vectors, the seeded class
// split, and five-versus-five games drawn from class image lists.

#include "setcomm/random.hpp"
#include "setcomm/world.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace setcomm::cub {

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BirdImage {
  std::filesystem::path path;
  std::vector<std::uint8_t> attributes;  // per-image presence bits
};

struct BirdClass {
  int class_id = 0;  // 1-based, as in classes.txt
  std::string name;
  std::vector<BirdImage> images;
  std::vector<std::uint8_t> class_attributes;
};

struct BirdData {
  int n_attributes = 0;
  std::vector<BirdClass> train;  // 100 classes
  std::vector<BirdClass> test;   // 50 classes
};

// 1 iff the mean instance bit is at least one half.
std::vector<std::uint8_t> round_class_attributes(std::span<const std::vector<std::uint8_t>> instances);

// Seeded shuffle of the class ids, first n_train to train, next n_test to test.
std::pair<std::vector<int>, std::vector<int>> split_classes(std::vector<int> class_ids, std::uint64_t seed,
                                                            std::size_t n_train = 100, std::size_t n_test = 50);

// Reads the published layout under root (or root/CUB_200_2011): images.txt,
// classes.txt, image_class_labels.txt, images/ and
// attributes/image_attribute_labels.txt.
BirdData load_cub(const std::filesystem::path& root, std::uint64_t seed);

// Decodes a JPEG and resizes it (bilinear) to a square RGB scene.
world::Scene load_bird_image(const std::filesystem::path& path, int resolution);

struct BirdGame {
  int class_id = 0;
  std::vector<const BirdImage*> targets;
  std::vector<const BirdImage*> distractors;
};

// Targets from one class, distractors from the other classes of the split.
BirdGame sample_bird_game(std::span<const BirdClass> classes, std::size_t class_index, int n_targets,
                          int n_distractors, Rng& rng);

}  // namespace setcomm::cub
