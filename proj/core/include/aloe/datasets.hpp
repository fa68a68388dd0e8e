#pragma once

#include <array>
#include <string>
#include <vector>

#include "aloe/gray.hpp"
#include "aloe/rng.hpp"

namespace aloe {

enum class Dataset2D {
  two_spirals,
  eight_gaussians,
  checkerboard,
  circles,
  moons,
  pinwheel,
  swissroll,
};

Dataset2D dataset_from_name(const std::string& name);  // throws on unknown name
std::string dataset_name(Dataset2D d);
const std::vector<std::string>& dataset_names();

using Point2D = std::array<double, 2>;

// Standard 2D toy densities, all landing in [-4, 4]^2 up to far tails.
std::vector<Point2D> sample_2d(Dataset2D dataset, int n, Rng& rng);

std::vector<BitVector> encode_points(const GrayCodec& codec, const std::vector<Point2D>& pts);
std::vector<BitVector> sample_encoded(Dataset2D dataset, int n, const GrayCodec& codec, Rng& rng);

}  // namespace aloe
