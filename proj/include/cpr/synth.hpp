#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "cpr/config.hpp"
#include "cpr/dataset.hpp"
#include "cpr/image_io.hpp"

namespace cpr {

struct SynthSample {
  Image image;
  ImageRecord record;
};

/// One image of colored shapes over a textured background. Category c is
/// drawn as shape (c mod 3: ellipse, rectangle, triangle) in hue family c.
/// Boxes are integer-aligned; masks are the visible (unoccluded) pixels.
SynthSample synth_image(const SynthParams& params, std::mt19937_64& rng, std::int64_t image_id);

/// Category table for the synthetic set.
std::vector<Category> synth_categories(int count);

/// Renders `count` images into `dir/images/` (PNG) and returns the dataset
/// rooted at `dir`. Image ids start at `first_id`; names carry `prefix`.
Dataset synth_dataset(const SynthParams& params, std::uint64_t seed, int count, const std::filesystem::path& dir,
                      const std::string& prefix, std::int64_t first_id = 0);

}  // namespace cpr
