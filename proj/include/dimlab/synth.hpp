#pragma once

#include <cstdint>
#include <vector>

#include "dimlab/image.hpp"

namespace dimlab {

/// Seeded HDR test scene in cd/m^2: a graded background, textured
/// rectangles spanning several decades, a few small specular highlights
/// (often brighter than any display peak) and dark patches. Same seed, same
/// image.
HdrImage synth_scene(Index height, Index width, std::uint64_t seed);

/// `count` scenes with seeds first_seed, first_seed + 1, ...
std::vector<HdrImage> synth_dataset(Index height, Index width, std::size_t count, std::uint64_t first_seed);

}  // namespace dimlab
