#pragma once

#include <cstdint>

#include "akb/image.hpp"
#include "akb/rng.hpp"

namespace akb::synth {

/// Procedural scene: smooth colour field and a few soft-edged shapes, some
/// of them finely textured, plus faint grain. Deterministic in `rng`.
image scene(int height, int width, rng_stream& rng);

/// Scene number `index` of the dataset identified by `seed`.
image dataset_image(std::uint64_t seed, std::uint64_t index, int size);

}  // namespace akb::synth
