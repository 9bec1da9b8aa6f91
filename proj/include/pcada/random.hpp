#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pcada {

using Rng = std::mt19937_64;

// Named sub-stream of a run seed. Every consumer of randomness (data, init,
// trajectory sampling, shuffling) takes its own stream so that changing one
// component never perturbs another.
Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

} // namespace pcada
