#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gcr {

/// Generator seeded from a tuple of integers via std::seed_seq, so that
/// (seed, tag, index) triples give independent, reproducible streams.
std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts);

}  // namespace gcr
