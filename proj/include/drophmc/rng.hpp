#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace drophmc {

using Rng = std::mt19937_64;

// Independent random streams owned by one chain. Keeping them apart means
// that, e.g., drawing a dropout mask never shifts the momentum noise.
enum class Stream : std::uint32_t {
  shuffle = 1,
  momentum = 2,
  mask = 3,
  prediction = 4,
};

inline Rng make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

struct ChainStreams {
  Rng shuffle;
  Rng momentum;
  Rng mask;

  explicit ChainStreams(std::uint64_t seed)
      : shuffle(make_stream(seed, Stream::shuffle)),
        momentum(make_stream(seed, Stream::momentum)),
        mask(make_stream(seed, Stream::mask)) {}
};

// Fills `out` with independent N(0, stddev^2) draws.
template <typename Derived, typename Generator>
void fill_normal(Eigen::DenseBase<Derived>& out, typename Derived::Scalar stddev,
                 Generator& gen) {
  std::normal_distribution<typename Derived::Scalar> normal(0, stddev);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.derived().coeffRef(i) = normal(gen);
}

}  // namespace drophmc
