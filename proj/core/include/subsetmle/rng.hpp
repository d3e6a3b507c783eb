#pragma once

#include <cstdint>

namespace subsetmle {

/**
 * Splittable counter-based random number generator.
 *
 * Every stream is identified by a 64-bit key; output i of a stream is a
 * stateless hash of (key, i), so streams can be split hierarchically
 * (root -> replication -> random-effect block) and the draws of one stream
 * never depend on how many sibling streams were consumed. This is what makes
 * simulation output independent of the worker-pool size: worker w processing
 * replication r always uses split(r), never a shared sequential generator.
 *
 * The mixing function is SplitMix64, which passes BigCrush and is more than
 * adequate for Monte Carlo work.
 */
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t key) : key_(key) {}

    /// Derive an independent child stream. Deterministic in (key, stream).
    [[nodiscard]] SplitRng split(std::uint64_t stream) const;

    std::uint64_t next_u64();

    /// Uniform draw strictly inside (0, 1).
    double uniform();

    /// Standard normal via Box-Muller; caches the paired draw.
    double normal();

    [[nodiscard]] std::uint64_t key() const { return key_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace subsetmle
