#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace ctxattr {

/// Splittable counter-style generator (splitmix64 core). Every consumer
/// derives its own stream from (seed, path of ids), so results never depend
/// on thread scheduling or call order between consumers.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

    /// Derive an independent stream, e.g. substream(seed, {kRestart, r}).
    static RandomStream substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = mix(seed ^ kGolden);
        for (std::uint64_t id : path) s = mix(s ^ mix(id + kGolden));
        RandomStream out(0);
        out.state_ = s;
        return out;
    }

    std::uint64_t next_u64() {
        state_ += kGolden;
        return mix(state_);
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; second value of each pair is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

  private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stream path ids, one per randomized subsystem.
namespace stream_id {
inline constexpr std::uint64_t restart = 1;
inline constexpr std::uint64_t instance = 2;
inline constexpr std::uint64_t bootstrap = 3;
inline constexpr std::uint64_t sweep = 4;
}  // namespace stream_id

}  // namespace ctxattr
