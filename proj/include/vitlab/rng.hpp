#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "vitlab/tensor.hpp"

namespace vitlab {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
// bit-identical across platforms and the state serializes into checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed);

    std::uint64_t next_u64();
    // uniform in [0,1)
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // standard normal via Box-Muller (cached spare)
    double gaussian();
    double gaussian(double mu, double sigma) { return mu + sigma * gaussian(); }
    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n);

    Tensor gaussian_tensor(Shape s, double sigma = 1.0);
    Tensor uniform_tensor(Shape s, double lo, double hi);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    std::array<std::uint64_t, 4> state() const { return s_; }
    bool has_spare() const { return has_spare_; }
    double spare() const { return spare_; }
    void restore(const std::array<std::uint64_t, 4>& s, bool has_spare, double spare);

    std::string serialize() const;
    static Rng deserialize(const std::string& text);

private:
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vitlab
