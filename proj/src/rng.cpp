#include "vitlab/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vitlab {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

void Rng::reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    has_spare_ = false;
    spare_ = 0.0;
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    // 53-bit mantissa construction
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("rng::below(0)");
    // rejection sampling for an unbiased draw
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
}

Tensor Rng::gaussian_tensor(Shape s, double sigma) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = sigma * gaussian();
    return t;
}

Tensor Rng::uniform_tensor(Shape s, double lo, double hi) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = uniform(lo, hi);
    return t;
}

void Rng::restore(const std::array<std::uint64_t, 4>& s, bool has_spare, double spare) {
    s_ = s;
    has_spare_ = has_spare;
    spare_ = spare;
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << s_[0] << ' ' << s_[1] << ' ' << s_[2] << ' ' << s_[3] << ' ' << (has_spare_ ? 1 : 0);
    if (has_spare_) {
        os << ' ';
        os.precision(17);
        os << spare_;
    }
    return os.str();
}

Rng Rng::deserialize(const std::string& text) {
    std::istringstream is(text);
    Rng r;
    int has_spare = 0;
    if (!(is >> r.s_[0] >> r.s_[1] >> r.s_[2] >> r.s_[3] >> has_spare))
        throw std::invalid_argument("rng: bad serialized state");
    r.has_spare_ = has_spare != 0;
    if (r.has_spare_ && !(is >> r.spare_)) throw std::invalid_argument("rng: bad serialized spare");
    return r;
}

}  // namespace vitlab
