// Shared basics: vectors, deterministic RNG substreams, error types.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace srvol {

// ---------------------------------------------------------------- errors

struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteValue : std::runtime_error {
    explicit NonFiniteValue(const std::string& what, int node = -1)
        : std::runtime_error(what), node_index(node) {}
    int node_index;
};
struct DegenerateGeometry : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- vectors

template <typename T>
struct Vec3t {
    T x{}, y{}, z{};
};

using Vec3 = Vec3t<double>;

struct Vec2 {
    double x = 0.0, y = 0.0;
};

template <typename T> Vec3t<T> operator+(const Vec3t<T>& a, const Vec3t<T>& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
template <typename T> Vec3t<T> operator-(const Vec3t<T>& a, const Vec3t<T>& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
template <typename T> Vec3t<T> operator-(const Vec3t<T>& a) { return {-a.x, -a.y, -a.z}; }
template <typename T, typename S> Vec3t<T> operator*(const Vec3t<T>& a, const S& s) { return {a.x * s, a.y * s, a.z * s}; }
template <typename T, typename S> Vec3t<T> operator*(const S& s, const Vec3t<T>& a) { return a * s; }
template <typename T, typename S> Vec3t<T> operator/(const Vec3t<T>& a, const S& s) { return {a.x / s, a.y / s, a.z / s}; }

template <typename T> T dot(const Vec3t<T>& a, const Vec3t<T>& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

template <typename T>
Vec3t<T> cross(const Vec3t<T>& a, const Vec3t<T>& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <typename T>
T norm(const Vec3t<T>& a) {
    using std::sqrt;
    return sqrt(dot(a, a));
}

template <typename T>
Vec3t<T> normalized(const Vec3t<T>& a) {
    return a / norm(a);
}

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------- rng

// Counter-based generator built on splitmix64. Substreams are derived by
// hashing a key tuple, so a stream for (pixel, jitter, epoch) is reachable
// without sequencing through any other stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        std::uint64_t h = seed;
        h = mix(h ^ mix(a + 0x632be59bd9b4e019ULL));
        h = mix(h ^ mix(b + 0x9e3779b97f4a7c15ULL));
        h = mix(h ^ mix(c + 0xbf58476d1ce4e5b9ULL));
        return Rng(h);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // uniform in [0,1)
    double uniform() {
        return double(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        cached_ = radius * std::sin(2.0 * kPi * u2);
        have_cached_ = true;
        return radius * std::cos(2.0 * kPi * u2);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30; z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27; z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace srvol
