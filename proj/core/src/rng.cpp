#include "lrod/rng.hpp"

namespace lrod {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t x = splitmix64(seed ^ h);
    x = splitmix64(x ^ a);
    x = splitmix64(x ^ (b * 0xd6e8feb86659fd93ULL));
    return x;
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do v = engine_();
    while (v >= limit);
    return v % n;
}

Tensor Rng::normal_tensor(const Shape& shape, double stddev) {
    Tensor t(shape);
    for (double& v : t.data()) v = stddev * normal();
    return t;
}

Tensor Rng::rademacher_tensor(const Shape& shape) {
    Tensor t(shape);
    for (double& v : t.data()) v = rademacher();
    return t;
}

}  // namespace lrod
