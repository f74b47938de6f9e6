#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace noisypg {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("mean: empty input");
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

inline double population_std(std::span<const double> xs) {
    const double m = mean(xs);
    double sq = 0.0;
    for (double x : xs) sq += (x - m) * (x - m);
    return std::sqrt(sq / static_cast<double>(xs.size()));
}

inline double sample_std(std::span<const double> xs) {
    if (xs.size() < 2) throw std::invalid_argument("sample_std: need at least two values");
    const double m = mean(xs);
    double sq = 0.0;
    for (double x : xs) sq += (x - m) * (x - m);
    return std::sqrt(sq / static_cast<double>(xs.size() - 1));
}

inline double l2_norm(std::span<const double> xs) {
    double sq = 0.0;
    for (double x : xs) sq += x * x;
    return std::sqrt(sq);
}

// Cosine similarity, defined as 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (na * nb);
}

// One-sided sign test: P[Binomial(n, 1/2) >= wins]. Ties must be dropped by
// the caller; an empty comparison is maximally inconclusive (p = 1).
inline double sign_test_p(std::size_t wins, std::size_t n) {
    if (wins > n) throw std::invalid_argument("sign_test_p: wins exceed trials");
    if (n == 0) return 1.0;
    // Sum C(n, k) / 2^n for k = wins..n with an incrementally updated term.
    double coeff = 1.0;  // C(n, 0)
    for (std::size_t k = 1; k <= wins; ++k)
        coeff *= static_cast<double>(n - k + 1) / static_cast<double>(k);
    double tail = 0.0;
    for (std::size_t k = wins; k <= n; ++k) {
        tail += coeff;
        coeff *= static_cast<double>(n - k) / static_cast<double>(k + 1);
    }
    return std::min(1.0, tail * std::pow(0.5, static_cast<double>(n)));
}

}  // namespace noisypg
