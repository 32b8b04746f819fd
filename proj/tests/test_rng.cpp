#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "stimcal/rng.hpp"

using namespace stimcal;

TEST_CASE("identical seeds give identical streams") {
    Rng a(123456789), b(123456789);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams are independent and reproducible") {
    Rng a = substream(42, StreamId::cluster_epochs, 7);
    Rng b = substream(42, StreamId::cluster_epochs, 7);
    Rng c = substream(42, StreamId::cluster_epochs, 8);
    Rng d = substream(42, StreamId::background, 7);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
        differs_c |= va != c.next_u64();
        differs_d |= va != d.next_u64();
    }
    CHECK(differs_c);
    CHECK(differs_d);
}

TEST_CASE("uniform draws stay in range") {
    Rng rng(99);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double v = rng.uniform_pos();
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("exponential sample mean converges") {
    Rng rng(7);
    const int n = 1000000;
    const double mean = 3.5;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rng.exponential(mean);
    const double sample_mean = sum / n;
    const double se = mean / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(sample_mean - mean) < 5.0 * se);
}

TEST_CASE("laplace is symmetric with the requested scale") {
    Rng rng(8);
    const int n = 1000000;
    const double scale = 2.0e-13;
    double sum = 0.0, abs_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.laplace(scale);
        sum += x;
        abs_sum += std::abs(x);
    }
    // mean 0 with sd scale*sqrt(2); mean |x| = scale with sd scale
    CHECK(std::abs(sum / n) < 5.0 * scale * std::sqrt(2.0 / n));
    CHECK(std::abs(abs_sum / n - scale) < 5.0 * scale / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("bernoulli frequency matches p") {
    Rng rng(21);
    const int n = 1000000;
    const double p = 0.37;
    int kept = 0;
    for (int i = 0; i < n; ++i) kept += rng.bernoulli(p) ? 1 : 0;
    const double se = std::sqrt(p * (1 - p) * n);
    CHECK(std::abs(kept - p * n) < 5.0 * se);
}

TEST_CASE("event hash depends only on its inputs") {
    CHECK(event_hash(1, 2) == event_hash(1, 2));
    CHECK(event_hash(1, 2) != event_hash(1, 3));
    CHECK(event_hash(2, 2) != event_hash(1, 2));
}
