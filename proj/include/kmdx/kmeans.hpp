#pragma once

#include <cstdint>
#include <vector>

namespace kmdx {

struct KMeansResult {
    std::vector<double> centroids;  // m x dim, row-major
    std::vector<int> assignment;    // n
    double objective = 0.0;         // sum of squared distances
};

// Lloyd's algorithm with k-means++ seeding, best objective over `restarts`
// runs. A restart stops after max_iters sweeps or when the relative
// objective change drops below tol. Empty clusters are re-seeded at the
// point farthest from its assigned centroid. Deterministic given seed.
KMeansResult kmeans(const std::vector<double>& points, int n, int dim, int m,
                    std::uint64_t seed, int restarts = 10, int max_iters = 50,
                    double tol = 1e-6);

// Distance-weighted value interpolation: for each centroid, the top_k
// nearest stored keys (ties broken by lower storage index) contribute
// exp(-d) * value. top_k is clamped to the population (logged). When
// normalize is set the weights are divided by their sum.
std::vector<double> value_prototypes(const std::vector<double>& centroids,
                                     int m, int dim,
                                     const std::vector<double>& keys,
                                     const std::vector<double>& values, int n,
                                     int top_k, bool normalize = false);

}  // namespace kmdx
