#include "kmdx/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kmdx/common.hpp"
#include "kmdx/log.hpp"
#include "kmdx/rng.hpp"

namespace kmdx {

namespace {

double sq_dist(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// k-means++ seeding.
std::vector<double> seed_centroids(const std::vector<double>& pts, int n,
                                   int dim, int m, std::mt19937_64& rng) {
    std::vector<double> centroids(static_cast<size_t>(m) * dim);
    std::uniform_int_distribution<int> first(0, n - 1);
    const int c0 = first(rng);
    std::copy_n(pts.data() + static_cast<size_t>(c0) * dim, dim,
                centroids.data());
    std::vector<double> d2(static_cast<size_t>(n));
    for (int c = 1; c < m; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < c; ++j)
                best = std::min(best,
                                sq_dist(pts.data() + static_cast<size_t>(i) * dim,
                                        centroids.data() +
                                            static_cast<size_t>(j) * dim,
                                        dim));
            d2[static_cast<size_t>(i)] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng);
            for (int i = 0; i < n; ++i) {
                r -= d2[static_cast<size_t>(i)];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        } else {
            pick = first(rng);  // all points coincide with chosen centroids
        }
        std::copy_n(pts.data() + static_cast<size_t>(pick) * dim, dim,
                    centroids.data() + static_cast<size_t>(c) * dim);
    }
    return centroids;
}

struct LloydRun {
    std::vector<double> centroids;
    std::vector<int> assignment;
    double objective;
};

LloydRun lloyd(const std::vector<double>& pts, int n, int dim, int m,
               std::mt19937_64& rng, int max_iters, double tol) {
    LloydRun run;
    run.centroids = seed_centroids(pts, n, dim, m, rng);
    run.assignment.assign(static_cast<size_t>(n), 0);
    std::vector<double> best_d2(static_cast<size_t>(n));
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iters; ++iter) {
        // assignment step; objective summed serially so the result does not
        // depend on the thread count
#pragma omp parallel for schedule(static) \
    if (static_cast<long long>(n) * m * dim > 16384)
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (int j = 0; j < m; ++j) {
                const double d =
                    sq_dist(pts.data() + static_cast<size_t>(i) * dim,
                            run.centroids.data() + static_cast<size_t>(j) * dim,
                            dim);
                if (d < best) {
                    best = d;
                    arg = j;
                }
            }
            run.assignment[static_cast<size_t>(i)] = arg;
            best_d2[static_cast<size_t>(i)] = best;
        }
        double obj = 0.0;
        for (int i = 0; i < n; ++i) obj += best_d2[static_cast<size_t>(i)];
        // update step
        std::vector<double> sums(static_cast<size_t>(m) * dim, 0.0);
        std::vector<int> counts(static_cast<size_t>(m), 0);
        for (int i = 0; i < n; ++i) {
            const int a = run.assignment[static_cast<size_t>(i)];
            ++counts[static_cast<size_t>(a)];
            for (int k = 0; k < dim; ++k)
                sums[static_cast<size_t>(a) * dim + k] +=
                    pts[static_cast<size_t>(i) * dim + k];
        }
        for (int j = 0; j < m; ++j) {
            if (counts[static_cast<size_t>(j)] == 0) {
                // Re-seed at the point farthest from its assigned centroid.
                double worst = -1.0;
                int pick = 0;
                for (int i = 0; i < n; ++i) {
                    const int a = run.assignment[static_cast<size_t>(i)];
                    const double d = sq_dist(
                        pts.data() + static_cast<size_t>(i) * dim,
                        run.centroids.data() + static_cast<size_t>(a) * dim,
                        dim);
                    if (d > worst) {
                        worst = d;
                        pick = i;
                    }
                }
                std::copy_n(pts.data() + static_cast<size_t>(pick) * dim, dim,
                            run.centroids.data() + static_cast<size_t>(j) * dim);
            } else {
                for (int k = 0; k < dim; ++k)
                    run.centroids[static_cast<size_t>(j) * dim + k] =
                        sums[static_cast<size_t>(j) * dim + k] /
                        counts[static_cast<size_t>(j)];
            }
        }
        run.objective = obj;
        if (prev_obj < std::numeric_limits<double>::infinity()) {
            const double denom = std::max(prev_obj, 1e-300);
            if (std::abs(prev_obj - obj) / denom < tol) break;
        }
        prev_obj = obj;
    }
    // Final objective under the final centroids.
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int j = 0; j < m; ++j) {
            const double d =
                sq_dist(pts.data() + static_cast<size_t>(i) * dim,
                        run.centroids.data() + static_cast<size_t>(j) * dim,
                        dim);
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        run.assignment[static_cast<size_t>(i)] = arg;
        obj += best;
    }
    run.objective = obj;
    return run;
}

}  // namespace

KMeansResult kmeans(const std::vector<double>& points, int n, int dim, int m,
                    std::uint64_t seed, int restarts, int max_iters,
                    double tol) {
    if (n <= 0 || static_cast<size_t>(n) * dim != points.size())
        throw ContractError("kmeans: point buffer does not match n*dim");
    if (m <= 0 || m > n)
        throw ConfigError("kmeans: m=" + std::to_string(m) +
                          " exceeds population " + std::to_string(n));
    KMeansResult best;
    best.objective = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        auto rng = rng_for(seed, "kmeans-restart", static_cast<std::uint64_t>(r));
        LloydRun run = lloyd(points, n, dim, m, rng, max_iters, tol);
        if (run.objective < best.objective) {
            best.centroids = std::move(run.centroids);
            best.assignment = std::move(run.assignment);
            best.objective = run.objective;
        }
    }
    return best;
}

std::vector<double> value_prototypes(const std::vector<double>& centroids,
                                     int m, int dim,
                                     const std::vector<double>& keys,
                                     const std::vector<double>& values, int n,
                                     int top_k, bool normalize) {
    if (static_cast<size_t>(n) * dim != keys.size() ||
        keys.size() != values.size())
        throw ContractError("value_prototypes: key/value buffers mismatch");
    if (top_k > n) {
        log_warn("value_prototypes: top_k " + std::to_string(top_k) +
                 " clamped to population " + std::to_string(n));
        top_k = n;
    }
    if (top_k <= 0) throw ConfigError("value_prototypes: top_k must be >= 1");
    std::vector<double> out(static_cast<size_t>(m) * dim, 0.0);
    std::vector<std::pair<double, int>> order(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        const double* c = centroids.data() + static_cast<size_t>(i) * dim;
        for (int j = 0; j < n; ++j)
            order[static_cast<size_t>(j)] = {
                std::sqrt(sq_dist(c, keys.data() + static_cast<size_t>(j) * dim,
                                  dim)),
                j};
        // ties break toward the lower storage index
        std::partial_sort(order.begin(), order.begin() + top_k, order.end());
        double wsum = 0.0;
        for (int t = 0; t < top_k; ++t) {
            const auto& [dist, j] = order[static_cast<size_t>(t)];
            const double w = std::exp(-dist);
            wsum += w;
            for (int k = 0; k < dim; ++k)
                out[static_cast<size_t>(i) * dim + k] +=
                    w * values[static_cast<size_t>(j) * dim + k];
        }
        if (normalize && wsum > 0.0)
            for (int k = 0; k < dim; ++k)
                out[static_cast<size_t>(i) * dim + k] /= wsum;
    }
    return out;
}

}  // namespace kmdx
