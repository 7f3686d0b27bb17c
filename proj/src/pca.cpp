#include "cmatch/pca.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmatch {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void normalize(std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    if (n == 0.0) return;
    for (auto& x : v) x /= n;
}

std::size_t distinct_rows(const std::vector<std::vector<double>>& rows) {
    auto sorted = rows;
    std::sort(sorted.begin(), sorted.end());
    return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

}  // namespace

Pca Pca::fit(const std::vector<std::vector<double>>& rows, const PcaOptions& options) {
    if (rows.empty()) throw std::invalid_argument("PCA needs at least two distinct vectors, got none");
    const std::size_t d = rows.front().size();
    for (const auto& r : rows) {
        if (r.size() != d) throw std::invalid_argument("PCA rows have different dimensions");
    }
    if (distinct_rows(rows) < 2) {
        throw std::invalid_argument("PCA needs at least two distinct vectors (rank < 2)");
    }
    if (options.components == 0 || options.components > d) {
        throw std::invalid_argument("cannot extract " + std::to_string(options.components) + " components from " +
                                    std::to_string(d) + " dimensions");
    }

    Pca pca;
    pca.mean.assign(d, 0.0);
    for (const auto& r : rows) {
        for (std::size_t k = 0; k < d; ++k) pca.mean[k] += r[k];
    }
    for (auto& m : pca.mean) m /= static_cast<double>(rows.size());

    std::vector<double> cov(d * d, 0.0);
    std::vector<double> c(d);
    for (const auto& r : rows) {
        for (std::size_t k = 0; k < d; ++k) c[k] = r[k] - pca.mean[k];
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += c[a] * c[b];
        }
    }
    const double denom = rows.size() > 1 ? static_cast<double>(rows.size() - 1) : 1.0;
    for (auto& v : cov) v /= denom;

    for (std::size_t comp = 0; comp < options.components; ++comp) {
        // Fixed, non-symmetric start vector so the result is reproducible.
        std::vector<double> v(d);
        for (std::size_t k = 0; k < d; ++k) v[k] = 1.0 + 0.1 * static_cast<double>(k % 7) + 0.01 * static_cast<double>(k);
        for (const auto& prev : pca.components) {
            const double p = dot(v, prev);
            for (std::size_t k = 0; k < d; ++k) v[k] -= p * prev[k];
        }
        normalize(v);
        std::vector<double> next(d);
        for (std::size_t it = 0; it < options.max_iterations; ++it) {
            for (std::size_t a = 0; a < d; ++a) {
                double s = 0.0;
                for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
                next[a] = s;
            }
            for (const auto& prev : pca.components) {
                const double p = dot(next, prev);
                for (std::size_t k = 0; k < d; ++k) next[k] -= p * prev[k];
            }
            if (dot(next, next) == 0.0) break;  // remaining spectrum is zero
            normalize(next);
            double change = 0.0;
            for (std::size_t k = 0; k < d; ++k) change = std::max(change, std::abs(next[k] - v[k]));
            v.swap(next);
            if (change < options.tolerance) break;
        }
        // Sign convention: largest-magnitude coordinate is positive.
        std::size_t big = 0;
        for (std::size_t k = 1; k < d; ++k) {
            if (std::abs(v[k]) > std::abs(v[big])) big = k;
        }
        if (v[big] < 0.0) {
            for (auto& x : v) x = -x;
        }
        double lambda = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            double s = 0.0;
            for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
            lambda += v[a] * s;
        }
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
        }
        pca.components.push_back(v);
        pca.eigenvalues.push_back(lambda);
    }
    return pca;
}

std::vector<double> Pca::transform(const std::vector<double>& row) const {
    if (row.size() != mean.size()) throw std::invalid_argument("row dimension does not match the fitted PCA");
    std::vector<double> centered(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) centered[k] = row[k] - mean[k];
    std::vector<double> out;
    for (const auto& c : components) out.push_back(dot(centered, c));
    return out;
}

}  // namespace cmatch
