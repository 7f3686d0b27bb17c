#pragma once

#include <cstddef>
#include <vector>

namespace cmatch {

struct PcaOptions {
    std::size_t components = 2;
    double tolerance = 1e-9;
    std::size_t max_iterations = 1000;
};

/// Principal components by power iteration on the sample covariance,
/// deflating after each component.
struct Pca {
    std::vector<double> mean;
    /// Unit-norm directions, strongest first.
    std::vector<std::vector<double>> components;
    std::vector<double> eigenvalues;

    /// Rejects input with fewer than two distinct rows.
    static Pca fit(const std::vector<std::vector<double>>& rows, const PcaOptions& options = {});

    std::vector<double> transform(const std::vector<double>& row) const;
};

}  // namespace cmatch
