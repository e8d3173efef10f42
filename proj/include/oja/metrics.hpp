#pragma once

#include "oja/deep.hpp"

#include <span>

namespace oja {

struct ErrorSummary {
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
    double relative = 0.0;  // sum ||x - T||^2 / sum ||x||^2
};

/// Reconstruction error summary over a dataset, computed per sample through
/// decompose + flatten_template.
inline ErrorSummary reconstruction_error(const Mat& samples, const DeepModel& model) {
    if (samples.cols() != model.dim())
        throw precondition_error("reconstruction_error: dimension mismatch");
    ErrorSummary summary;
    if (samples.rows() == 0) return summary;

    std::vector<double> errors;
    errors.reserve(static_cast<std::size_t>(samples.rows()));
    double total_error = 0.0;
    double total_energy = 0.0;
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const Vec x = samples.row(n).transpose();
        const Vec t = flatten_template(decompose(x, model));
        const double e = (x - t).squaredNorm();
        errors.push_back(e);
        total_error += e;
        total_energy += x.squaredNorm();
        summary.max = std::max(summary.max, e);
    }
    summary.mean = total_error / static_cast<double>(errors.size());
    summary.relative = total_energy > 0.0 ? total_error / total_energy : 0.0;
    std::sort(errors.begin(), errors.end());
    const std::size_t mid = errors.size() / 2;
    summary.median = errors.size() % 2 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
    return summary;
}

struct EnergyProfile {
    std::vector<double> per_level;  // fraction of total input energy captured by each level
    double residual = 0.0;          // fraction left after the last level
};

/// Captured energy per level, sum_n ||P(l)_n||^2 / sum_n ||x_n||^2. The
/// entries plus the residual share account for all input energy.
inline EnergyProfile energy_per_level(const Mat& samples, const DeepModel& model) {
    if (samples.cols() != model.dim())
        throw precondition_error("energy_per_level: dimension mismatch");
    EnergyProfile profile;
    profile.per_level.assign(model.depth(), 0.0);
    double total_energy = 0.0;
    double total_residual = 0.0;
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const Vec x = samples.row(n).transpose();
        const DecompositionTrace trace = decompose(x, model);
        total_energy += trace.energies.front();
        total_residual += trace.energies.back();
        for (std::size_t l = 0; l < model.depth(); ++l)
            profile.per_level[l] += trace.projections[l].squaredNorm();
    }
    if (total_energy > 0.0) {
        for (double& v : profile.per_level) v /= total_energy;
        profile.residual = total_residual / total_energy;
    }
    return profile;
}

/// Standard purity: sum over clusters of the dominant label count, over N.
inline double cluster_purity(std::span<const std::size_t> cluster_of, std::span<const int> labels) {
    if (cluster_of.size() != labels.size() || cluster_of.empty())
        throw precondition_error("cluster_purity: need equally sized, non-empty inputs");
    std::size_t n_clusters = 0;
    for (std::size_t c : cluster_of) n_clusters = std::max(n_clusters, c + 1);
    int n_labels = 0;
    for (int l : labels) {
        if (l < 0) throw precondition_error("cluster_purity: labels must be >= 0");
        n_labels = std::max(n_labels, l + 1);
    }
    std::vector<std::vector<std::size_t>> counts(n_clusters,
                                                 std::vector<std::size_t>(n_labels, 0));
    for (std::size_t i = 0; i < cluster_of.size(); ++i)
        ++counts[cluster_of[i]][static_cast<std::size_t>(labels[i])];
    std::size_t dominant = 0;
    for (const auto& row : counts)
        dominant += *std::max_element(row.begin(), row.end());
    return static_cast<double>(dominant) / static_cast<double>(cluster_of.size());
}

}  // namespace oja
