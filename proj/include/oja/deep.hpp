#pragma once

#include "oja/shallow.hpp"

namespace oja {

/// Run the residual recursion R(l) = R(l-1) - P(l) through every layer.
/// Once a residual is exactly zero the trace is marked converged and all
/// later projections are zero.
inline DecompositionTrace decompose(const Vec& x, const DeepModel& model) {
    if (x.size() != model.dim())
        throw precondition_error("decompose: dimension mismatch");
    DecompositionTrace trace;
    const std::size_t depth = model.depth();
    trace.projections.reserve(depth);
    trace.assignments.reserve(depth);
    trace.residuals.reserve(depth + 1);
    trace.energies.reserve(depth + 1);

    trace.residuals.push_back(x);
    trace.energies.push_back(x.squaredNorm());
    if (trace.energies.back() == 0.0) trace.converged_at = 0;

    for (std::size_t l = 0; l < depth; ++l) {
        ResidualStep step = residual_step(trace.residuals.back(), model.layer(l));
        trace.assignments.push_back(step.assignment);
        trace.projections.push_back(std::move(step.projection));
        trace.residuals.push_back(std::move(step.residual));
        const double energy = trace.residuals.back().squaredNorm();
        trace.energies.push_back(energy);
        if (energy == 0.0 && trace.converged_at < 0)
            trace.converged_at = static_cast<int>(l) + 1;
    }
    return trace;
}

/// Flattened template T = sum_l P(l); the input equals T plus the final residual.
inline Vec flatten_template(const DecompositionTrace& trace) {
    if (trace.residuals.empty())
        throw precondition_error("flatten_template: empty trace");
    Vec t = Vec::Zero(trace.residuals.front().size());
    for (const Vec& p : trace.projections)
        t += p;
    return t;
}

namespace detail {

inline Dictionary random_unit_dictionary(int k, Eigen::Index dim, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Atom> atoms;
    atoms.reserve(static_cast<std::size_t>(k));
    while (static_cast<int>(atoms.size()) < k) {
        Vec v(dim);
        for (Eigen::Index i = 0; i < dim; ++i) v[i] = gauss(rng);
        const double n = v.norm();
        if (n == 0.0) continue;
        atoms.emplace_back(v / n);
    }
    return Dictionary(std::move(atoms));
}

}  // namespace detail

/// Greedy layerwise training: fit layer l on the current residuals, then
/// replace every residual by its layer-l deflation. Samples whose residual
/// has collapsed (norm < 1e-12) are excluded from later cluster statistics;
/// if fewer than K active rows remain, the remaining layers are seeded with
/// random unit atoms and flagged untrained.
inline std::pair<DeepModel, TrainReport> train_deep(const Mat& samples, const TrainConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int k = cfg.atoms_for(samples.cols());

    Mat residual = samples;
    const double total_energy = samples.rowwise().squaredNorm().sum();

    std::vector<Dictionary> layers;
    TrainReport report;
    for (int l = 0; l < cfg.depth; ++l) {
        std::vector<std::size_t> active;
        for (Eigen::Index n = 0; n < residual.rows(); ++n)
            if (residual.row(n).squaredNorm() >= 1e-24)
                active.push_back(static_cast<std::size_t>(n));

        if (static_cast<int>(active.size()) < k) {
            layers.push_back(detail::random_unit_dictionary(k, samples.cols(), rng));
            LayerReport placeholder;
            placeholder.trained = false;
            report.layers.push_back(std::move(placeholder));
        } else {
            const Mat active_rows = detail::rows_subset(residual, active);
            auto [dict, layer_report] = (cfg.rule == Rule::batch_pca)
                                            ? detail::train_shallow_batch_impl(active_rows, cfg, rng)
                                            : detail::train_shallow_online_impl(active_rows, cfg, rng);
            layers.push_back(std::move(dict));
            report.layers.push_back(std::move(layer_report));
        }

        double projected = 0.0;
        const Dictionary& dict = layers.back();
        for (Eigen::Index n = 0; n < residual.rows(); ++n) {
            const Vec r = residual.row(n).transpose();
            ResidualStep step = residual_step(r, dict);
            projected += step.projection.squaredNorm();
            residual.row(n) = step.residual.transpose();
        }
        report.level_energy.push_back(total_energy > 0.0 ? projected / total_energy : 0.0);
    }
    report.residual_energy =
        total_energy > 0.0 ? residual.rowwise().squaredNorm().sum() / total_energy : 0.0;
    return {DeepModel(std::move(layers), cfg), std::move(report)};
}

/// In-layer coordinate scheme for a multi-atom layer: cycle over the atom
/// slots, refitting slot k' by PCA on the inputs deflated by the projections
/// onto every other atom. With enough passes the atoms settle on mutually
/// orthogonal directions spanning the dominant subspace.
inline Dictionary fit_layer_multi_atom(const Mat& samples, int k, int passes = 3,
                                       std::uint64_t seed = 0) {
    if (k < 1) throw precondition_error("fit_layer_multi_atom: k must be >= 1");
    if (passes < 1) throw precondition_error("fit_layer_multi_atom: passes must be >= 1");
    if (samples.rows() < k)
        throw precondition_error("fit_layer_multi_atom: need at least K samples");

    std::mt19937_64 rng(seed);
    Dictionary dict = init_from_samples(samples, k, rng);

    for (int pass = 0; pass < passes; ++pass) {
        for (int kp = 0; kp < k; ++kp) {
            std::vector<std::size_t> members;
            Mat deflated(samples.rows(), samples.cols());
            for (Eigen::Index n = 0; n < samples.rows(); ++n) {
                Vec y = samples.row(n).transpose();
                for (int j = 0; j < k; ++j) {
                    if (j == kp) continue;
                    const Atom& a = dict.atom(static_cast<std::size_t>(j));
                    y -= project_coefficient(samples.row(n).transpose(), a) * a.values();
                }
                deflated.row(n) = y.transpose();
                if (y.squaredNorm() >= 1e-24)
                    members.push_back(static_cast<std::size_t>(n));
            }
            if (members.empty()) {
                // slot explains nothing; restart it at the worst full residual
                std::optional<std::size_t> worst;
                double worst_err = 0.0;
                for (Eigen::Index n = 0; n < samples.rows(); ++n) {
                    Vec r = samples.row(n).transpose();
                    for (int j = 0; j < k; ++j) {
                        const Atom& a = dict.atom(static_cast<std::size_t>(j));
                        r -= project_coefficient(samples.row(n).transpose(), a) * a.values();
                    }
                    const double e = r.squaredNorm();
                    if (e > worst_err) {
                        worst = static_cast<std::size_t>(n);
                        worst_err = e;
                    }
                }
                if (worst)
                    dict.set_atom(static_cast<std::size_t>(kp),
                                  Atom(samples.row(static_cast<Eigen::Index>(*worst)).transpose()));
                continue;
            }
            const Mat cluster = detail::rows_subset(deflated, members);
            dict.set_atom(static_cast<std::size_t>(kp),
                          update_atom_pca(cluster, dict.atom(static_cast<std::size_t>(kp))));
        }
    }
    return dict;
}

}  // namespace oja
