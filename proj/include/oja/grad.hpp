#pragma once

#include "oja/deep.hpp"

#include <span>

namespace oja {

/// D x D derivative block. As produced by jacobian_init it holds dP/dphi at
/// one layer; propagated through later layers it becomes dR(to)/dphi(from).
/// Blocks with to < from are identically zero and never materialized.
struct JacobianBlock {
    Mat matrix;
    int layer_from = 0;
    int layer_to = 0;
};

/// Derivative of the layer projection w.r.t. its selected atom, in numerator
/// layout (entry (i,j) = dP_i/dphi_j):
///
///   dP/dphi = (<R,phi> I + phi R^T) / ||phi||^2 - 2 <R,phi> phi phi^T / ||phi||^4
///
/// and dR/dphi at the same layer is the negation. The selection is treated as
/// locally constant (it is piecewise constant in phi).
inline JacobianBlock jacobian_init(const Vec& r_prev, const Atom& atom, int layer = 0) {
    if (r_prev.size() != atom.dim())
        throw precondition_error("jacobian_init: dimension mismatch");
    const Vec& phi = atom.values();
    const double phi_sq = atom.squared_norm();
    const double d = r_prev.dot(phi);
    Mat m = d * Mat::Identity(atom.dim(), atom.dim());
    m += phi * r_prev.transpose();
    m /= phi_sq;
    m -= (2.0 * d / (phi_sq * phi_sq)) * (phi * phi.transpose());
    return JacobianBlock{std::move(m), layer, layer};
}

/// Push a block through the next layer's projection:
/// A_{i,j} = A_{i,j-1} - phi phi^T A_{i,j-1} / ||phi||^2.
inline JacobianBlock jacobian_propagate(const JacobianBlock& block, const Atom& atom_next) {
    if (block.matrix.rows() != atom_next.dim())
        throw precondition_error("jacobian_propagate: dimension mismatch");
    const Vec& phi = atom_next.values();
    Mat m = block.matrix - phi * (phi.transpose() * block.matrix) / atom_next.squared_norm();
    return JacobianBlock{std::move(m), block.layer_from, block.layer_to + 1};
}

/// Gradient of ||R(L)||^2 w.r.t. one layer's selected atom. Atoms not selected
/// along the path receive exactly zero and are not reported.
struct AtomGradient {
    std::size_t atom_index = 0;
    Vec grad;
    bool tie = false;  // exact argmax tie at this layer; deterministic branch reported
};

namespace detail {

inline bool selection_tied(const Vec& x, const Dictionary& dict) {
    double best = -1.0;
    int hits = 0;
    for (std::size_t k = 0; k < dict.size(); ++k) {
        const Atom& a = dict.atom(k);
        const double d = x.dot(a.values());
        const double score = d * d / a.squared_norm();
        if (score > best) {
            best = score;
            hits = 1;
        } else if (score == best) {
            ++hits;
        }
    }
    return hits > 1;
}

}  // namespace detail

/// Per-layer gradients g_l = 2 (dR(L)/dphi(l))^T R(L) via the block recursion.
inline std::vector<AtomGradient> loss_gradient(const Vec& x, const DeepModel& model) {
    const DecompositionTrace trace = decompose(x, model);
    const Vec& r_final = trace.residuals.back();
    const std::size_t depth = model.depth();
    const bool converged = trace.energies.back() == 0.0;

    std::vector<AtomGradient> out(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        const Assignment& a = trace.assignments[l];
        out[l].atom_index = a.atom_index;
        out[l].tie = !a.zero_input && detail::selection_tied(trace.residuals[l], model.layer(l));
        if (converged || a.zero_input) {
            out[l].grad = Vec::Zero(model.dim());
            continue;
        }
        Mat block = -jacobian_init(trace.residuals[l], model.layer(l).atom(a.atom_index),
                                   static_cast<int>(l))
                         .matrix;
        for (std::size_t j = l + 1; j < depth; ++j) {
            const Atom& next = model.layer(j).atom(trace.assignments[j].atom_index);
            block -= next.values() * (next.values().transpose() * block) / next.squared_norm();
        }
        out[l].grad = 2.0 * (block.transpose() * r_final);
    }
    return out;
}

/// Selected atom index per layer for one input (the argmax path).
inline std::vector<std::size_t> selection_path(const Vec& x, const DeepModel& model) {
    const DecompositionTrace trace = decompose(x, model);
    std::vector<std::size_t> path;
    path.reserve(trace.assignments.size());
    for (const Assignment& a : trace.assignments)
        path.push_back(a.atom_index);
    return path;
}

/// ||R(L)||^2 with the per-layer atom choice pinned to `path` (no re-selection).
inline double pinned_loss(const Vec& x, const DeepModel& model, std::span<const std::size_t> path) {
    if (path.size() != model.depth())
        throw precondition_error("pinned_loss: path length mismatch");
    Vec r = x;
    for (std::size_t l = 0; l < model.depth(); ++l) {
        const Atom& a = model.layer(l).atom(path[l]);
        r -= (r.dot(a.values()) / a.squared_norm()) * a.values();
    }
    return r.squaredNorm();
}

/// Central finite differences of the pinned loss w.r.t. the selected atom of
/// one layer, step h_i = 1e-5 max(1, |phi_i|).
inline Vec fd_gradient(const Vec& x, const DeepModel& model, std::size_t layer,
                       std::span<const std::size_t> path) {
    const Atom& atom = model.layer(layer).atom(path[layer]);
    Vec grad(model.dim());
    for (Eigen::Index i = 0; i < model.dim(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(atom.values()[i]));
        DeepModel plus = model;
        Vec v = atom.values();
        v[i] += h;
        plus.set_atom(layer, path[layer], Atom(v));
        DeepModel minus = model;
        v[i] -= 2.0 * h;
        minus.set_atom(layer, path[layer], Atom(std::move(v)));
        grad[i] = (pinned_loss(x, plus, path) - pinned_loss(x, minus, path)) / (2.0 * h);
    }
    return grad;
}

/// Worst relative disagreement between loss_gradient and central finite
/// differences over all layers, with the selection path pinned.
inline double gradient_check(const Vec& x, const DeepModel& model) {
    const std::vector<std::size_t> path = selection_path(x, model);
    const std::vector<AtomGradient> grads = loss_gradient(x, model);
    double worst = 0.0;
    for (std::size_t l = 0; l < model.depth(); ++l) {
        const Vec fd = fd_gradient(x, model, l, path);
        // near a minimum both sides shrink to the finite-difference noise
        // floor, so normalize absolutely there and relatively at scale
        const double denom =
            std::max(1.0, fd.cwiseAbs().maxCoeff() + grads[l].grad.cwiseAbs().maxCoeff());
        worst = std::max(worst, (grads[l].grad - fd).cwiseAbs().maxCoeff() / denom);
    }
    return worst;
}

struct RefineReport {
    std::vector<double> epoch_loss;  // mean loss before any step, then after each epoch
};

/// Optional joint refinement: full-model gradient descent on the mean loss,
/// selections pinned per sample and refreshed every epoch. Off the default
/// training path; train_deep does not call this.
inline std::pair<DeepModel, RefineReport> joint_refine(DeepModel model, const Mat& samples,
                                                       int epochs, double step) {
    if (samples.cols() != model.dim())
        throw precondition_error("joint_refine: dimension mismatch");
    if (epochs < 1 || !(step > 0.0))
        throw precondition_error("joint_refine: need epochs >= 1 and step > 0");

    const auto mean_loss = [&](const DeepModel& m) {
        if (samples.rows() == 0) return 0.0;
        double total = 0.0;
        for (Eigen::Index n = 0; n < samples.rows(); ++n)
            total += decompose(samples.row(n).transpose(), m).energies.back();
        return total / static_cast<double>(samples.rows());
    };

    RefineReport report;
    report.epoch_loss.push_back(mean_loss(model));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        // accumulate mean gradient per (layer, atom) under this epoch's selections
        std::vector<std::vector<Vec>> acc(model.depth());
        for (std::size_t l = 0; l < model.depth(); ++l)
            acc[l].assign(model.layer(l).size(), Vec::Zero(model.dim()));
        for (Eigen::Index n = 0; n < samples.rows(); ++n) {
            const Vec x = samples.row(n).transpose();
            const std::vector<AtomGradient> grads = loss_gradient(x, model);
            for (std::size_t l = 0; l < grads.size(); ++l)
                acc[l][grads[l].atom_index] += grads[l].grad;
        }
        const double scale = step / static_cast<double>(std::max<Eigen::Index>(samples.rows(), 1));
        for (std::size_t l = 0; l < model.depth(); ++l)
            for (std::size_t j = 0; j < model.layer(l).size(); ++j) {
                Vec next = model.layer(l).atom(j).values() - scale * acc[l][j];
                if (next.squaredNorm() >= 1e-24)
                    model.set_atom(l, j, Atom(std::move(next)));
            }
        report.epoch_loss.push_back(mean_loss(model));
    }
    return {std::move(model), std::move(report)};
}

}  // namespace oja
