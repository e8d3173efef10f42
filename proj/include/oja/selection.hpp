#pragma once

#include "oja/core.hpp"

#include <algorithm>

namespace oja {

/// Winner-take-all selection: argmax_k <x,phi_k>^2 / ||phi_k||^2, ties broken
/// toward the lowest index. The 1/||x||^2 factor of the cos^2 objective is
/// constant per sample and dropped from the argmax; cos_sq is still reported.
/// A zero-energy input yields a flagged Assignment instead of a pick.
inline Assignment select_atom(const Vec& x, const Dictionary& dict) {
    if (x.size() != dict.dim())
        throw precondition_error("select_atom: dimension mismatch");
    const double x_sq = x.dot(x);
    if (x_sq == 0.0)
        return Assignment{0, 0.0, 0.0, true};

    std::size_t best = 0;
    double best_score = -1.0;
    double best_dot = 0.0;
    for (std::size_t k = 0; k < dict.size(); ++k) {
        const Atom& a = dict.atom(k);
        const double d = x.dot(a.values());
        const double score = d * d / a.squared_norm();
        if (score > best_score) {
            best = k;
            best_score = score;
            best_dot = d;
        }
    }
    Assignment out;
    out.atom_index = best;
    out.coefficient = best_dot / dict.atom(best).squared_norm();
    out.cos_sq = std::min(1.0, best_score / x_sq);
    return out;
}

/// Single-pick reconstruction error ||x||^2 (1 - cos^2). Zero input gives 0.
inline double shallow_error(const Vec& x, const Dictionary& dict) {
    const Assignment a = select_atom(x, dict);
    if (a.zero_input) return 0.0;
    return x.dot(x) * (1.0 - a.cos_sq);
}

struct ResidualStep {
    Vec projection;
    Vec residual;
    Assignment assignment;
};

/// One projection/deflation step: projection = coefficient * phi_kappa,
/// residual = x - projection (orthogonal to phi_kappa up to rounding).
inline ResidualStep residual_step(const Vec& x, const Dictionary& dict) {
    Assignment a = select_atom(x, dict);
    if (a.zero_input)
        return ResidualStep{Vec::Zero(x.size()), Vec::Zero(x.size()), a};
    Vec projection = a.coefficient * dict.atom(a.atom_index).values();
    Vec residual = x - projection;
    return ResidualStep{std::move(projection), std::move(residual), a};
}

}  // namespace oja
