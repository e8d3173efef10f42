#pragma once

#include "oja/selection.hpp"

#include <algorithm>
#include <iterator>
#include <optional>
#include <random>
#include <utility>

namespace oja {

/// Cluster membership n(k) for one assignment pass over a sample matrix.
struct ClusterIndex {
    std::vector<std::vector<std::size_t>> members;  // sample indices per atom
    std::vector<Assignment> assignments;            // aligned with the sample rows
};

inline ClusterIndex assign_all(const Mat& samples, const Dictionary& dict) {
    if (samples.cols() != dict.dim())
        throw precondition_error("assign_all: dimension mismatch");
    ClusterIndex index;
    index.members.resize(dict.size());
    index.assignments.reserve(static_cast<std::size_t>(samples.rows()));
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const Vec x = samples.row(n).transpose();
        Assignment a = select_atom(x, dict);
        // zero-energy samples land in cluster 0, flagged
        index.members[a.atom_index].push_back(static_cast<std::size_t>(n));
        index.assignments.push_back(a);
    }
    return index;
}

/// Outcome of one lambda-rule atom update. `atom` is empty when the cluster
/// was degenerate for the rule; `skipped` counts members dropped by a guard.
struct AtomUpdate {
    std::optional<Atom> atom;
    int skipped = 0;
};

/// Leading eigenvector of the cluster covariance X^T X / card, by power
/// iteration warm-started from the current atom (at most 500 iterations,
/// stop once successive directions have cosine > 1 - 1e-12). The returned
/// atom is unit norm and its Rayleigh quotient never falls below the
/// incoming atom's.
inline Atom update_atom_pca(const Mat& cluster, const Atom& atom) {
    if (cluster.rows() == 0)
        throw precondition_error("update_atom_pca: empty cluster");
    if (cluster.cols() != atom.dim())
        throw precondition_error("update_atom_pca: dimension mismatch");
    const Mat cov = cluster.transpose() * cluster / static_cast<double>(cluster.rows());
    Vec v = atom.values() / atom.norm();
    for (int it = 0; it < 500; ++it) {
        Vec w = cov * v;
        const double wn = w.norm();
        if (wn == 0.0) {
            // warm start sits in the null space; restart from the strongest member
            Eigen::Index r = 0;
            const double m = cluster.rowwise().squaredNorm().maxCoeff(&r);
            if (m == 0.0) break;  // cluster holds only zero samples
            v = cluster.row(r).transpose() / std::sqrt(m);
            continue;
        }
        w /= wn;
        const double c = v.dot(w);
        v = std::move(w);
        if (c > 1.0 - 1e-12) break;
    }
    return Atom(std::move(v));
}

/// Adaptive-step update phi <- phi - (1/sum w_n) sum w_n (alpha_n phi - x_n)
/// with w_n = cos^2(x_n, phi). Degenerate when the weights vanish.
inline AtomUpdate update_atom_lambda1(const Mat& cluster, const Atom& atom) {
    if (cluster.cols() != atom.dim())
        throw precondition_error("update_atom_lambda1: dimension mismatch");
    const Vec& phi = atom.values();
    const double phi_sq = atom.squared_norm();
    Vec delta = Vec::Zero(atom.dim());
    double weight_sum = 0.0;
    int skipped = 0;
    for (Eigen::Index n = 0; n < cluster.rows(); ++n) {
        const Vec x = cluster.row(n).transpose();
        const double x_sq = x.dot(x);
        if (x_sq == 0.0) {
            ++skipped;
            continue;
        }
        const double d = x.dot(phi);
        const double w = d * d / (x_sq * phi_sq);
        delta += w * ((d / phi_sq) * phi - x);
        weight_sum += w;
    }
    if (weight_sum < 1e-12)
        return {std::nullopt, skipped};
    Vec next = phi - delta / weight_sum;
    if (!(next.squaredNorm() >= 1e-24))
        return {std::nullopt, skipped};
    return {Atom(std::move(next)), skipped};
}

/// Replacement update phi <- mean over used members of (||phi||^2/<x_n,phi>) x_n.
/// Members nearly orthogonal to phi are skipped (the coefficient diverges).
inline AtomUpdate update_atom_lambda2(const Mat& cluster, const Atom& atom) {
    if (cluster.cols() != atom.dim())
        throw precondition_error("update_atom_lambda2: dimension mismatch");
    const Vec& phi = atom.values();
    const double phi_sq = atom.squared_norm();
    const double phi_n = atom.norm();
    Vec acc = Vec::Zero(atom.dim());
    int used = 0;
    int skipped = 0;
    for (Eigen::Index n = 0; n < cluster.rows(); ++n) {
        const Vec x = cluster.row(n).transpose();
        const double xn = x.norm();
        const double d = x.dot(phi);
        if (xn == 0.0 || std::abs(d) < 1e-12 * xn * phi_n) {
            ++skipped;
            continue;
        }
        acc += (phi_sq / d) * x;
        ++used;
    }
    if (used == 0)
        return {std::nullopt, skipped};
    Vec next = acc / static_cast<double>(used);
    if (!(next.squaredNorm() >= 1e-24))
        return {std::nullopt, skipped};
    return {Atom(std::move(next)), skipped};
}

/// Oja step phi <- phi + gamma (alpha x - alpha^2 phi), alpha = <x,phi>/||phi||^2.
inline Atom update_atom_oja(const Vec& x, const Atom& atom, double gamma) {
    if (x.size() != atom.dim())
        throw precondition_error("update_atom_oja: dimension mismatch");
    if (!(gamma > 0.0))
        throw precondition_error("update_atom_oja: gamma must be > 0");
    const double alpha = x.dot(atom.values()) / atom.squared_norm();
    Vec next = atom.values() + gamma * (alpha * x - (alpha * alpha) * atom.values());
    return Atom(std::move(next));
}

/// Dictionary of `k` distinct dataset rows drawn uniformly without
/// replacement among the rows with nonzero norm.
inline Dictionary init_from_samples(const Mat& samples, int k, std::mt19937_64& rng) {
    if (k < 1) throw precondition_error("init_from_samples: k must be >= 1");
    std::vector<std::size_t> candidates;
    for (Eigen::Index n = 0; n < samples.rows(); ++n)
        if (samples.row(n).squaredNorm() > 0.0)
            candidates.push_back(static_cast<std::size_t>(n));
    if (static_cast<int>(candidates.size()) < k)
        throw precondition_error("init_from_samples: fewer nonzero samples than atoms");
    std::vector<std::size_t> picks;
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(picks),
                static_cast<std::size_t>(k), rng);
    std::vector<Atom> atoms;
    atoms.reserve(picks.size());
    for (std::size_t n : picks)
        atoms.emplace_back(samples.row(static_cast<Eigen::Index>(n)).transpose());
    return Dictionary(std::move(atoms));
}

namespace detail {

inline Mat rows_subset(const Mat& m, const std::vector<std::size_t>& idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

inline double mean_shallow_error(const Mat& samples, const Dictionary& dict) {
    if (samples.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index n = 0; n < samples.rows(); ++n)
        total += shallow_error(samples.row(n).transpose(), dict);
    return total / static_cast<double>(samples.rows());
}

/// Index of the nonzero sample with the largest current error, if any.
inline std::optional<std::size_t> farthest_sample(const Mat& samples, const Dictionary& dict) {
    std::optional<std::size_t> best;
    double best_err = 0.0;
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const Vec x = samples.row(n).transpose();
        if (x.squaredNorm() == 0.0) continue;
        const double e = shallow_error(x, dict);
        if (!best || e > best_err) {
            best = static_cast<std::size_t>(n);
            best_err = e;
        }
    }
    if (best && best_err == 0.0) return std::nullopt;  // nothing is badly represented
    return best;
}

inline bool relative_converged(double prev, double next, double tol) {
    if (prev == 0.0) return true;
    return std::abs(prev - next) / prev < tol;
}

/// Captured/residual energy bookkeeping shared by the shallow trainers.
inline void fill_single_level_energy(const Mat& samples, const Dictionary& dict, TrainReport& report) {
    double total = 0.0;
    double captured = 0.0;
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const Vec x = samples.row(n).transpose();
        total += x.squaredNorm();
        const ResidualStep s = residual_step(x, dict);
        captured += s.projection.squaredNorm();
    }
    if (total > 0.0) {
        report.level_energy = {captured / total};
        report.residual_energy = 1.0 - captured / total;
    } else {
        report.level_energy = {0.0};
        report.residual_energy = 0.0;
    }
}

/// Collinear twin atoms are redundant under scale-invariant selection. In
/// exact arithmetic every shared sample would tie and drain toward the lower
/// index, emptying the twin; rounding jitter splits those ties instead, so
/// the empty-cluster restart would never fire. Detect twins directly and
/// apply the same farthest-point restart.
inline void restart_duplicate_atoms(const Mat& samples, Dictionary& dict) {
    for (std::size_t j = 0; j < dict.size(); ++j)
        for (std::size_t i = 0; i < j; ++i) {
            const Atom& a = dict.atom(i);
            const Atom& b = dict.atom(j);
            const double c = std::abs(a.values().dot(b.values())) / (a.norm() * b.norm());
            if (c >= 1.0 - 1e-14) {
                if (auto n = farthest_sample(samples, dict))
                    dict.set_atom(j, Atom(samples.row(static_cast<Eigen::Index>(*n)).transpose()));
                break;
            }
        }
}

inline std::pair<Dictionary, LayerReport> train_shallow_batch_impl(const Mat& samples,
                                                                   const TrainConfig& cfg,
                                                                   std::mt19937_64& rng) {
    cfg.validate();
    const int k = cfg.atoms_for(samples.cols());
    if (samples.rows() < k)
        throw precondition_error("train_shallow_batch: need at least K samples");
    Dictionary dict = init_from_samples(samples, k, rng);

    LayerReport report;
    double prev = mean_shallow_error(samples, dict);
    report.epoch_loss.push_back(prev);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const ClusterIndex clusters = assign_all(samples, dict);
        for (std::size_t j = 0; j < dict.size(); ++j) {
            if (clusters.members[j].empty()) {
                // dead atom: restart it at the worst-represented sample
                if (auto n = farthest_sample(samples, dict))
                    dict.set_atom(j, Atom(samples.row(static_cast<Eigen::Index>(*n)).transpose()));
                continue;
            }
            const Mat cluster = rows_subset(samples, clusters.members[j]);
            dict.set_atom(j, update_atom_pca(cluster, dict.atom(j)));
        }
        restart_duplicate_atoms(samples, dict);
        const double loss = mean_shallow_error(samples, dict);
        report.epoch_loss.push_back(loss);
        const bool done = relative_converged(prev, loss, cfg.tol_rel_loss);
        prev = loss;
        if (done) {
            report.converged = true;
            break;
        }
    }
    return {std::move(dict), std::move(report)};
}

inline std::pair<Dictionary, LayerReport> train_shallow_online_impl(const Mat& samples,
                                                                    const TrainConfig& cfg,
                                                                    std::mt19937_64& rng) {
    cfg.validate();
    if (cfg.rule == Rule::batch_pca)
        throw precondition_error("train_shallow_online: pick an online rule");
    const int k = cfg.atoms_for(samples.cols());
    if (samples.rows() < k)
        throw precondition_error("train_shallow_online: need at least K samples");
    Dictionary dict = init_from_samples(samples, k, rng);

    std::vector<std::size_t> order(static_cast<std::size_t>(samples.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    LayerReport report;
    double prev = mean_shallow_error(samples, dict);
    report.epoch_loss.push_back(prev);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t n : order) {
            const Vec x = samples.row(static_cast<Eigen::Index>(n)).transpose();
            const Assignment a = select_atom(x, dict);
            if (a.zero_input) continue;
            const std::size_t j = a.atom_index;
            try {
                std::optional<Atom> next;
                if (cfg.rule == Rule::online_oja) {
                    next = update_atom_oja(x, dict.atom(j), cfg.gamma);
                } else {
                    Mat one(1, samples.cols());
                    one.row(0) = x.transpose();
                    AtomUpdate u = (cfg.rule == Rule::online_lambda1)
                                       ? update_atom_lambda1(one, dict.atom(j))
                                       : update_atom_lambda2(one, dict.atom(j));
                    next = std::move(u.atom);
                }
                if (!next) {
                    ++report.degenerate_updates;
                    continue;
                }
                // selection is scale-invariant; keep online atoms on the sphere
                dict.set_atom(j, Atom(next->values() / next->norm()));
            } catch (const precondition_error&) {
                ++report.degenerate_updates;  // degenerate step, atom left unchanged
            }
        }
        restart_duplicate_atoms(samples, dict);
        const double loss = mean_shallow_error(samples, dict);
        report.epoch_loss.push_back(loss);
        const bool done = relative_converged(prev, loss, cfg.tol_rel_loss);
        prev = loss;
        if (done) {
            report.converged = true;
            break;
        }
    }
    return {std::move(dict), std::move(report)};
}

}  // namespace detail

/// Alternating batch training: assign every sample to its best atom, then
/// replace each atom by the leading eigenvector of its cluster. The reported
/// mean loss is non-increasing across epochs.
inline std::pair<Dictionary, TrainReport> train_shallow_batch(const Mat& samples, const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    auto [dict, layer] = detail::train_shallow_batch_impl(samples, cfg, rng);
    TrainReport report;
    report.layers.push_back(std::move(layer));
    detail::fill_single_level_energy(samples, dict, report);
    return {std::move(dict), std::move(report)};
}

/// Online training: per epoch, sweep the samples in seeded shuffled order and
/// update only the selected atom with the configured rule.
inline std::pair<Dictionary, TrainReport> train_shallow_online(const Mat& samples, const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    auto [dict, layer] = detail::train_shallow_online_impl(samples, cfg, rng);
    TrainReport report;
    report.layers.push_back(std::move(layer));
    detail::fill_single_level_energy(samples, dict, report);
    return {std::move(dict), std::move(report)};
}

}  // namespace oja
