#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oja {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // datasets are row-major in spirit: one sample per row, N x D

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Contract violation by the caller (dimension mismatch, bad configuration).
struct precondition_error : error {
    using error::error;
};
/// Malformed textual or binary input.
struct parse_error : error {
    using error::error;
};
/// Filesystem-level failure, truncation or checksum mismatch.
struct io_error : error {
    using error::error;
};
struct empty_dataset_error : error {
    using error::error;
};

/// One dictionary element. The squared norm is cached at construction with the
/// same dot-product kernel used everywhere else, so a sample compared against
/// an atom holding identical values yields a projection coefficient of exactly 1.
class Atom {
public:
    explicit Atom(Vec values)
        : values_(std::move(values)), squared_norm_(values_.dot(values_)) {
        if (values_.size() == 0)
            throw precondition_error("Atom: empty vector");
        if (!(squared_norm_ > 0.0))
            throw precondition_error("Atom: zero atom is forbidden");
    }

    const Vec& values() const noexcept { return values_; }
    double squared_norm() const noexcept { return squared_norm_; }
    double norm() const noexcept { return std::sqrt(squared_norm_); }
    Eigen::Index dim() const noexcept { return values_.size(); }

private:
    Vec values_;
    double squared_norm_;
};

/// Ordered set of atoms sharing one ambient dimension.
class Dictionary {
public:
    explicit Dictionary(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
        if (atoms_.empty())
            throw precondition_error("Dictionary: needs at least one atom");
        for (const Atom& a : atoms_)
            if (a.dim() != atoms_.front().dim())
                throw precondition_error("Dictionary: atoms of mixed dimension");
    }

    Eigen::Index dim() const noexcept { return atoms_.front().dim(); }
    std::size_t size() const noexcept { return atoms_.size(); }
    const Atom& atom(std::size_t k) const { return atoms_.at(k); }
    const std::vector<Atom>& atoms() const noexcept { return atoms_; }

    void set_atom(std::size_t k, Atom a) {
        if (a.dim() != dim())
            throw precondition_error("Dictionary: atom dimension mismatch");
        atoms_.at(k) = std::move(a);
    }

private:
    std::vector<Atom> atoms_;
};

enum class Rule { batch_pca, online_lambda1, online_lambda2, online_oja };

inline std::string to_string(Rule rule) {
    switch (rule) {
        case Rule::batch_pca: return "batch_pca";
        case Rule::online_lambda1: return "online_lambda1";
        case Rule::online_lambda2: return "online_lambda2";
        case Rule::online_oja: return "online_oja";
    }
    throw precondition_error("Rule: unknown value");
}

inline Rule rule_from_string(const std::string& name) {
    if (name == "batch_pca") return Rule::batch_pca;
    if (name == "online_lambda1") return Rule::online_lambda1;
    if (name == "online_lambda2") return Rule::online_lambda2;
    if (name == "online_oja") return Rule::online_oja;
    throw parse_error("Rule: unknown name '" + name + "'");
}

struct TrainConfig {
    int k = 1;                     // atoms per layer
    double increase_factor = 0.0;  // when > 0, overrides k with round(F * dim)
    int depth = 1;
    Rule rule = Rule::batch_pca;
    double gamma = 0.01;           // online_oja step size
    int max_epochs = 100;
    double tol_rel_loss = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw precondition_error("TrainConfig: k must be >= 1");
        if (depth < 1) throw precondition_error("TrainConfig: depth must be >= 1");
        if (max_epochs < 1) throw precondition_error("TrainConfig: max_epochs must be >= 1");
        if (!(tol_rel_loss > 0.0)) throw precondition_error("TrainConfig: tol_rel_loss must be > 0");
        if (increase_factor < 0.0) throw precondition_error("TrainConfig: increase_factor must be >= 0");
        if (rule == Rule::online_oja && !(gamma > 0.0))
            throw precondition_error("TrainConfig: gamma must be > 0 for the online_oja rule");
    }

    /// Effective atom count for a given ambient dimension.
    int atoms_for(Eigen::Index dim) const {
        if (increase_factor > 0.0)
            return std::max(1, static_cast<int>(std::lround(increase_factor * static_cast<double>(dim))));
        return k;
    }
};

/// Stack of per-level dictionaries applied to successive residuals.
class DeepModel {
public:
    explicit DeepModel(std::vector<Dictionary> layers, TrainConfig config = {})
        : layers_(std::move(layers)), config_(config) {
        if (layers_.empty())
            throw precondition_error("DeepModel: needs at least one layer");
        for (const Dictionary& d : layers_)
            if (d.dim() != layers_.front().dim())
                throw precondition_error("DeepModel: layers of mixed dimension");
    }

    Eigen::Index dim() const noexcept { return layers_.front().dim(); }
    std::size_t depth() const noexcept { return layers_.size(); }
    const Dictionary& layer(std::size_t l) const { return layers_.at(l); }
    const std::vector<Dictionary>& layers() const noexcept { return layers_; }
    const TrainConfig& config() const noexcept { return config_; }

    void set_atom(std::size_t layer, std::size_t k, Atom a) { layers_.at(layer).set_atom(k, std::move(a)); }

private:
    std::vector<Dictionary> layers_;
    TrainConfig config_;
};

/// Winner-take-all pick for one sample: selected atom, its projection
/// coefficient <x,phi>/||phi||^2 and the squared cosine of the pair.
struct Assignment {
    std::size_t atom_index = 0;
    double coefficient = 0.0;
    double cos_sq = 0.0;
    bool zero_input = false;  // input had no energy; the other fields are placeholders
};

/// Per-sample record of one full pass through a DeepModel.
/// residuals holds R(0..L) with R(0) = input; projections holds P(1..L);
/// energies[l] = ||R(l)||^2.
struct DecompositionTrace {
    std::vector<Vec> projections;
    std::vector<Vec> residuals;
    std::vector<Assignment> assignments;
    std::vector<double> energies;
    int converged_at = -1;  // first level with an exactly zero residual, -1 if none
};

struct LayerReport {
    std::vector<double> epoch_loss;  // mean error per epoch; entry 0 is the pre-update loss
    bool converged = false;          // relative-loss tolerance reached before max_epochs
    bool trained = true;             // false when the layer was left at its initialization
    int degenerate_updates = 0;      // online updates skipped by a rule guard
};

struct TrainReport {
    std::vector<LayerReport> layers;
    std::vector<double> level_energy;  // fraction of total input energy captured per level
    double residual_energy = 0.0;      // fraction left after the last level
};

/// Projection coefficient <x, atom> / ||atom||^2.
inline double project_coefficient(const Vec& x, const Atom& atom) {
    if (x.size() != atom.dim())
        throw precondition_error("project_coefficient: dimension mismatch");
    return x.dot(atom.values()) / atom.squared_norm();
}

/// Reconstruction through a complete orthogonal basis (K == D, pairwise
/// orthogonal atoms): sum_k <x,phi_k>/||phi_k||^2 phi_k. The orthogonality
/// precondition is checked, scaled by the atom norms.
inline Vec reconstruct_complete(const Vec& x, const Dictionary& basis) {
    if (x.size() != basis.dim())
        throw precondition_error("reconstruct_complete: dimension mismatch");
    if (static_cast<Eigen::Index>(basis.size()) != basis.dim())
        throw precondition_error("reconstruct_complete: basis must have exactly D atoms");
    for (std::size_t j = 0; j < basis.size(); ++j)
        for (std::size_t k = j + 1; k < basis.size(); ++k) {
            const Atom& a = basis.atom(j);
            const Atom& b = basis.atom(k);
            if (std::abs(a.values().dot(b.values())) > 1e-10 * a.norm() * b.norm())
                throw precondition_error("reconstruct_complete: basis is not orthogonal");
        }
    Vec out = Vec::Zero(x.size());
    for (const Atom& a : basis.atoms())
        out += project_coefficient(x, a) * a.values();
    return out;
}

}  // namespace oja
