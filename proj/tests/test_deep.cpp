#include <catch2/catch_amalgamated.hpp>

#include <oja/oja.hpp>

#include "support/oracles.hpp"

using Catch::Approx;
using oja::Atom;
using oja::Dictionary;
using oja::DeepModel;
using oja::Mat;
using oja::Vec;

TEST_CASE("a one-layer decomposition is a residual step", "[deep]") {
    auto g = oracle::rng(401);
    const Dictionary dict = oracle::random_dictionary(g, 4, 5);
    const Vec x = oracle::random_vec(g, 5);
    const DeepModel model({dict});

    const auto trace = oja::decompose(x, model);
    const auto step = oja::residual_step(x, dict);
    REQUIRE(trace.projections.size() == 1);
    REQUIRE(trace.projections[0] == step.projection);
    REQUIRE(trace.residuals[1] == step.residual);
    REQUIRE(trace.assignments[0].atom_index == step.assignment.atom_index);
    REQUIRE(trace.energies.size() == 2);
}

TEST_CASE("a sample inside layer 1's span converges immediately", "[deep]") {
    auto g = oracle::rng(403);
    const Vec phi = oracle::random_vec(g, 4);
    const Vec x = 2.0 * phi;  // power-of-two multiple: the deflation is exact
    const DeepModel model({Dictionary({Atom(phi)}), Dictionary({Atom(oracle::random_vec(g, 4))})});

    const auto trace = oja::decompose(x, model);
    REQUIRE(trace.converged_at == 1);
    REQUIRE(trace.energies[0] == x.squaredNorm());
    REQUIRE(trace.energies[1] == 0.0);
    REQUIRE(trace.energies[2] == 0.0);
    REQUIRE(trace.assignments[1].zero_input);
    REQUIRE(trace.projections[1].isZero(0.0));
}

TEST_CASE("decomposition energies match an independent recomputation", "[deep]") {
    auto g = oracle::rng(409);
    for (int t = 0; t < 30; ++t) {
        const Eigen::Index dim = 3 + t % 6;
        const DeepModel model = oracle::random_model(g, 3, 4, dim);
        const Vec x = oracle::random_vec(g, dim);
        const auto trace = oja::decompose(x, model);

        // fresh arithmetic: rebuild the recursion longhand
        Vec r = x;
        for (std::size_t l = 0; l < 3; ++l) {
            const auto pick = oracle::brute_select(r, model.layer(l));
            REQUIRE(pick.index == trace.assignments[l].atom_index);
            r = r - pick.coefficient * model.layer(l).atom(pick.index).values();
            REQUIRE(trace.energies[l + 1] == Approx(r.squaredNorm()).epsilon(1e-12).margin(1e-30));
        }

        // product identity against the recorded cos^2 values, at every level
        double product = x.squaredNorm();
        for (std::size_t l = 0; l < trace.assignments.size(); ++l) {
            product *= 1.0 - trace.assignments[l].cos_sq;
            const double energy = trace.energies[l + 1];
            REQUIRE(std::abs(energy - product) <=
                    1e-9 * std::max({energy, product, 1e-300}));
        }
    }
}

TEST_CASE("residual energy never grows with depth", "[deep]") {
    auto g = oracle::rng(419);
    for (int t = 0; t < 20; ++t) {
        const DeepModel model = oracle::random_model(g, 4, 3, 6);
        const Vec x = oracle::random_vec(g, 6);
        const auto trace = oja::decompose(x, model);
        for (std::size_t l = 1; l < trace.energies.size(); ++l) {
            REQUIRE(trace.energies[l] <= trace.energies[l - 1] * (1.0 + 1e-12));
            if (trace.assignments[l - 1].cos_sq > 1e-12)
                REQUIRE(trace.energies[l] < trace.energies[l - 1]);
        }
    }
}

TEST_CASE("a layer orthogonal to the residual changes nothing", "[deep]") {
    Vec x(3);
    x << 1, 2, 0;
    Vec a(3), b(3);
    a << 0, 0, 5;
    b << 0, 0, -2;
    const DeepModel model({Dictionary({Atom(a), Atom(b)})});
    const auto trace = oja::decompose(x, model);
    REQUIRE(trace.residuals[1] == x);  // bitwise: the projection coefficient is exactly 0
    REQUIRE(trace.energies[1] == trace.energies[0]);
}

TEST_CASE("flatten_template sums the projections", "[deep]") {
    auto g = oracle::rng(421);

    SECTION("single layer") {
        const DeepModel model = oracle::random_model(g, 1, 3, 4);
        const Vec x = oracle::random_vec(g, 4);
        const auto trace = oja::decompose(x, model);
        REQUIRE(oja::flatten_template(trace) == trace.projections[0]);
    }
    SECTION("converged trace reproduces the input") {
        const Vec phi = oracle::random_vec(g, 4);
        const DeepModel model({Dictionary({Atom(phi)})});
        const Vec x = 0.5 * phi;
        const auto trace = oja::decompose(x, model);
        REQUIRE(trace.converged_at == 1);
        const Vec t = oja::flatten_template(trace);
        REQUIRE((x - t).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("input = template + final residual") {
        for (int t = 0; t < 30; ++t) {
            const DeepModel model = oracle::random_model(g, 3, 4, 6);
            const Vec x = oracle::random_vec(g, 6);
            const auto trace = oja::decompose(x, model);
            const Vec flattened = oja::flatten_template(trace);
            const Vec diff = x - flattened - trace.residuals.back();
            REQUIRE(diff.cwiseAbs().maxCoeff() <= 1e-10 * x.cwiseAbs().maxCoeff());
        }
    }
    SECTION("a trace with no projections flattens to zero") {
        oja::DecompositionTrace trace;
        trace.residuals.push_back(Vec::Ones(3));
        REQUIRE(oja::flatten_template(trace).isZero(0.0));
    }
}

TEST_CASE("train_deep with depth 1 is exactly shallow batch training", "[deep]") {
    auto g = oracle::rng(431);
    const Mat samples = oracle::random_mat(g, 80, 5);
    oja::TrainConfig cfg;
    cfg.k = 3;
    cfg.depth = 1;
    cfg.seed = 17;
    const auto [model, deep_report] = oja::train_deep(samples, cfg);
    const auto [dict, shallow_report] = oja::train_shallow_batch(samples, cfg);
    REQUIRE(model.depth() == 1);
    for (std::size_t k = 0; k < dict.size(); ++k)
        REQUIRE(model.layer(0).atom(k).values() == dict.atom(k).values());
    REQUIRE(deep_report.layers[0].epoch_loss == shallow_report.layers[0].epoch_loss);
}

TEST_CASE("two single-atom layers deflate rank-2 data completely", "[deep]") {
    auto g = oracle::rng(433);
    const Vec u1 = oracle::random_unit(g, 5);
    Vec u2 = oracle::random_unit(g, 5);
    u2 = (u2 - u2.dot(u1) * u1).normalized();
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat samples(150, 5);
    for (Eigen::Index n = 0; n < samples.rows(); ++n)
        samples.row(n) = (2.0 * gauss(g) * u1 + 1.0 * gauss(g) * u2).transpose();

    oja::TrainConfig cfg;
    cfg.k = 1;
    cfg.depth = 2;
    cfg.seed = 3;
    const auto [model, report] = oja::train_deep(samples, cfg);
    const double captured = report.level_energy[0] + report.level_energy[1];
    REQUIRE(captured == Approx(1.0).margin(1e-8));
    REQUIRE(std::abs(oracle::cosine(model.layer(0).atom(0).values(),
                                    model.layer(1).atom(0).values())) < 1e-8);

    // two-step PCA deflation oracle: top eigenvector, then the top of the deflated data
    const auto [top1, v1] = oracle::top_eigenvector(oracle::covariance(samples));
    REQUIRE(1.0 - std::abs(oracle::cosine(model.layer(0).atom(0).values(), top1)) < 1e-6);
    Mat deflated = samples;
    for (Eigen::Index n = 0; n < deflated.rows(); ++n) {
        const Vec x = deflated.row(n).transpose();
        deflated.row(n) = (x - x.dot(top1) * top1).transpose();
    }
    const auto [top2, v2] = oracle::top_eigenvector(oracle::covariance(deflated));
    REQUIRE(1.0 - std::abs(oracle::cosine(model.layer(1).atom(0).values(), top2)) < 1e-6);
}

TEST_CASE("per-level energies and the residual account for everything", "[deep]") {
    auto g = oracle::rng(439);
    const Mat samples = oracle::random_mat(g, 100, 6);
    oja::TrainConfig cfg;
    cfg.k = 3;
    cfg.depth = 3;
    cfg.seed = 5;
    const auto [model, report] = oja::train_deep(samples, cfg);
    double total = report.residual_energy;
    for (double e : report.level_energy) {
        REQUIRE(e >= 0.0);
        REQUIRE(e <= 1.0 + 1e-12);
        total += e;
    }
    REQUIRE(total == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("train_deep with an online rule", "[deep]") {
    const auto [samples, labels] = oja::gen_clustered_lines(200, 8, 4, 0.0, 5);
    oja::TrainConfig cfg;
    cfg.k = 4;
    cfg.depth = 2;
    cfg.rule = oja::Rule::online_oja;
    cfg.gamma = 0.05;
    cfg.max_epochs = 50;
    cfg.tol_rel_loss = 1e-12;
    cfg.seed = 7;
    const auto [model, report] = oja::train_deep(samples, cfg);
    REQUIRE(model.depth() == 2);
    double total = report.residual_energy;
    for (double e : report.level_energy) total += e;
    REQUIRE(total == Approx(1.0).epsilon(1e-9));
    REQUIRE(report.level_energy[0] > 0.99);  // layer 1 should all but solve the lines
}

TEST_CASE("the increase factor overrides the atom count", "[deep]") {
    auto g = oracle::rng(445);
    const Mat samples = oracle::random_mat(g, 60, 4);
    oja::TrainConfig cfg;
    cfg.k = 1;
    cfg.increase_factor = 1.5;  // round(1.5 * 4) = 6 atoms
    cfg.seed = 2;
    const auto [model, report] = oja::train_deep(samples, cfg);
    REQUIRE(model.layer(0).size() == 6);
}

TEST_CASE("exhausted residuals leave later layers untrained", "[deep]") {
    auto g = oracle::rng(443);
    Mat samples(3, 4);
    for (Eigen::Index n = 0; n < 3; ++n)
        samples.row(n) = oracle::random_unit(g, 4).transpose();
    oja::TrainConfig cfg;
    cfg.k = 3;  // memorizes all three samples at layer 1
    cfg.depth = 2;
    cfg.seed = 1;
    const auto [model, report] = oja::train_deep(samples, cfg);
    REQUIRE(report.layers[0].trained);
    REQUIRE_FALSE(report.layers[1].trained);
    REQUIRE(model.depth() == 2);  // the placeholder layer still exists and loads
    REQUIRE(report.level_energy[1] <= 1e-20);  // only rounding dust reaches layer 2
}

TEST_CASE("residual energy decays geometrically on trained Gaussian data", "[deep]") {
    auto g = oracle::rng(77);
    const Mat samples = oracle::random_mat(g, 600, 12);
    oja::TrainConfig cfg;
    cfg.k = 3;
    cfg.depth = 4;
    cfg.seed = 11;
    cfg.max_epochs = 30;
    const auto [model, report] = oja::train_deep(samples, cfg);

    std::vector<double> median_share(model.depth() + 1, 0.0);
    std::vector<std::vector<double>> shares(model.depth() + 1);
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const auto trace = oja::decompose(samples.row(n).transpose(), model);
        for (std::size_t l = 0; l < trace.energies.size(); ++l)
            shares[l].push_back(trace.energies[l] / trace.energies[0]);
    }
    for (std::size_t l = 0; l < shares.size(); ++l) {
        std::sort(shares[l].begin(), shares[l].end());
        median_share[l] = shares[l][shares[l].size() / 2];
    }
    for (std::size_t l = 1; l < median_share.size(); ++l)
        REQUIRE(median_share[l] < median_share[l - 1]);
    for (std::size_t l = 2; l < median_share.size(); ++l) {
        const double ratio_prev = median_share[l - 1] / median_share[l - 2];
        const double ratio = median_share[l] / median_share[l - 1];
        REQUIRE(ratio <= ratio_prev * 1.05);
    }
}

TEST_CASE("one atom per sample memorizes the training set exactly", "[deep]") {
    auto g = oracle::rng(449);
    const Mat samples = oracle::random_mat(g, 12, 6);
    std::vector<Atom> atoms;
    for (Eigen::Index n = 0; n < samples.rows(); ++n)
        atoms.emplace_back(samples.row(n).transpose());
    const DeepModel model({Dictionary(std::move(atoms))});
    const auto summary = oja::reconstruction_error(samples, model);
    REQUIRE(summary.mean == 0.0);
    REQUIRE(summary.max == 0.0);
}

TEST_CASE("fit_layer_multi_atom", "[deep]") {
    auto g = oracle::rng(457);

    SECTION("K=1 reduces to a PCA refit") {
        const Mat samples = oracle::random_mat(g, 40, 5);
        const Dictionary dict = oja::fit_layer_multi_atom(samples, 1, 3, 21);
        const auto [top, value] = oracle::top_eigenvector(oracle::covariance(samples));
        REQUIRE(1.0 - std::abs(oracle::cosine(dict.atom(0).values(), top)) < 1e-8);
    }

    SECTION("two atoms span planar data") {
        const Vec u1 = oracle::random_unit(g, 6);
        Vec u2 = oracle::random_unit(g, 6);
        u2 = (u2 - u2.dot(u1) * u1).normalized();
        std::normal_distribution<double> gauss(0.0, 1.0);
        Mat samples(80, 6);
        for (Eigen::Index n = 0; n < samples.rows(); ++n)
            samples.row(n) = (2.0 * gauss(g) * u1 + gauss(g) * u2).transpose();

        const Dictionary dict = oja::fit_layer_multi_atom(samples, 2, 3, 5);
        double total = 0.0;
        for (Eigen::Index n = 0; n < samples.rows(); ++n) {
            Vec r = samples.row(n).transpose();
            for (std::size_t k = 0; k < 2; ++k) {
                const Atom& a = dict.atom(k);
                r -= oja::project_coefficient(samples.row(n).transpose(), a) * a.values();
            }
            total += r.squaredNorm();
        }
        REQUIRE(total < 1e-8);

        // agrees with the 2-component eigensolver subspace
        Eigen::SelfAdjointEigenSolver<Mat> solver(oracle::covariance(samples));
        const Mat basis = solver.eigenvectors().rightCols(2);
        for (std::size_t k = 0; k < 2; ++k) {
            const Vec& phi = dict.atom(k).values();
            const Vec inside = basis * (basis.transpose() * phi);
            REQUIRE((phi - inside).norm() <= 1e-6 * phi.norm());
        }
    }

    SECTION("orthogonal clusters give the two cluster directions") {
        Vec e1 = Vec::Zero(4), e3 = Vec::Zero(4);
        e1[0] = 1.0;
        e3[2] = 1.0;
        std::uniform_real_distribution<double> scale(0.5, 2.0);
        Mat samples(40, 4);
        for (Eigen::Index n = 0; n < samples.rows(); ++n) {
            const double s = scale(g) * (n % 3 == 0 ? -1.0 : 1.0);
            samples.row(n) = (n % 2 == 0 ? s * e1 : s * e3).transpose();
        }
        const Dictionary dict = oja::fit_layer_multi_atom(samples, 2, 3, 9);
        double hit_e1 = 0.0, hit_e3 = 0.0;
        for (std::size_t k = 0; k < 2; ++k) {
            hit_e1 = std::max(hit_e1, std::abs(oracle::cosine(dict.atom(k).values(), e1)));
            hit_e3 = std::max(hit_e3, std::abs(oracle::cosine(dict.atom(k).values(), e3)));
        }
        REQUIRE(hit_e1 == Approx(1.0).margin(1e-10));
        REQUIRE(hit_e3 == Approx(1.0).margin(1e-10));
    }

    SECTION("per-atom deflation is orthogonal to that atom") {
        const Mat samples = oracle::random_mat(g, 30, 5);
        const Dictionary dict = oja::fit_layer_multi_atom(samples, 3, 3, 31);
        for (Eigen::Index n = 0; n < samples.rows(); ++n) {
            const Vec x = samples.row(n).transpose();
            for (std::size_t k = 0; k < dict.size(); ++k) {
                const Atom& a = dict.atom(k);
                const Vec r = x - oja::project_coefficient(x, a) * a.values();
                REQUIRE(std::abs(r.dot(a.values())) <= 1e-9 * x.norm() * a.norm());
            }
        }
    }
}
