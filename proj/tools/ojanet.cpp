// ojanet: train, encode, reconstruct and evaluate winner-take-all dictionary
// models from the command line. One JSON summary object per invocation goes
// to stdout; progress goes to stderr. Exit codes: 0 success, 1 runtime
// failure, 2 usage error.

#include <oja/oja.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using nlohmann::json;

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataOptions {
    std::string data_path;
    std::string synth_spec;
    bool csv_header = false;
    std::uint64_t seed = 0;
};

struct SynthSpec {
    std::string name;
    std::size_t n = 0;
    Eigen::Index dim = 0;
    int lines = 0;
    double noise = 0.0;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(text, &used);
        if (used != text.size()) throw usage_error("");
        return v;
    } catch (const std::exception&) {
        throw usage_error("synth spec: bad value for " + what + ": '" + text + "'");
    }
}

double parse_f64(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw usage_error("");
        return v;
    } catch (const std::exception&) {
        throw usage_error("synth spec: bad value for " + what + ": '" + text + "'");
    }
}

// Mini-grammar: name:key=val,key=val,...  Names: lines (n, dim, lines, noise,
// seed), sphere (n, dim, seed). Unknown keys are errors.
SynthSpec parse_synth_spec(const std::string& spec, std::uint64_t default_seed) {
    const std::size_t colon = spec.find(':');
    if (colon == std::string::npos)
        throw usage_error("synth spec must look like name:key=val,... (got '" + spec + "')");
    SynthSpec out;
    out.name = spec.substr(0, colon);
    out.seed = default_seed;
    if (out.name != "lines" && out.name != "sphere")
        throw usage_error("unknown synth generator '" + out.name + "' (have: lines, sphere)");

    std::size_t start = colon + 1;
    bool saw_n = false;
    bool saw_dim = false;
    bool saw_lines = false;
    while (start <= spec.size()) {
        const std::size_t comma = spec.find(',', start);
        const std::string item =
            spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw usage_error("synth spec: expected key=val, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        if (key == "n") {
            out.n = parse_u64(val, "n");
            saw_n = true;
        } else if (key == "dim") {
            out.dim = static_cast<Eigen::Index>(parse_u64(val, "dim"));
            saw_dim = true;
        } else if (key == "seed") {
            out.seed = parse_u64(val, "seed");
            out.seed_given = true;
        } else if (key == "lines" && out.name == "lines") {
            out.lines = static_cast<int>(parse_u64(val, "lines"));
            saw_lines = true;
        } else if (key == "noise" && out.name == "lines") {
            out.noise = parse_f64(val, "noise");
        } else {
            throw usage_error("synth spec: unknown key '" + key + "' for generator '" +
                              out.name + "'");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (!saw_n || !saw_dim)
        throw usage_error("synth spec: keys n and dim are required");
    if (out.name == "lines" && !saw_lines)
        throw usage_error("synth spec: generator 'lines' needs key lines");
    return out;
}

bool looks_like_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    unsigned char head[4] = {0, 0, 0, 0};
    in.read(reinterpret_cast<char*>(head), 4);
    return in.gcount() == 4 && head[0] == 0 && head[1] == 0 && head[2] == 8;
}

/// Dataset from --data or --synth; exactly one must be present.
std::pair<oja::Mat, std::string> load_dataset(const DataOptions& opts) {
    const bool have_file = !opts.data_path.empty();
    const bool have_synth = !opts.synth_spec.empty();
    if (have_file == have_synth)
        throw usage_error("give exactly one of --data and --synth");
    if (have_file) {
        if (looks_like_idx(opts.data_path))
            return {oja::load_idx(opts.data_path).first, "idx:" + opts.data_path};
        return {oja::load_csv(opts.data_path, opts.csv_header).first, "csv:" + opts.data_path};
    }
    const SynthSpec spec = parse_synth_spec(opts.synth_spec, opts.seed);
    if (spec.name == "sphere")
        return {oja::gen_uniform_sphere(spec.n, spec.dim, spec.seed), "synth:" + opts.synth_spec};
    return {oja::gen_clustered_lines(spec.n, spec.dim, spec.lines, spec.noise, spec.seed).first,
            "synth:" + opts.synth_spec};
}

void write_train_metrics(const std::string& path, const oja::TrainReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw oja::io_error("cannot write '" + path + "'");
    out << "layer,epoch,loss\n";
    for (std::size_t l = 0; l < report.layers.size(); ++l)
        for (std::size_t e = 0; e < report.layers[l].epoch_loss.size(); ++e)
            out << l << ',' << e << ','
                << oja::detail::format_double(report.layers[l].epoch_loss[e]) << '\n';
    if (!out) throw oja::io_error("write failed for '" + path + "'");
}

void write_energy_csv(const std::string& path, const oja::EnergyProfile& profile) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw oja::io_error("cannot write '" + path + "'");
    out << "level,share\n";
    for (std::size_t l = 0; l < profile.per_level.size(); ++l)
        out << (l + 1) << ',' << oja::detail::format_double(profile.per_level[l]) << '\n';
    out << "residual," << oja::detail::format_double(profile.residual) << '\n';
    if (!out) throw oja::io_error("write failed for '" + path + "'");
}

struct TrainArgs {
    DataOptions data;
    int k = 0;
    int depth = 1;
    std::string rule = "batch";
    double gamma = 0.01;
    int epochs = 100;
    double tol = 1e-8;
    std::string out;
    std::string metrics;
};

oja::Rule rule_from_flag(const std::string& flag) {
    if (flag == "batch") return oja::Rule::batch_pca;
    if (flag == "lambda1") return oja::Rule::online_lambda1;
    if (flag == "lambda2") return oja::Rule::online_lambda2;
    if (flag == "oja") return oja::Rule::online_oja;
    throw usage_error("unknown rule '" + flag + "'");
}

int run_train(const TrainArgs& args) {
    const auto [samples, source] = load_dataset(args.data);

    oja::TrainConfig cfg;
    cfg.k = args.k;
    cfg.depth = args.depth;
    cfg.rule = rule_from_flag(args.rule);
    cfg.gamma = args.gamma;
    cfg.max_epochs = args.epochs;
    cfg.tol_rel_loss = args.tol;
    cfg.seed = args.data.seed;

    std::cerr << "training on " << samples.rows() << " samples (dim " << samples.cols()
              << "), k=" << cfg.k << ", depth=" << cfg.depth << ", rule=" << args.rule << "\n";
    const auto [model, report] = oja::train_deep(samples, cfg);
    for (std::size_t l = 0; l < report.layers.size(); ++l) {
        const auto& layer = report.layers[l];
        if (!layer.trained)
            std::cerr << "layer " << (l + 1) << ": left untrained (residuals exhausted)\n";
        else
            std::cerr << "layer " << (l + 1) << ": " << (layer.epoch_loss.size() - 1)
                      << " epochs, loss " << layer.epoch_loss.back()
                      << (layer.converged ? "" : " (epoch budget hit)") << "\n";
    }

    oja::save_model(model, args.out);
    if (!args.metrics.empty()) write_train_metrics(args.metrics, report);

    const oja::ErrorSummary err = oja::reconstruction_error(samples, model);
    json summary;
    summary["command"] = "train";
    summary["source"] = source;
    summary["n"] = samples.rows();
    summary["dim"] = samples.cols();
    summary["k"] = cfg.k;
    summary["depth"] = cfg.depth;
    summary["rule"] = args.rule;
    summary["seed"] = cfg.seed;
    json epochs = json::array();
    json layer_loss = json::array();
    json layer_trained = json::array();
    for (const auto& layer : report.layers) {
        epochs.push_back(layer.epoch_loss.empty() ? 0 : layer.epoch_loss.size() - 1);
        layer_loss.push_back(layer.epoch_loss.empty() ? 0.0 : layer.epoch_loss.back());
        layer_trained.push_back(layer.trained);
    }
    summary["epochs_per_layer"] = epochs;
    summary["layer_final_loss"] = layer_loss;
    summary["layer_trained"] = layer_trained;
    summary["final_loss"] = err.mean;
    summary["relative_error"] = err.relative;
    summary["level_energy"] = report.level_energy;
    summary["residual_energy"] = report.residual_energy;
    summary["model"] = args.out;
    if (!args.metrics.empty()) summary["metrics"] = args.metrics;
    std::cout << summary.dump() << "\n";
    return 0;
}

struct EncodeArgs {
    DataOptions data;
    std::string model;
    std::string out;
};

int run_encode(const EncodeArgs& args) {
    const oja::DeepModel model = oja::load_model(args.model);
    oja::Mat samples(0, model.dim());
    std::string source = "empty";
    try {
        auto loaded = load_dataset(args.data);
        samples = std::move(loaded.first);
        source = std::move(loaded.second);
    } catch (const oja::empty_dataset_error&) {
        // empty input is legal here: emit an empty code file
    }
    if (samples.rows() > 0 && samples.cols() != model.dim())
        throw oja::precondition_error("encode: data dimension " + std::to_string(samples.cols()) +
                                      " does not match model dimension " +
                                      std::to_string(model.dim()));

    std::ofstream out(args.out, std::ios::trunc);
    if (!out) throw oja::io_error("cannot write '" + args.out + "'");
    for (Eigen::Index n = 0; n < samples.rows(); ++n) {
        const oja::DecompositionTrace trace = oja::decompose(samples.row(n).transpose(), model);
        for (std::size_t l = 0; l < trace.assignments.size(); ++l) {
            if (l) out << ',';
            out << trace.assignments[l].atom_index << ','
                << oja::detail::format_double(trace.assignments[l].coefficient);
        }
        out << '\n';
    }
    if (!out) throw oja::io_error("write failed for '" + args.out + "'");

    json summary;
    summary["command"] = "encode";
    summary["source"] = source;
    summary["n"] = samples.rows();
    summary["depth"] = model.depth();
    summary["out"] = args.out;
    std::cout << summary.dump() << "\n";
    return 0;
}

struct ReconstructArgs {
    std::string model;
    std::string codes;
    std::string out;
};

int run_reconstruct(const ReconstructArgs& args) {
    const oja::DeepModel model = oja::load_model(args.model);
    const std::size_t depth = model.depth();

    std::ifstream in(args.codes);
    if (!in) throw oja::io_error("cannot open '" + args.codes + "'");
    std::ofstream out(args.out, std::ios::trunc);
    if (!out) throw oja::io_error("cannot write '" + args.out + "'");

    std::string line;
    std::size_t line_no = 0;
    std::size_t written = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::vector<std::string> tokens;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            tokens.push_back(line.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (tokens.size() != 2 * depth)
            throw oja::parse_error("codes row " + std::to_string(line_no) + " has " +
                                   std::to_string(tokens.size()) + " values, expected " +
                                   std::to_string(2 * depth));

        // rebuild the per-layer projections, then flatten exactly as decompose would
        oja::DecompositionTrace trace;
        trace.residuals.push_back(oja::Vec::Zero(model.dim()));
        for (std::size_t l = 0; l < depth; ++l) {
            std::size_t used = 0;
            std::size_t index = 0;
            try {
                index = std::stoull(tokens[2 * l], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tokens[2 * l].size() || index >= model.layer(l).size())
                throw oja::parse_error("codes row " + std::to_string(line_no) +
                                       ": bad atom index '" + tokens[2 * l] + "' for layer " +
                                       std::to_string(l + 1));
            const double coeff =
                oja::detail::parse_double_token(tokens[2 * l + 1], line_no, 2 * l + 2);
            oja::Vec projection = coeff * model.layer(l).atom(index).values();
            trace.projections.push_back(std::move(projection));
        }
        const oja::Vec t = oja::flatten_template(trace);
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            if (i) out << ',';
            out << oja::detail::format_double(t[i]);
        }
        out << '\n';
        ++written;
    }
    if (!out) throw oja::io_error("write failed for '" + args.out + "'");

    json summary;
    summary["command"] = "reconstruct";
    summary["n"] = written;
    summary["out"] = args.out;
    std::cout << summary.dump() << "\n";
    return 0;
}

struct EvalArgs {
    DataOptions data;
    std::string model;
    std::string energy_csv;
    bool gradcheck = false;
};

int run_eval(const EvalArgs& args) {
    const oja::DeepModel model = oja::load_model(args.model);
    const auto [samples, source] = load_dataset(args.data);
    if (samples.cols() != model.dim())
        throw oja::precondition_error("eval: data dimension " + std::to_string(samples.cols()) +
                                      " does not match model dimension " +
                                      std::to_string(model.dim()));

    const oja::ErrorSummary err = oja::reconstruction_error(samples, model);
    const oja::EnergyProfile profile = oja::energy_per_level(samples, model);
    if (!args.energy_csv.empty()) write_energy_csv(args.energy_csv, profile);

    json summary;
    summary["command"] = "eval";
    summary["source"] = source;
    summary["n"] = samples.rows();
    summary["dim"] = samples.cols();
    summary["error"] = {{"mean", err.mean},
                        {"median", err.median},
                        {"max", err.max},
                        {"relative", err.relative}};
    summary["energy_per_level"] = profile.per_level;
    summary["residual_share"] = profile.residual;
    if (!args.energy_csv.empty()) summary["energy_csv"] = args.energy_csv;

    if (args.gradcheck) {
        const Eigen::Index limit = std::min<Eigen::Index>(samples.rows(), 20);
        double worst = 0.0;
        for (Eigen::Index n = 0; n < limit; ++n)
            worst = std::max(worst, oja::gradient_check(samples.row(n).transpose(), model));
        summary["gradcheck_max_rel_err"] = worst;
        std::cerr << "gradcheck over " << limit << " samples: max rel err " << worst << "\n";
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

}  // namespace

namespace {

int dispatch(int argc, char** argv) {
    CLI::App app{"dictionary learning with winner-take-all atom selection"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "learn a model and write it to disk");
    train->add_option("--data", train_args.data.data_path, "CSV or IDX dataset path");
    train->add_option("--synth", train_args.data.synth_spec,
                      "synthetic dataset spec, e.g. lines:n=1000,dim=8,lines=4");
    train->add_flag("--csv-header", train_args.data.csv_header, "skip one CSV header row");
    train->add_option("--k", train_args.k, "atoms per layer")->required();
    train->add_option("--depth", train_args.depth, "number of residual levels");
    train->add_option("--rule", train_args.rule, "batch | lambda1 | lambda2 | oja")
        ->check(CLI::IsMember({"batch", "lambda1", "lambda2", "oja"}));
    train->add_option("--gamma", train_args.gamma, "oja learning rate");
    train->add_option("--epochs", train_args.epochs, "epoch budget per layer");
    train->add_option("--tol", train_args.tol, "relative loss-change stop tolerance");
    train->add_option("--seed", train_args.data.seed, "seed for data generation and training");
    train->add_option("--out", train_args.out, "output model path")->required();
    train->add_option("--metrics", train_args.metrics, "per-epoch loss CSV path");

    EncodeArgs encode_args;
    CLI::App* encode = app.add_subcommand("encode", "write per-sample (atom, coefficient) codes");
    encode->add_option("--model", encode_args.model, "model path")->required();
    encode->add_option("--data", encode_args.data.data_path, "CSV or IDX dataset path");
    encode->add_option("--synth", encode_args.data.synth_spec, "synthetic dataset spec");
    encode->add_flag("--csv-header", encode_args.data.csv_header, "skip one CSV header row");
    encode->add_option("--seed", encode_args.data.seed, "seed for synthetic data");
    encode->add_option("--out", encode_args.out, "output codes CSV path")->required();

    ReconstructArgs rec_args;
    CLI::App* rec = app.add_subcommand("reconstruct", "rebuild vectors from codes and a model");
    rec->add_option("--model", rec_args.model, "model path")->required();
    rec->add_option("--codes", rec_args.codes, "codes CSV path")->required();
    rec->add_option("--out", rec_args.out, "output CSV path")->required();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "reconstruction error and per-level energy");
    eval->add_option("--model", eval_args.model, "model path")->required();
    eval->add_option("--data", eval_args.data.data_path, "CSV or IDX dataset path");
    eval->add_option("--synth", eval_args.data.synth_spec, "synthetic dataset spec");
    eval->add_flag("--csv-header", eval_args.data.csv_header, "skip one CSV header row");
    eval->add_option("--seed", eval_args.data.seed, "seed for synthetic data");
    eval->add_option("--energy", eval_args.energy_csv, "per-level energy CSV path");
    eval->add_flag("--gradcheck", eval_args.gradcheck,
                   "compare analytic gradients against finite differences");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) return run_train(train_args);
        if (encode->parsed()) return run_encode(encode_args);
        if (rec->parsed()) return run_reconstruct(rec_args);
        if (eval->parsed()) return run_eval(eval_args);
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const oja::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (...) {
        std::cerr << "error: unexpected failure\n";
        return 1;
    }
}
