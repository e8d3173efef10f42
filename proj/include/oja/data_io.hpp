#pragma once

#include "oja/core.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace oja {

enum class Normalization { none, unit_norm, center };

struct DatasetMeta {
    std::size_t n_samples = 0;
    Eigen::Index dim = 0;
    std::string source;
    Normalization normalization = Normalization::none;
};

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

inline double parse_double_token(const std::string& token, std::size_t row, std::size_t col) {
    const char* begin = token.c_str();
    char* end = nullptr;
    errno = 0;
    const double value = std::strtod(begin, &end);
    if (end == begin || static_cast<std::size_t>(end - begin) != token.size())
        throw parse_error("row " + std::to_string(row) + ", column " + std::to_string(col) +
                          ": not a number: '" + token + "'");
    return value;
}

inline std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little)
        return v;
    else
        return __builtin_bswap64(v);
}

inline void append_double_le(std::string& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    bits = to_little_endian(bits);
    char raw[sizeof bits];
    std::memcpy(raw, &bits, sizeof bits);
    out.append(raw, sizeof bits);
}

inline double read_double_le(const unsigned char* p) {
    std::uint64_t bits;
    std::memcpy(&bits, p, sizeof bits);
    bits = to_little_endian(bits);
    double value;
    std::memcpy(&value, &bits, sizeof value);
    return value;
}

inline std::uint32_t read_u32_be(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

/// %.17g: enough significant digits for a lossless double round-trip.
inline std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

}  // namespace detail

/// Comma-separated rows of decimal numbers, no quoting. Rejects ragged rows
/// and non-numeric tokens with their position; an input without data rows is
/// an empty_dataset_error.
inline std::pair<Mat, DatasetMeta> load_csv(const std::string& path, bool skip_header = false) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");

    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    bool header_pending = skip_header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header_pending) {
            header_pending = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t col = 0;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string token = line.substr(start, comma == std::string::npos
                                                             ? std::string::npos
                                                             : comma - start);
            ++col;
            row.push_back(detail::parse_double_token(token, line_no, col));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw parse_error("row " + std::to_string(line_no) + " has " +
                              std::to_string(row.size()) + " values, expected " +
                              std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw empty_dataset_error("'" + path + "': no data rows");

    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows.front().size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];

    DatasetMeta meta;
    meta.n_samples = rows.size();
    meta.dim = m.cols();
    meta.source = "csv:" + path;
    return {std::move(m), std::move(meta)};
}

inline void save_csv(const Mat& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write '" + path + "'");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << detail::format_double(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

/// IDX image file (magic 0x00000803, uint8, 3 dimensions). Images are
/// flattened row-major and scaled to [0,1]. Label files are rejected with a
/// pointer at the right magic.
inline std::pair<Mat, DatasetMeta> load_idx(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4) throw io_error("'" + path + "': truncated IDX header");
    const std::uint32_t magic = detail::read_u32_be(p);
    if (magic == 0x00000801u)
        throw parse_error("'" + path + "': IDX label file (magic 0x00000801); "
                          "this loader expects an image file with magic 0x00000803");
    if (magic != 0x00000803u)
        throw parse_error("'" + path + "': bad IDX magic");
    if (bytes.size() < 16) throw io_error("'" + path + "': truncated IDX header");
    const std::uint64_t n = detail::read_u32_be(p + 4);
    const std::uint64_t rows = detail::read_u32_be(p + 8);
    const std::uint64_t cols = detail::read_u32_be(p + 12);
    const std::uint64_t payload = n * rows * cols;
    if (bytes.size() < 16 + payload)
        throw io_error("'" + path + "': truncated IDX payload");
    if (n == 0 || rows * cols == 0) throw empty_dataset_error("'" + path + "': empty IDX file");

    Mat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows * cols));
    for (std::uint64_t i = 0; i < n; ++i)
        for (std::uint64_t j = 0; j < rows * cols; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(p[16 + i * rows * cols + j]) / 255.0;

    DatasetMeta meta;
    meta.n_samples = static_cast<std::size_t>(n);
    meta.dim = m.cols();
    meta.source = "idx:" + path;
    return {std::move(m), std::move(meta)};
}

/// Rows i.i.d. uniform on the unit sphere: Gaussian draw, then normalize.
inline Mat gen_uniform_sphere(std::size_t n, Eigen::Index dim, std::uint64_t seed) {
    if (n == 0 || dim < 1) throw precondition_error("gen_uniform_sphere: need n >= 1, dim >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat m(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double norm = 0.0;
        do {
            for (Eigen::Index j = 0; j < dim; ++j) m(i, j) = gauss(rng);
            norm = m.row(i).norm();
        } while (norm < 1e-12);
        m.row(i) /= norm;
    }
    return m;
}

/// Samples scattered along n_lines random unit directions: random signed
/// scale in [0.5, 2] times the line direction, plus Gaussian noise. Labels
/// give the generating line per row.
inline std::pair<Mat, std::vector<int>> gen_clustered_lines(std::size_t n, Eigen::Index dim,
                                                            int n_lines, double noise,
                                                            std::uint64_t seed) {
    if (n == 0 || dim < 1 || n_lines < 1)
        throw precondition_error("gen_clustered_lines: need n >= 1, dim >= 1, n_lines >= 1");
    if (noise < 0.0) throw precondition_error("gen_clustered_lines: noise must be >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.5, 2.0);
    std::bernoulli_distribution flip(0.5);

    Mat directions(n_lines, dim);
    for (int l = 0; l < n_lines; ++l) {
        double norm = 0.0;
        do {
            for (Eigen::Index j = 0; j < dim; ++j) directions(l, j) = gauss(rng);
            norm = directions.row(l).norm();
        } while (norm < 1e-12);
        directions.row(l) /= norm;
    }

    Mat m(static_cast<Eigen::Index>(n), dim);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int line = static_cast<int>(i % static_cast<std::size_t>(n_lines));
        labels[i] = line;
        const double s = (flip(rng) ? 1.0 : -1.0) * scale(rng);
        m.row(static_cast<Eigen::Index>(i)) = s * directions.row(line);
        if (noise > 0.0)
            for (Eigen::Index j = 0; j < dim; ++j)
                m(static_cast<Eigen::Index>(i), j) += noise * gauss(rng);
    }
    return {std::move(m), std::move(labels)};
}

// Model file layout: a fixed-order text header, a "payload" marker line, the
// atom values as little-endian doubles in layer-major, atom-major,
// coordinate-minor order, and a trailing FNV-1a 64 checksum of the payload
// bytes. The header is canonical so save -> load -> save is byte-identical.
inline constexpr const char* model_format_version = "ojanet-model v1";

inline void save_model(const DeepModel& model, const std::string& path) {
    std::ostringstream header;
    header << model_format_version << '\n';
    header << "dim " << model.dim() << '\n';
    header << "layers " << model.depth() << '\n';
    header << "atoms";
    for (const Dictionary& layer : model.layers()) header << ' ' << layer.size();
    header << '\n';
    const TrainConfig& cfg = model.config();
    header << "rule " << to_string(cfg.rule) << '\n';
    header << "k " << cfg.k << '\n';
    header << "increase_factor " << detail::format_double(cfg.increase_factor) << '\n';
    header << "depth " << cfg.depth << '\n';
    header << "gamma " << detail::format_double(cfg.gamma) << '\n';
    header << "max_epochs " << cfg.max_epochs << '\n';
    header << "tol_rel_loss " << detail::format_double(cfg.tol_rel_loss) << '\n';
    header << "seed " << cfg.seed << '\n';
    header << "payload\n";

    std::string payload;
    for (const Dictionary& layer : model.layers())
        for (const Atom& atom : layer.atoms())
            for (Eigen::Index i = 0; i < atom.dim(); ++i)
                detail::append_double_le(payload, atom.values()[i]);
    const std::uint64_t checksum =
        detail::fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << header.str();
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const std::uint64_t checksum_le = detail::to_little_endian(checksum);
    out.write(reinterpret_cast<const char*>(&checksum_le), sizeof checksum_le);
    if (!out) throw io_error("write failed for '" + path + "'");
}

namespace detail {

inline std::string expect_field(std::istringstream& header, const std::string& key,
                                const std::string& path) {
    std::string line;
    if (!std::getline(header, line))
        throw io_error("'" + path + "': truncated model header");
    if (line.rfind(key + ' ', 0) != 0)
        throw parse_error("'" + path + "': expected header field '" + key + "'");
    return line.substr(key.size() + 1);
}

}  // namespace detail

inline DeepModel load_model(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    const std::size_t header_end = bytes.find("payload\n");
    if (header_end == std::string::npos)
        throw io_error("'" + path + "': truncated model file (no payload marker)");
    const std::size_t payload_start = header_end + 8;

    std::istringstream header(bytes.substr(0, payload_start));
    std::string version;
    std::getline(header, version);
    if (version != model_format_version)
        throw parse_error("'" + path + "': model format version mismatch (got '" + version + "')");

    const auto parse_index = [&](const std::string& text) {
        return static_cast<Eigen::Index>(std::stoll(text));
    };
    const Eigen::Index dim = parse_index(detail::expect_field(header, "dim", path));
    const Eigen::Index n_layers = parse_index(detail::expect_field(header, "layers", path));
    if (dim < 1 || n_layers < 1)
        throw parse_error("'" + path + "': inconsistent model dimensions");

    std::istringstream atoms_line(detail::expect_field(header, "atoms", path));
    std::vector<std::size_t> atoms_per_layer;
    std::size_t count = 0;
    while (atoms_line >> count) {
        if (count == 0) throw parse_error("'" + path + "': layer with zero atoms");
        atoms_per_layer.push_back(count);
    }
    if (static_cast<Eigen::Index>(atoms_per_layer.size()) != n_layers)
        throw parse_error("'" + path + "': atom counts do not match the layer count");

    TrainConfig cfg;
    cfg.rule = rule_from_string(detail::expect_field(header, "rule", path));
    cfg.k = std::stoi(detail::expect_field(header, "k", path));
    cfg.increase_factor = std::stod(detail::expect_field(header, "increase_factor", path));
    cfg.depth = std::stoi(detail::expect_field(header, "depth", path));
    cfg.gamma = std::stod(detail::expect_field(header, "gamma", path));
    cfg.max_epochs = std::stoi(detail::expect_field(header, "max_epochs", path));
    cfg.tol_rel_loss = std::stod(detail::expect_field(header, "tol_rel_loss", path));
    cfg.seed = std::stoull(detail::expect_field(header, "seed", path));

    std::size_t total_doubles = 0;
    for (std::size_t c : atoms_per_layer) total_doubles += c * static_cast<std::size_t>(dim);
    const std::size_t payload_bytes = total_doubles * sizeof(double);
    if (bytes.size() != payload_start + payload_bytes + sizeof(std::uint64_t)) {
        if (bytes.size() < payload_start + payload_bytes + sizeof(std::uint64_t))
            throw io_error("'" + path + "': truncated model payload");
        throw parse_error("'" + path + "': trailing bytes after checksum");
    }

    const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start;
    const std::uint64_t expected = detail::fnv1a(payload, payload_bytes);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + payload_start + payload_bytes, sizeof stored);
    stored = detail::to_little_endian(stored);
    if (stored != expected)
        throw io_error("'" + path + "': model checksum mismatch");

    std::vector<Dictionary> layers;
    layers.reserve(atoms_per_layer.size());
    std::size_t offset = 0;
    for (std::size_t c : atoms_per_layer) {
        std::vector<Atom> atoms;
        atoms.reserve(c);
        for (std::size_t a = 0; a < c; ++a) {
            Vec v(dim);
            for (Eigen::Index i = 0; i < dim; ++i) {
                v[i] = detail::read_double_le(payload + offset);
                offset += sizeof(double);
            }
            atoms.emplace_back(std::move(v));
        }
        layers.emplace_back(std::move(atoms));
    }
    return DeepModel(std::move(layers), cfg);
}

}  // namespace oja
