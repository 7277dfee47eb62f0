#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sparsenn/matrix.hpp"
#include "sparsenn/rng.hpp"

namespace sparsenn {

// Labeled dataset: N x D sample matrix with entries in [0,1].
struct Dataset {
    Matrix images; // N x D
    std::vector<int> labels;
    int classes = 0;
    std::string name;
    std::string split;

    std::size_t size() const { return images.rows; }
    std::size_t dim() const { return images.cols; }

    Vector sample(std::size_t i) const {
        return Vector(images.row(i), images.row(i) + images.cols);
    }

    // Every loader runs this; the invariants hold for all produced datasets.
    void validate() const {
        if (images.rows != labels.size()) {
            throw ParseError("dataset '" + name + "': image count " + std::to_string(images.rows) +
                             " != label count " + std::to_string(labels.size()));
        }
        for (double v : images.data) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ParseError("dataset '" + name + "': pixel value out of [0,1]");
            }
        }
        for (int l : labels) {
            if (l < 0 || l >= classes) {
                throw ParseError("dataset '" + name + "': label out of range");
            }
        }
    }
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw ParseError("idx '" + path + "': truncated header");
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

} // namespace detail

// IDX container: big-endian magic 0x00000803 (images) / 0x00000801 (labels),
// dimension header, unsigned bytes. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::string& image_path, const std::string& label_path) {
    std::ifstream img(image_path, std::ios::binary);
    if (!img) throw ParseError("idx '" + image_path + "': cannot open");
    std::uint32_t magic = detail::read_be32(img, image_path);
    if (magic != 0x00000803u) {
        throw ParseError("idx '" + image_path + "': bad image magic");
    }
    std::uint32_t count = detail::read_be32(img, image_path);
    std::uint32_t rows = detail::read_be32(img, image_path);
    std::uint32_t cols = detail::read_be32(img, image_path);
    std::size_t dim = std::size_t(rows) * cols;

    Dataset data;
    data.name = image_path;
    data.images = Matrix(count, dim);
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim))) {
            throw ParseError("idx '" + image_path + "': truncated image data");
        }
        double* row = data.images.row(i);
        for (std::size_t j = 0; j < dim; ++j) row[j] = buf[j] / 255.0;
    }

    std::ifstream lbl(label_path, std::ios::binary);
    if (!lbl) throw ParseError("idx '" + label_path + "': cannot open");
    std::uint32_t lmagic = detail::read_be32(lbl, label_path);
    if (lmagic != 0x00000801u) {
        throw ParseError("idx '" + label_path + "': bad label magic");
    }
    std::uint32_t lcount = detail::read_be32(lbl, label_path);
    if (lcount != count) {
        throw ParseError("idx '" + label_path + "': label count " + std::to_string(lcount) +
                         " != image count " + std::to_string(count));
    }
    data.labels.resize(lcount);
    for (std::uint32_t i = 0; i < lcount; ++i) {
        char c;
        if (!lbl.get(c)) throw ParseError("idx '" + label_path + "': truncated label data");
        data.labels[i] = static_cast<unsigned char>(c);
    }
    data.classes = data.labels.empty() ? 0 : *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    data.validate();
    return data;
}

// Text format: one sample per line, whitespace-separated reals, last column
// is the integer label. Values are taken as-is (already normalized).
inline Dataset load_amat(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("amat '" + path + "': cannot open");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ss(line);
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (!ss.eof()) {
            throw ParseError("amat '" + path + "': non-numeric token at line " +
                             std::to_string(lineno));
        }
        if (vals.size() < 2) {
            throw ParseError("amat '" + path + "': too few columns at line " +
                             std::to_string(lineno));
        }
        if (dim == 0) {
            dim = vals.size() - 1;
        } else if (vals.size() - 1 != dim) {
            throw ParseError("amat '" + path + "': ragged row at line " + std::to_string(lineno));
        }
        double lab = vals.back();
        vals.pop_back();
        if (lab != std::floor(lab) || lab < 0.0) {
            throw ParseError("amat '" + path + "': non-integer label at line " +
                             std::to_string(lineno));
        }
        labels.push_back(static_cast<int>(lab));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ParseError("amat '" + path + "': no samples");

    Dataset data;
    data.name = path;
    data.images = Matrix(rows.size(), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].begin(), rows[i].end(), data.images.row(i));
    }
    data.labels = std::move(labels);
    data.classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    data.validate();
    return data;
}

inline void save_amat(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("amat '" + path + "': cannot write");
    out.precision(10);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.images.row(i);
        for (std::size_t j = 0; j < data.dim(); ++j) out << row[j] << ' ';
        out << data.labels[i] << '\n';
    }
}

// Gaussian clusters around per-class centers drawn uniformly in the unit
// cube, clipped to [0,1]. Bit-identical for a fixed seed.
inline Dataset synth(std::uint64_t seed, std::size_t n, std::size_t d, int classes,
                     double sigma = 0.25);

// Train/test pair drawn from one generation so both splits share the same
// class centers.
inline std::pair<Dataset, Dataset> synth_split(std::uint64_t seed, std::size_t n_train,
                                               std::size_t n_test, std::size_t d, int classes,
                                               double sigma = 0.25) {
    Dataset all = synth(seed, n_train + n_test, d, classes, sigma);
    Dataset train, test;
    train.name = all.name;
    test.name = all.name;
    train.split = "train";
    test.split = "test";
    train.classes = test.classes = all.classes;
    train.images = Matrix(n_train, d);
    test.images = Matrix(n_test, d);
    std::copy(all.images.data.begin(), all.images.data.begin() + static_cast<std::ptrdiff_t>(n_train * d),
              train.images.data.begin());
    std::copy(all.images.data.begin() + static_cast<std::ptrdiff_t>(n_train * d), all.images.data.end(),
              test.images.data.begin());
    train.labels.assign(all.labels.begin(), all.labels.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(n_train), all.labels.end());
    return {std::move(train), std::move(test)};
}

inline Dataset synth(std::uint64_t seed, std::size_t n, std::size_t d, int classes,
                     double sigma) {
    if (n == 0 || d == 0 || classes <= 0) throw ConfigError("synth: n, d, classes must be positive");
    Rng rng(seed);
    Matrix centers(static_cast<std::size_t>(classes), d);
    for (double& c : centers.data) c = rng.uniform();

    Dataset data;
    data.name = "synth(seed=" + std::to_string(seed) + ")";
    data.classes = classes;
    data.images = Matrix(n, d);
    data.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int label = static_cast<int>(rng.below(static_cast<std::size_t>(classes)));
        data.labels[i] = label;
        const double* c = centers.row(static_cast<std::size_t>(label));
        double* row = data.images.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            row[j] = std::clamp(c[j] + sigma * rng.normal(), 0.0, 1.0);
        }
    }
    data.validate();
    return data;
}

} // namespace sparsenn
