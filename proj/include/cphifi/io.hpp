#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cphifi/observations.hpp"
#include "cphifi/tensor.hpp"

namespace cphifi {

namespace detail {

inline std::vector<Eigen::Index> parse_shape_header(std::istream& in,
                                                    const std::string& what) {
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(what + ": missing shape header");
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag != "shape:")
        throw std::runtime_error(what + ": expected 'shape:' header, got '" + line + "'");
    std::vector<Eigen::Index> shape;
    Eigen::Index n;
    while (ss >> n) shape.push_back(n);
    if (shape.empty()) throw std::runtime_error(what + ": empty shape header");
    return shape;
}

inline void write_shape_header(std::ostream& out, const std::vector<Eigen::Index>& shape) {
    out << "shape:";
    for (auto n : shape) out << ' ' << n;
    out << '\n';
}

}  // namespace detail

/// Tensor file: UTF-8 header line `shape: n1 n2 ... nd` followed by N
/// little-endian 64-bit floats in column-major order.
inline void write_tensor(const std::string& path, const DenseTensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_tensor: cannot open " + path);
    detail::write_shape_header(out, t.shape());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write_tensor: write failed for " + path);
}

inline DenseTensor read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_tensor: cannot open " + path);
    auto shape = detail::parse_shape_header(in, "read_tensor");
    const Eigen::Index n = DenseTensor::num_entries(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
        throw std::runtime_error("read_tensor: truncated data in " + path);
    return DenseTensor(std::move(shape), std::move(data));
}

/// Raw `.f64` blob with the shape supplied out-of-band.
inline DenseTensor read_raw_tensor(const std::string& path,
                                   std::vector<Eigen::Index> shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_raw_tensor: cannot open " + path);
    const Eigen::Index n = DenseTensor::num_entries(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
        throw std::runtime_error("read_raw_tensor: truncated data in " + path);
    return DenseTensor(std::move(shape), std::move(data));
}

/// Matrices reuse the tensor format with a two-entry shape.
inline void write_matrix(const std::string& path, const Matrix& m) {
    DenseTensor t({m.rows(), m.cols()},
                  std::vector<double>(m.data(), m.data() + m.size()));
    write_tensor(path, t);
}

inline Matrix read_matrix(const std::string& path) {
    DenseTensor t = read_tensor(path);
    if (t.order() != 2) throw std::runtime_error("read_matrix: not a 2-way tensor");
    return Eigen::Map<const Matrix>(t.data(), t.shape()[0], t.shape()[1]);
}

/// Observation file: `shape:` header then UTF-8 lines `i1 i2 ... id value`
/// with 1-based indices.
inline void write_observations(const std::string& path, const ObservationSet& obs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_observations: cannot open " + path);
    detail::write_shape_header(out, obs.shape());
    out.precision(17);
    const int d = static_cast<int>(obs.shape().size());
    for (Eigen::Index l = 0; l < obs.num_obs(); ++l) {
        for (int k = 0; k < d; ++k) out << obs.index(l, k) + 1 << ' ';
        out << obs.values()[l] << '\n';
    }
}

inline ObservationSet read_observations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_observations: cannot open " + path);
    auto shape = detail::parse_shape_header(in, "read_observations");
    const int d = static_cast<int>(shape.size());
    std::vector<std::vector<Eigen::Index>> indices;
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<Eigen::Index> idx(d);
        for (int k = 0; k < d; ++k) {
            if (!(ss >> idx[k]))
                throw std::runtime_error("read_observations: malformed line '" + line + "'");
            idx[k] -= 1;  // file is 1-based
        }
        double v;
        if (!(ss >> v))
            throw std::runtime_error("read_observations: malformed line '" + line + "'");
        indices.push_back(std::move(idx));
        values.push_back(v);
    }
    return ObservationSet(std::move(shape), std::move(indices), std::move(values));
}

/// Design-point file: one real per line.
inline std::vector<double> read_design_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_design_points: cannot open " + path);
    std::vector<double> pts;
    double x;
    while (in >> x) pts.push_back(x);
    if (pts.empty()) throw std::runtime_error("read_design_points: empty file " + path);
    return pts;
}

}  // namespace cphifi
