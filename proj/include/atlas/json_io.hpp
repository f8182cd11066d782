#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "atlas/core.hpp"

namespace atlas::io {

using json = nlohmann::json;

// Matrices travel as row-major nested arrays.
inline json to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline json to_json(const Complex& c) { return json{{"re", c.real()}, {"im", c.imag()}}; }

inline json to_json(const std::vector<Complex>& values) {
    json out = json::array();
    for (const auto& c : values) out.push_back(to_json(c));
    return out;
}

inline Matrix matrix_from_json(const json& j, const std::string& name) {
    if (!j.is_array()) throw Error(ErrorKind::dimension_mismatch, name + " must be a nested array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Matrix(0, 0);
    if (!j[0].is_array()) throw Error(ErrorKind::dimension_mismatch, name + " rows must be arrays");
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw Error(ErrorKind::dimension_mismatch, name + " is ragged");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
    return m;
}

inline Vector vector_from_json(const json& j, const std::string& name) {
    if (!j.is_array()) throw Error(ErrorKind::dimension_mismatch, name + " must be an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::io, "malformed JSON in " + path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out << text;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Shortest round-trip representation, so CSV output is byte-stable.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace atlas::io
