#pragma once

// CSV codecs for uncertainty components and intervals, plus lossless number
// formatting shared by all report writers.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clearuq/clear.hpp"
#include "clearuq/core.hpp"
#include "clearuq/dataset.hpp"

namespace clearuq {

// 17 significant digits: enough for a binary64 round trip.
inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

namespace detail {

inline double parse_cell(const std::string& cell, const char* column, std::size_t row,
                         const std::string& path) {
    double v = 0.0;
    if (!parse_double(cell, v)) {
        throw std::runtime_error(path + ": row " + std::to_string(row) + ": column '" + column +
                                 "' is not a number: '" + cell + "'");
    }
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

} // namespace detail

// Components CSV schema. Column order is fixed; the y column is present for
// calibration files and absent for test files.
//
//   y,f_hat,ale_lo,ale_hi,epi_lo,epi_hi
//   f_hat,ale_lo,ale_hi,epi_lo,epi_hi
inline UncertaintyComponents read_components_csv(const std::string& path, bool need_y) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open components file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty components file: " + path);
    std::vector<std::string> header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    bool has_y = !header.empty() && header[0] == "y";
    const std::vector<std::string> with_y = {"y", "f_hat", "ale_lo", "ale_hi", "epi_lo", "epi_hi"};
    const std::vector<std::string> without_y = {"f_hat", "ale_lo", "ale_hi", "epi_lo", "epi_hi"};
    const std::vector<std::string>& expected = has_y ? with_y : without_y;
    if (header != expected) {
        throw std::runtime_error(path +
                                 ": bad header; expected 'y,f_hat,ale_lo,ale_hi,epi_lo,epi_hi' "
                                 "or 'f_hat,ale_lo,ale_hi,epi_lo,epi_hi'");
    }
    if (need_y && !has_y)
        throw std::runtime_error(path + ": calibration components require a 'y' column");

    UncertaintyComponents comp;
    std::size_t row = 1; // 1-based data rows, header is row 0
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) { ++row; continue; }
        std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != expected.size()) {
            throw std::runtime_error(path + ": row " + std::to_string(row) + ": expected " +
                                     std::to_string(expected.size()) + " columns, got " +
                                     std::to_string(cells.size()));
        }
        std::size_t c = 0;
        if (has_y) comp.y.push_back(detail::parse_cell(cells[c++], "y", row, path));
        comp.f_hat.push_back(detail::parse_cell(cells[c++], "f_hat", row, path));
        comp.ale_lo.push_back(detail::parse_cell(cells[c++], "ale_lo", row, path));
        comp.ale_hi.push_back(detail::parse_cell(cells[c++], "ale_hi", row, path));
        comp.epi_lo.push_back(detail::parse_cell(cells[c++], "epi_lo", row, path));
        comp.epi_hi.push_back(detail::parse_cell(cells[c++], "epi_hi", row, path));
        ++row;
    }
    if (comp.size() == 0) throw std::runtime_error(path + ": no data rows");

    // Re-raise validation problems with the offending row attached.
    for (std::size_t i = 0; i < comp.size(); ++i) {
        auto bad = [&](const char* what) {
            throw std::runtime_error(path + ": row " + std::to_string(i + 1) + ": " + what);
        };
        if (!std::isfinite(comp.f_hat[i])) bad("f_hat is not finite");
        if (has_y && !std::isfinite(comp.y[i])) bad("y is not finite");
        if (!(comp.ale_lo[i] >= 0.0) || !std::isfinite(comp.ale_lo[i])) bad("ale_lo must be finite and >= 0");
        if (!(comp.ale_hi[i] >= 0.0) || !std::isfinite(comp.ale_hi[i])) bad("ale_hi must be finite and >= 0");
        if (!(comp.epi_lo[i] >= 0.0) || !std::isfinite(comp.epi_lo[i])) bad("epi_lo must be finite and >= 0");
        if (!(comp.epi_hi[i] >= 0.0) || !std::isfinite(comp.epi_hi[i])) bad("epi_hi must be finite and >= 0");
    }
    comp.validate(need_y);
    return comp;
}

inline void write_components_csv(const std::string& path, const UncertaintyComponents& comp) {
    std::ofstream out = detail::open_out(path);
    const bool has_y = !comp.y.empty();
    out << (has_y ? "y,f_hat,ale_lo,ale_hi,epi_lo,epi_hi" : "f_hat,ale_lo,ale_hi,epi_lo,epi_hi")
        << "\n";
    for (std::size_t i = 0; i < comp.size(); ++i) {
        if (has_y) out << format_number(comp.y[i]) << ',';
        out << format_number(comp.f_hat[i]) << ',' << format_number(comp.ale_lo[i]) << ','
            << format_number(comp.ale_hi[i]) << ',' << format_number(comp.epi_lo[i]) << ','
            << format_number(comp.epi_hi[i]) << "\n";
    }
}

// Inverse of load_csv for numeric datasets: feature columns in order, then the
// target. Lets generated synthetic data feed the benchmark path unchanged.
inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
    if (!ds.categoricals.empty())
        throw std::invalid_argument("write_dataset_csv: encode categoricals first");
    if (ds.features.rows() != ds.n())
        throw std::invalid_argument("write_dataset_csv: feature/target row mismatch");
    std::ofstream out = detail::open_out(path);
    for (std::size_t c = 0; c < ds.d(); ++c)
        out << (ds.feature_names.empty() ? "x" + std::to_string(c + 1) : ds.feature_names[c]) << ',';
    out << (ds.target_name.empty() ? "y" : ds.target_name) << "\n";
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (std::size_t c = 0; c < ds.d(); ++c) out << format_number(ds.features(i, c)) << ',';
        out << format_number(ds.target[i]) << "\n";
    }
}

inline void write_intervals_csv(const std::string& path, const IntervalSet& iv) {
    if (iv.lower.size() != iv.upper.size())
        throw std::invalid_argument("write_intervals_csv: bound lengths differ");
    std::ofstream out = detail::open_out(path);
    out << "lower,upper\n";
    for (std::size_t i = 0; i < iv.lower.size(); ++i)
        out << format_number(iv.lower[i]) << ',' << format_number(iv.upper[i]) << "\n";
}

} // namespace clearuq
