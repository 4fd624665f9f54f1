#pragma once

// Tabular dataset ingestion and splitting.
//
// CSV rules: first line is the header. A feature column whose cells all parse
// as finite numbers is numeric; any other feature column is kept as a
// categorical (string) column until one_hot_encode expands it. The target
// column must be numeric. Rows containing non-finite numeric values are
// rejected with an error listing the offending 0-based data row indices.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clearuq/core.hpp"
#include "clearuq/random.hpp"

namespace clearuq {

// A still-unencoded string column, remembering its slot in the original
// feature order so expansions happen in place.
struct CategoricalColumn {
    std::string name;
    std::vector<std::string> values;
    std::size_t position = 0;
};

struct Dataset {
    Matrix features;                          // numeric columns only
    std::vector<double> target;
    std::vector<std::string> feature_names;   // parallel to features columns
    std::string target_name;
    std::vector<CategoricalColumn> categoricals;
    std::vector<std::size_t> numeric_positions; // original slot per numeric column

    std::size_t n() const { return target.size(); }
    std::size_t d() const { return features.cols(); }
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\t' || e[-1] == '\r')) --e;
    if (b == e) return false;
    auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && ptr == e;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace detail

// Load a CSV with a header row; `target_column` names the y column, all other
// columns become features.
inline Dataset load_csv(const std::string& path, const std::string& target_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file: " + path);
    std::vector<std::string> header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    std::size_t target_idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == target_column) { target_idx = j; break; }
    if (target_idx == header.size())
        throw std::runtime_error("load_csv: missing target column '" + target_column + "' in " + path);

    std::vector<std::vector<std::string>> raw(header.size());
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw std::runtime_error("load_csv: row " + std::to_string(n) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(header.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) raw[j].push_back(detail::trim(cells[j]));
        ++n;
    }
    if (n == 0) throw std::runtime_error("load_csv: no data rows in " + path);

    // Target must parse numerically in every row.
    std::vector<double> target(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!detail::parse_double(raw[target_idx][i], target[i]))
            throw std::runtime_error("load_csv: unparseable numeric cell at row " + std::to_string(i) +
                                     ", column '" + header[target_idx] + "'");
    }

    // Classify feature columns.
    std::vector<std::size_t> feature_cols;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != target_idx) feature_cols.push_back(j);

    std::vector<bool> is_numeric(feature_cols.size(), true);
    std::vector<std::vector<double>> numeric_vals(feature_cols.size());
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
        auto& col = raw[feature_cols[f]];
        numeric_vals[f].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (!detail::parse_double(col[i], numeric_vals[f][i])) {
                is_numeric[f] = false;
                break;
            }
        }
    }

    // Reject rows with non-finite numeric values (features or target).
    std::vector<std::size_t> bad_rows;
    for (std::size_t i = 0; i < n; ++i) {
        bool bad = !std::isfinite(target[i]);
        for (std::size_t f = 0; f < feature_cols.size() && !bad; ++f)
            if (is_numeric[f] && !std::isfinite(numeric_vals[f][i])) bad = true;
        if (bad) bad_rows.push_back(i);
    }
    if (!bad_rows.empty()) {
        std::ostringstream msg;
        msg << "load_csv: non-finite values in data row(s)";
        for (std::size_t r : bad_rows) msg << " " << r;
        throw std::runtime_error(msg.str());
    }

    Dataset ds;
    ds.target = std::move(target);
    ds.target_name = header[target_idx];
    std::size_t n_numeric = 0;
    for (bool b : is_numeric) n_numeric += b ? 1 : 0;
    ds.features = Matrix(n, n_numeric);
    std::size_t out_col = 0;
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
        if (is_numeric[f]) {
            for (std::size_t i = 0; i < n; ++i) ds.features(i, out_col) = numeric_vals[f][i];
            ds.feature_names.push_back(header[feature_cols[f]]);
            ds.numeric_positions.push_back(f);
            ++out_col;
        } else {
            ds.categoricals.push_back({header[feature_cols[f]], std::move(raw[feature_cols[f]]), f});
        }
    }
    return ds;
}

// Expand the named categorical columns into one binary column per level
// (levels in lexicographic order, named "<col>=<level>"), keeping the overall
// column order of the original table. Idempotent once nothing categorical
// remains.
inline Dataset one_hot_encode(const Dataset& ds, const std::vector<std::string>& columns) {
    for (const auto& name : columns) {
        bool found = false;
        for (const auto& c : ds.categoricals) found = found || c.name == name;
        if (!found)
            throw std::invalid_argument("one_hot_encode: column '" + name +
                                        "' is not a categorical column");
    }

    const std::size_t n = ds.n();
    struct NewCol {
        std::string name;
        std::vector<double> values;
        std::size_t position;
        std::size_t sub; // order within an expansion
    };
    std::vector<NewCol> cols;
    for (std::size_t j = 0; j < ds.d(); ++j) {
        NewCol c;
        c.name = ds.feature_names[j];
        c.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) c.values[i] = ds.features(i, j);
        c.position = ds.numeric_positions[j];
        c.sub = 0;
        cols.push_back(std::move(c));
    }

    Dataset out;
    out.target = ds.target;
    out.target_name = ds.target_name;

    for (const auto& cat : ds.categoricals) {
        const bool encode = std::find(columns.begin(), columns.end(), cat.name) != columns.end();
        if (!encode) {
            out.categoricals.push_back(cat);
            continue;
        }
        std::set<std::string> levels(cat.values.begin(), cat.values.end());
        std::size_t sub = 0;
        for (const auto& level : levels) {
            NewCol c;
            c.name = cat.name + "=" + level;
            c.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) c.values[i] = cat.values[i] == level ? 1.0 : 0.0;
            c.position = cat.position;
            c.sub = sub++;
            cols.push_back(std::move(c));
        }
    }

    std::stable_sort(cols.begin(), cols.end(), [](const NewCol& a, const NewCol& b) {
        return a.position != b.position ? a.position < b.position : a.sub < b.sub;
    });

    out.features = Matrix(n, cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out.feature_names.push_back(cols[j].name);
        out.numeric_positions.push_back(cols[j].position);
        for (std::size_t i = 0; i < n; ++i) out.features(i, j) = cols[j].values[i];
    }
    return out;
}

inline Dataset encode_all_categoricals(const Dataset& ds) {
    std::vector<std::string> names;
    for (const auto& c : ds.categoricals) names.push_back(c.name);
    if (names.empty()) return ds;
    return one_hot_encode(ds, names);
}

struct SplitFractions {
    double train = 0.0;
    double cal = 0.0;
    double test = 0.0;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> cal;
    std::vector<std::size_t> test;
};

// Seeded shuffle split. Sizes are floor(n*f_train) and floor(n*f_cal); the
// remainder goes to test. A part with positive fraction must end up nonempty.
inline SplitIndices split_indices(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
    if (n < 3) throw std::invalid_argument("split_indices: need n >= 3");
    const double total = f.train + f.cal + f.test;
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split_indices: fractions must sum to 1");
    if (f.train < 0 || f.cal < 0 || f.test < 0)
        throw std::invalid_argument("split_indices: fractions must be nonnegative");

    const std::size_t n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.train));
    const std::size_t n_cal = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.cal));
    const std::size_t n_test = n - n_train - n_cal;
    if ((f.train > 0 && n_train == 0) || (f.cal > 0 && n_cal == 0) || (f.test > 0 && n_test == 0))
        throw std::invalid_argument("split_indices: n too small for a nonempty part with positive fraction");

    Rng rng(derive_seed(seed, 0x5b717));
    std::vector<std::size_t> perm = rng.permutation(n);
    SplitIndices out;
    out.train.assign(perm.begin(), perm.begin() + n_train);
    out.cal.assign(perm.begin() + n_train, perm.begin() + n_train + n_cal);
    out.test.assign(perm.begin() + n_train + n_cal, perm.end());
    return out;
}

// n bootstrap draws (uniform with replacement) from 0..n-1.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("bootstrap_indices: n must be positive");
    Rng rng(derive_seed(seed, 0xb007));
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = static_cast<std::size_t>(rng.uniform_below(n));
    return idx;
}

} // namespace clearuq
