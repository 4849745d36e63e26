#include "stepfit/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "stepfit/errors.hpp"

namespace stepfit {

Dataset::Dataset(Eigen::MatrixXd values, BoolMatrix observed, Eigen::VectorXd weights,
                 std::vector<std::string> column_names)
    : values_(std::move(values)),
      observed_(std::move(observed)),
      weights_(std::move(weights)),
      column_names_(std::move(column_names)) {
    if (observed_.rows() != values_.rows() || observed_.cols() != values_.cols())
        throw ValidationError("dataset: mask shape does not match values");
    if (weights_.size() != values_.rows())
        throw ValidationError("dataset: weight vector length does not match row count");
    if (column_names_.size() != static_cast<std::size_t>(values_.cols()))
        throw ValidationError("dataset: column name count does not match column count");
    bool any_positive = false;
    for (long i = 0; i < weights_.size(); ++i) {
        if (!(weights_[i] >= 0.0))
            throw ValidationError("dataset: negative or non-finite weight at row " + std::to_string(i + 1));
        if (weights_[i] > 0.0) any_positive = true;
    }
    if (values_.rows() > 0 && !any_positive)
        throw ValidationError("dataset: all sample weights are zero");
}

Dataset::Dataset(Eigen::MatrixXd values) {
    const long n = values.rows();
    const long d = values.cols();
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(d));
    for (long j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
    *this = Dataset(std::move(values), BoolMatrix::Constant(n, d, true), Eigen::VectorXd::Ones(n),
                    std::move(names));
}

bool Dataset::has_missing() const {
    for (long i = 0; i < observed_.rows(); ++i)
        for (long j = 0; j < observed_.cols(); ++j)
            if (!observed_(i, j)) return true;
    return false;
}

Dataset Dataset::slice_columns(int begin, int end) const {
    if (begin < 0 || end > n_cols() || begin > end)
        throw ValidationError("dataset: column slice out of range");
    const long w = end - begin;
    std::vector<std::string> names(column_names_.begin() + begin, column_names_.begin() + end);
    return Dataset(values_.middleCols(begin, w), observed_.middleCols(begin, w), weights_,
                   std::move(names));
}

Dataset Dataset::take_rows(const std::vector<int>& indices) const {
    const long n = static_cast<long>(indices.size());
    Eigen::MatrixXd values(n, n_cols());
    BoolMatrix observed(n, n_cols());
    Eigen::VectorXd weights(n);
    for (long i = 0; i < n; ++i) {
        const int src = indices[static_cast<std::size_t>(i)];
        if (src < 0 || src >= n_rows()) throw ValidationError("dataset: row index out of range");
        values.row(i) = values_.row(src);
        observed.row(i) = observed_.row(src);
        weights[i] = weights_[src];
    }
    return Dataset(std::move(values), std::move(observed), std::move(weights), column_names_);
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool is_missing_sentinel(const std::string& cell) {
    if (cell.empty()) return true;
    if (cell.size() != 3) return false;
    return std::tolower(static_cast<unsigned char>(cell[0])) == 'n' &&
           std::tolower(static_cast<unsigned char>(cell[1])) == 'a' &&
           std::tolower(static_cast<unsigned char>(cell[2])) == 'n';
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::optional<std::string>& weight_column) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file, header row expected");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header = split_line(line);
    const std::size_t n_fields = header.size();
    if (n_fields == 0) throw ParseError(path + ": header row has no columns");

    long weight_idx = -1;
    if (weight_column) {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == *weight_column) weight_idx = static_cast<long>(j);
        if (weight_idx < 0)
            throw ValidationError(path + ": weight column '" + *weight_column + "' not found");
    }

    std::vector<std::vector<double>> rows;
    std::vector<std::vector<bool>> masks;
    std::vector<double> weights;
    long row_number = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++row_number;
        std::vector<std::string> cells = split_line(line);
        if (cells.empty()) {
            if (in.peek() == std::char_traits<char>::eof()) break;  // trailing blank line
            cells.emplace_back();  // single empty field
        }
        if (cells.size() != n_fields)
            throw ParseError(path + ": row " + std::to_string(row_number) + " has " +
                             std::to_string(cells.size()) + " fields, expected " +
                             std::to_string(n_fields));
        std::vector<double> row;
        std::vector<bool> mask;
        row.reserve(n_fields);
        mask.reserve(n_fields);
        double w = 1.0;
        for (std::size_t j = 0; j < n_fields; ++j) {
            const std::string& cell = cells[j];
            double value = 0.0;
            bool observed = !is_missing_sentinel(cell);
            if (observed) {
                char* end = nullptr;
                value = std::strtod(cell.c_str(), &end);
                if (end == cell.c_str() || *end != '\0')
                    throw ParseError(path + ": row " + std::to_string(row_number) + ", column '" +
                                     header[j] + "': cannot parse '" + cell + "' as a number");
            }
            if (static_cast<long>(j) == weight_idx) {
                if (!observed)
                    throw ValidationError(path + ": row " + std::to_string(row_number) +
                                          ": missing sample weight");
                if (value < 0.0)
                    throw ValidationError(path + ": row " + std::to_string(row_number) +
                                          ": negative sample weight " + cell);
                w = value;
            } else {
                row.push_back(value);
                mask.push_back(observed);
            }
        }
        rows.push_back(std::move(row));
        masks.push_back(std::move(mask));
        weights.push_back(w);
    }

    const long n = static_cast<long>(rows.size());
    const long d = static_cast<long>(n_fields) - (weight_idx >= 0 ? 1 : 0);
    Eigen::MatrixXd values(n, d);
    BoolMatrix observed(n, d);
    Eigen::VectorXd wv(n);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < d; ++j) {
            values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            observed(i, j) = masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
        wv[i] = weights[static_cast<std::size_t>(i)];
    }
    std::vector<std::string> names;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (static_cast<long>(j) != weight_idx) names.push_back(header[j]);
    return Dataset(std::move(values), std::move(observed), std::move(wv), std::move(names));
}

void save_csv(const Dataset& data, const std::string& path,
              const std::optional<std::string>& weight_column) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    char buf[64];
    for (long j = 0; j < data.n_cols(); ++j) {
        if (j > 0) out << ',';
        out << data.column_names()[static_cast<std::size_t>(j)];
    }
    if (weight_column) out << (data.n_cols() > 0 ? "," : "") << *weight_column;
    out << '\n';
    for (long i = 0; i < data.n_rows(); ++i) {
        for (long j = 0; j < data.n_cols(); ++j) {
            if (j > 0) out << ',';
            if (data.is_observed(i, j)) {
                std::snprintf(buf, sizeof(buf), "%.17g", data.values()(i, j));
                out << buf;
            }
        }
        if (weight_column) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.weights()[i]);
            out << (data.n_cols() > 0 ? "," : "") << buf;
        }
        out << '\n';
    }
}

EncodedData encode_categorical(const Dataset& data, int col_begin, int col_end) {
    if (col_begin < 0 || col_end > data.n_cols() || col_begin > col_end)
        throw ValidationError("encode_categorical: column range out of bounds");
    constexpr std::size_t max_levels = 1000;

    Eigen::MatrixXd values = data.values();
    std::vector<std::vector<double>> all_levels;
    for (int j = col_begin; j < col_end; ++j) {
        std::map<double, int> mapping;
        for (long i = 0; i < data.n_rows(); ++i) {
            if (!data.is_observed(i, j)) continue;
            mapping.emplace(values(i, j), 0);
            if (mapping.size() > max_levels)
                throw ValidationError("encode_categorical: column '" +
                                      data.column_names()[static_cast<std::size_t>(j)] + "' has more than " +
                                      std::to_string(max_levels) +
                                      " distinct levels; is it really categorical?");
        }
        int code = 0;
        std::vector<double> levels;
        levels.reserve(mapping.size());
        for (auto& [value, idx] : mapping) {
            idx = code++;
            levels.push_back(value);
        }
        for (long i = 0; i < data.n_rows(); ++i)
            if (data.is_observed(i, j)) values(i, j) = mapping.at(values(i, j));
        all_levels.push_back(std::move(levels));
    }
    Dataset encoded(std::move(values), data.observed(), data.weights(), data.column_names());
    return EncodedData{std::move(encoded), std::move(all_levels)};
}

}  // namespace stepfit
