#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stepfit {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Rectangular numeric data with a per-cell observation mask and per-unit
/// sample weights. Missing cells (mask = false) are excluded from every
/// likelihood term. Immutable by convention once constructed: fits never
/// modify a dataset, so instances can be shared across threads.
class Dataset {
public:
    Dataset() = default;
    Dataset(Eigen::MatrixXd values, BoolMatrix observed, Eigen::VectorXd weights,
            std::vector<std::string> column_names);

    /// All-observed dataset with unit weights and generated column names.
    explicit Dataset(Eigen::MatrixXd values);

    long n_rows() const { return values_.rows(); }
    long n_cols() const { return values_.cols(); }

    const Eigen::MatrixXd& values() const { return values_; }
    const BoolMatrix& observed() const { return observed_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    const std::vector<std::string>& column_names() const { return column_names_; }

    bool is_observed(long i, long j) const { return observed_(i, j); }
    bool has_missing() const;

    /// Column slice [begin, end); keeps masks and weights aligned.
    Dataset slice_columns(int begin, int end) const;

    /// Row subset in the given order (bootstrap resampling).
    Dataset take_rows(const std::vector<int>& indices) const;

private:
    Eigen::MatrixXd values_;
    BoolMatrix observed_;
    Eigen::VectorXd weights_;
    std::vector<std::string> column_names_;
};

/// Reads a CSV file with a header row. Empty cells and "NaN" (any case) are
/// treated as missing. If weight_column names a column it is removed from the
/// value matrix and stored as the sample weights.
Dataset load_csv(const std::string& path, const std::optional<std::string>& weight_column = std::nullopt);

/// Writes a dataset back to CSV. Missing cells become empty fields. When
/// weight_column is given the weights are emitted as an extra column under
/// that name, so load_csv(path, weight_column) round-trips exactly.
void save_csv(const Dataset& data, const std::string& path,
              const std::optional<std::string>& weight_column = std::nullopt);

/// Result of integer-encoding categorical columns: the encoded data plus, per
/// encoded column, the original levels in ascending order (level c maps to c).
struct EncodedData {
    Dataset data;
    std::vector<std::vector<double>> levels;  // one entry per encoded column
};

/// Maps the distinct observed values of columns [col_begin, col_end) to
/// 0..C-1 in ascending numeric order. Missing cells are untouched. Columns
/// already encoded as 0..C-1 come back unchanged.
EncodedData encode_categorical(const Dataset& data, int col_begin, int col_end);

}  // namespace stepfit
