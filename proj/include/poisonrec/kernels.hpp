#pragma once

// Data-parallel hot loops. Each kernel has a straightforward serial reference
// (`*_serial`) that the tests compare against and the benchmark measures.

#include <cstddef>
#include <span>
#include <vector>

#include "poisonrec/common.hpp"
#include "poisonrec/dataset.hpp"
#include "poisonrec/neumf.hpp"

namespace poisonrec {

/// Dense row-major rows x cols matrix of predicted scores.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data_).subspan(r * cols_, cols_); }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// Number of worker threads OpenMP will use (1 when built without OpenMP).
int kernel_threads();

/// Full M x N prediction matrix by calling forward() per cell.
ScoreMatrix predict_matrix_serial(const NeumfModel& model);
/// Same values (to rounding) with the first MLP layer split into per-user and
/// per-item halves precomputed once, rows distributed across threads.
ScoreMatrix predict_matrix(const NeumfModel& model);
/// Predictions for a subset of users (rows in the order given).
ScoreMatrix predict_rows(const NeumfModel& model, std::span<const Index> users);

/// Indices of the k best unrated items of one row; descending score, ties by
/// lower index. `rated` must be sorted ascending by item.
std::vector<Index> top_k_row(std::span<const double> scores, std::span<const Interaction> rated, std::size_t k);
/// Reference: full sort of the row.
std::vector<Index> top_k_row_serial(std::span<const double> scores, std::span<const Interaction> rated, std::size_t k);

/// top_k_row for every user in [0, users), parallel over users.
std::vector<std::vector<Index>> top_k_all(const ScoreMatrix& scores, const InteractionMatrix& rated, std::size_t users,
                                          std::size_t k);
std::vector<std::vector<Index>> top_k_all_serial(const ScoreMatrix& scores, const InteractionMatrix& rated,
                                                 std::size_t users, std::size_t k);

}  // namespace poisonrec
