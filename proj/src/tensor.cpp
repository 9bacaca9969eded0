// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/tensor.hpp"

namespace moeprec {

std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw shape_error("matmul: " + shape_string(a.rows(), a.cols()) + " x " +
                      shape_string(b.rows(), b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix scaled(const Matrix& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  return Matrix(a.rows(), a.cols(), std::move(out));
}

std::vector<double> matvec(const MatrixF& w, std::span<const double> x) {
  if (w.cols() != x.size()) {
    throw shape_error("matvec: " + shape_string(w.rows(), w.cols()) + " x vector(" +
                      std::to_string(x.size()) + ")");
  }
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto r = w.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += static_cast<double>(r[j]) * x[j];
    y[i] = acc;
  }
  return y;
}

double inner(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw shape_error("inner: " + shape_string(a.rows(), a.cols()) + " vs " +
                      shape_string(b.rows(), b.cols()));
  }
  double acc = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) acc += da[i] * db[i];
  return acc;
}

}  // namespace moeprec
