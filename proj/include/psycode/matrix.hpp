#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace psycode {

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows_in) {
        Matrix m;
        m.rows = rows_in.size();
        m.cols = rows_in.empty() ? 0 : rows_in.front().size();
        m.data.reserve(m.rows * m.cols);
        for (const auto& r : rows_in) {
            if (r.size() != m.cols) throw std::invalid_argument("Matrix::from_rows: ragged rows");
            m.data.insert(m.data.end(), r.begin(), r.end());
        }
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    Matrix select_rows(std::span<const std::size_t> idx) const {
        Matrix m(idx.size(), cols);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto src = row(idx[k]);
            std::copy(src.begin(), src.end(), m.row(k).begin());
        }
        return m;
    }

    Matrix select_cols(std::span<const std::size_t> idx) const {
        Matrix m(rows, idx.size());
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < idx.size(); ++k) m(r, k) = (*this)(r, idx[k]);
        }
        return m;
    }

    /// [A | B]; both must have the same row count.
    static Matrix hconcat(const std::vector<const Matrix*>& parts) {
        if (parts.empty()) return {};
        Matrix m(parts.front()->rows, 0);
        for (const auto* p : parts) {
            if (p->rows != m.rows) throw std::invalid_argument("hconcat: row count mismatch");
            m.cols += p->cols;
        }
        m.data.assign(m.rows * m.cols, 0.0);
        for (std::size_t r = 0; r < m.rows; ++r) {
            std::size_t at = 0;
            for (const auto* p : parts) {
                const auto src = p->row(r);
                std::copy(src.begin(), src.end(), m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols + at));
                at += p->cols;
            }
        }
        return m;
    }
};

}  // namespace psycode
