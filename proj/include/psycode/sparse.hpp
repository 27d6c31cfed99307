#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace psycode {

/// Sparse row with strictly increasing indices.
struct SparseVector {
    std::size_t dim = 0;
    std::vector<std::uint32_t> indices;
    std::vector<double> values;

    std::size_t nnz() const { return indices.size(); }

    std::vector<double> to_dense() const {
        std::vector<double> out(dim, 0.0);
        for (std::size_t k = 0; k < indices.size(); ++k) out[indices[k]] = values[k];
        return out;
    }

    static SparseVector from_dense(std::span<const double> dense) {
        SparseVector s;
        s.dim = dense.size();
        for (std::size_t i = 0; i < dense.size(); ++i) {
            if (dense[i] != 0.0) {
                s.indices.push_back(static_cast<std::uint32_t>(i));
                s.values.push_back(dense[i]);
            }
        }
        return s;
    }

    friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

}  // namespace psycode
