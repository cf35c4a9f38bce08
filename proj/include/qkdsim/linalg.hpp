#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace qkdsim {

/// Solves A x = b for small dense systems by Gaussian elimination with
/// partial pivoting. Throws on (numerically) singular input.
template <std::size_t N>
std::array<double, N> solve_linear(std::array<std::array<double, N>, N> a,
                                   std::array<double, N> b) {
    for (std::size_t col = 0; col < N; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < N; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-14)
            throw std::runtime_error("singular linear system");
        if (pivot != col) {
            std::swap(a[pivot], a[col]);
            std::swap(b[pivot], b[col]);
        }
        for (std::size_t r = col + 1; r < N; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < N; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::array<double, N> x{};
    for (std::size_t i = N; i-- > 0;) {
        double acc = b[i];
        for (std::size_t c = i + 1; c < N; ++c) acc -= a[i][c] * x[c];
        x[i] = acc / a[i][i];
    }
    return x;
}

/// Least squares fit x minimizing |M x - y|^2 via normal equations;
/// M given row-wise, rows.size() >= N required.
template <std::size_t N>
std::array<double, N> least_squares(const std::vector<std::array<double, N>>& rows,
                                    const std::vector<double>& y) {
    if (rows.size() != y.size() || rows.size() < N)
        throw std::invalid_argument("least_squares: underdetermined system");
    std::array<std::array<double, N>, N> ata{};
    std::array<double, N> aty{};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t i = 0; i < N; ++i) {
            aty[i] += rows[r][i] * y[r];
            for (std::size_t j = 0; j < N; ++j) ata[i][j] += rows[r][i] * rows[r][j];
        }
    }
    return solve_linear<N>(ata, aty);
}

} // namespace qkdsim
