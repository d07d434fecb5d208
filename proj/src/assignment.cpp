#include "cave/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cave {

namespace {

constexpr Scalar kForbidden = 1e9;  // stand-in for infinite entries

// Shortest augmenting path over rows of an n x m matrix, n <= m, all
// entries finite. Classic lapjv recurrence with 1-based potential arrays.
std::vector<int> solve_rows(const MatX& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    std::vector<Scalar> u(n + 1, 0), v(m + 1, 0);
    std::vector<int> p(m + 1, 0);  // p[j]: row matched to column j (1-based)
    std::vector<int> way(m + 1, 0);
    std::vector<Scalar> minv(m + 1);
    std::vector<char> used(m + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), std::numeric_limits<Scalar>::infinity());
        std::fill(used.begin(), used.end(), false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            Scalar delta = std::numeric_limits<Scalar>::infinity();
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const Scalar cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j) {
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    }
    return row_to_col;
}

}  // namespace

Assignment solve_assignment(const MatX& cost) {
    Assignment out;
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    out.row_to_col.assign(n, -1);
    if (n == 0 || m == 0) return out;

    MatX capped = cost.unaryExpr([](Scalar c) {
        return std::isfinite(c) ? std::min(c, kForbidden) : kForbidden;
    });
    if (n <= m) {
        out.row_to_col = solve_rows(capped);
    } else {
        const std::vector<int> col_to_row = solve_rows(capped.transpose());
        for (int j = 0; j < m; ++j) {
            if (col_to_row[j] >= 0) out.row_to_col[col_to_row[j]] = j;
        }
    }
    for (int i = 0; i < n; ++i) {
        const int j = out.row_to_col[i];
        if (j >= 0 && std::isfinite(cost(i, j)) && cost(i, j) < kForbidden) {
            out.total_cost += cost(i, j);
        } else {
            out.row_to_col[i] = -1;  // forbidden pairing
        }
    }
    return out;
}

}  // namespace cave
