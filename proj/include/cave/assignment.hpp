#pragma once

#include "cave/types.hpp"

#include <vector>

namespace cave {

struct Assignment {
    // row_to_col[r] = assigned column for row r, or -1 when unassigned.
    std::vector<int> row_to_col;
    Scalar total_cost = 0;
};

// Minimum-cost rectangular assignment (Jonker-Volgenant style shortest
// augmenting path, O(n^2 m)). Every row of an n x m cost matrix with
// n <= m gets a column; for n > m the transposed problem is solved.
// Infinite entries mark forbidden pairs.
Assignment solve_assignment(const MatX& cost);

}  // namespace cave
