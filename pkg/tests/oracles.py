"""Independent reference computations used to derive frozen test values."""

from fractions import Fraction
from itertools import permutations


def fib_matrix(n):
    # [[1,1],[1,0]]^n by repeated squaring; F(n) is the off-diagonal entry
    def mul(x, y):
        return [[x[0][0] * y[0][0] + x[0][1] * y[1][0], x[0][0] * y[0][1] + x[0][1] * y[1][1]],
                [x[1][0] * y[0][0] + x[1][1] * y[1][0], x[1][0] * y[0][1] + x[1][1] * y[1][1]]]
    result = [[1, 0], [0, 1]]
    base = [[1, 1], [1, 0]]
    while n:
        if n & 1:
            result = mul(result, base)
        base = mul(base, base)
        n >>= 1
    return result[0][1]


def queens_by_permutation(n):
    """Count by brute force over column permutations (n <= 9 is quick)."""
    return sum(
        1 for perm in permutations(range(n))
        if len({r + c for r, c in enumerate(perm)}) == n and len({r - c for r, c in enumerate(perm)}) == n
    )


def victim_weights(distances):
    """Exact 1/(n r^2) weights, normalised, from a victim -> distance map."""
    count = {}
    for r in distances.values():
        count[r] = count.get(r, 0) + 1
    w = {j: Fraction(1, count[r] * r * r) for j, r in distances.items()}
    total = sum(w.values())
    return {j: v / total for j, v in w.items()}


def log2_floor(x):
    return x.bit_length() - 1


def footprint_bound(live, metadata):
    return (log2_floor(2 * live + 1) + 1) * metadata + 4 * live
