"""Independent reference computations shared by the unit and acceptance tests.

Nothing here imports the solver or the bound code; every value is computed
from first principles so it can judge them.
"""
import itertools
import math

import numpy as np


def vertex_enumeration(A, rel, b, c):
    """max c@x over {A x (rel) b, x >= 0} by trying every basic solution.

    Returns ``("optimal", value)`` or ``("infeasible", None)``. Callers must
    pass a bounded problem.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    rows = np.vstack([A, np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    eq = [i for i, r in enumerate(rel) if r == "="]
    optional = [i for i in range(m + n) if i not in eq]
    best = None
    for extra in itertools.combinations(optional, n - len(eq)):
        idx = eq + list(extra)
        M = rows[idx]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs[idx])
        if np.any(x < -1e-9):
            continue
        r = A @ x - b
        ok = all(
            (rel[i] == "<=" and r[i] <= 1e-9) or (rel[i] == ">=" and r[i] >= -1e-9) or (rel[i] == "=" and abs(r[i]) <= 1e-9)
            for i in range(m)
        )
        if ok:
            val = float(c @ x)
            best = val if best is None else max(best, val)
    return ("infeasible", None) if best is None else ("optimal", best)


def random_bounded_lp(rng, max_vars=30, budget=6000):
    """Random dense LP that vertex enumeration can still afford.

    The last row caps the sum of the variables, so the problem is bounded.
    """
    while True:
        n = int(rng.integers(1, max_vars + 1))
        m = int(rng.integers(1, 6))
        if math.comb(m + n, n) <= budget:
            break
    A = rng.uniform(-1, 1, (m - 1, n))
    rel = list(rng.choice(["<=", ">=", "="], size=m - 1, p=[0.6, 0.3, 0.1]))
    x0 = rng.uniform(0, 1, n)
    # right-hand sides around a random point so most instances are feasible
    b = A @ x0 + rng.normal(0, 0.3, m - 1)
    A = np.vstack([A, np.ones(n)])
    rel.append("<=")
    b = np.append(b, n)
    c = rng.normal(size=n)
    return A, rel, b, c


def two_user_slacks(p1, p2, p12, R1, R2):
    """Slack of the two inequalities of the 1-to-2 capacity region (negative = violated).

    Zero marginal with positive rate counts as infinitely violated.
    """

    def ratio(r, p):
        if r == 0:
            return 0.0
        return math.inf if p == 0 else r / p

    return 1 - (ratio(R1, p1) + ratio(R2, p12)), 1 - (ratio(R1, p12) + ratio(R2, p2))


def pattern_sum(probs, pred):
    """Sum of pattern probabilities whose bitmask satisfies ``pred``."""
    return sum(p for S, p in enumerate(probs) if pred(S))


def permutation_scale(probs, K, phi):
    """Largest t with t*phi in the permutation outer bound, by plain loops."""
    worst = 0.0
    for perm in itertools.permutations(range(K)):
        total = 0.0
        seen = 0
        for k in perm:
            seen |= 1 << k
            if phi[k] > 0:
                reach = pattern_sum(probs, lambda S: S & seen)
                total += math.inf if reach == 0 else phi[k] / reach
        worst = max(worst, total)
    return 0.0 if math.isinf(worst) else 1.0 / worst


def random_general_channel(rng, K):
    """Uniform point on the probability simplex over the 2^K reception patterns."""
    return rng.dirichlet(np.ones(1 << K))
