"""Small linear-programming engine for the bound programs.

``solve`` runs a two-phase primal simplex on a dense tableau. Pivoting is done
by the kernels in :mod:`bcast.kernels`. Every optimal answer is checked
against the original constraints before it is returned.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels

RESIDUAL_TOL = 1e-9
OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"
_RELS = ("<=", ">=", "=")
_RULES = {"bland": 0, "dantzig": 1}
_CODE = {"<=": -1, "=": 0, ">=": 1}


class LpError(RuntimeError):
    """Numerical trouble inside the solver (iteration cap, residual check)."""


class LpIterationError(LpError):
    pass


class LpNumericalError(LpError):
    pass


@dataclass
class LpProblem:
    """maximise ``objective @ x`` subject to rows ``A[i] @ x (rel[i]) rhs[i]`` and ``x >= lower``."""

    num_vars: int
    objective: np.ndarray = None
    lower: np.ndarray = None
    _rows: list = field(default_factory=list, repr=False)
    _rel: list = field(default_factory=list, repr=False)
    _rhs: list = field(default_factory=list, repr=False)
    _matrix: np.ndarray = field(default=None, repr=False)
    _skeletons: dict = field(default_factory=dict, repr=False)
    _code_cache: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.num_vars
        self.objective = np.zeros(n) if self.objective is None else np.asarray(self.objective, dtype=float)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        if self.objective.shape != (n,) or self.lower.shape != (n,):
            raise ValueError("objective and lower bounds need one entry per variable")

    @classmethod
    def from_arrays(cls, A, rel, rhs, objective=None, lower=None):
        A = np.asarray(A, dtype=float)
        lp = cls(A.shape[1], objective, lower)
        if A.shape[0] != len(rel) or A.shape[0] != len(rhs):
            raise ValueError("A, rel and rhs disagree on the number of constraints")
        bad = set(rel) - set(_RELS)
        if bad:
            raise ValueError(f"unknown relation {bad.pop()!r}")
        lp._matrix = A
        lp._rel = list(rel)
        lp._rhs = [float(b) for b in rhs]
        return lp

    def add_constraint(self, coeffs, rel, rhs):
        """Append a row; ``coeffs`` is a dense sequence or a ``{var: coeff}`` dict."""
        if rel not in _RELS:
            raise ValueError(f"unknown relation {rel!r}")
        if not np.isfinite(rhs):
            raise ValueError("right-hand side must be finite")
        if isinstance(coeffs, dict):
            row = np.zeros(self.num_vars)
            for j, a in coeffs.items():
                row[j] += a
        else:
            row = np.asarray(coeffs, dtype=float)
            if row.shape != (self.num_vars,):
                raise ValueError(f"constraint has {row.size} coefficients, expected {self.num_vars}")
        if self._matrix is not None:
            self._rows = list(self._matrix)
            self._matrix = None
        self._skeletons = {}
        self._code_cache = None
        self._rows.append(row)
        self._rel.append(rel)
        self._rhs.append(float(rhs))

    def _codes(self):
        if self._code_cache is None or self._code_cache.size != len(self._rel):
            self._code_cache = np.array([_CODE[r] for r in self._rel], dtype=np.int8)
        return self._code_cache

    @property
    def num_constraints(self):
        return len(self._rel)

    def arrays(self):
        """``(A, rel, rhs)`` with ``A`` dense of shape (constraints, vars)."""
        if self._matrix is None:
            self._matrix = np.array(self._rows, dtype=float).reshape(len(self._rows), self.num_vars)
            self._rows = []
        return self._matrix, list(self._rel), np.array(self._rhs, dtype=float)

    def with_rhs(self, rhs):
        """Same rows and objective with a new right-hand side (no re-validation of A)."""
        A, rel, _ = self.arrays()
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (len(rel),) or not np.isfinite(rhs).all():
            raise ValueError(f"need {len(rel)} finite right-hand sides")
        twin = object.__new__(LpProblem)
        twin.__dict__.update(self.__dict__)
        twin._rel = rel
        twin._rhs = rhs.tolist()
        twin._rows = []
        return twin

    def violation(self, x):
        """Largest constraint or bound violation of the point ``x``."""
        A, rel, b = self.arrays()
        worst = float(np.max(self.lower - x, initial=0.0))
        if A.shape[0]:
            r = A @ x - b
            rel = np.asarray(rel)
            viol = np.where(rel == "<=", r, np.where(rel == ">=", -r, np.abs(r)))
            worst = max(worst, float(viol.max(initial=0.0)))
        return worst


@dataclass
class LpSolution:
    status: str
    values: np.ndarray = None
    objective: float = None
    iterations: int = 0
    residual: float = None

    @property
    def optimal(self):
        return self.status == OPTIMAL


_PATTERN = np.random.default_rng(0x5EED).random(1024)


def _perturb_pattern(m):
    """The first m entries of a fixed uniform sequence (grown on demand)."""
    global _PATTERN
    if m > _PATTERN.size:
        _PATTERN = np.random.default_rng(0x5EED).random(max(m, 2 * _PATTERN.size))
    return _PATTERN[:m]


@lru_cache(maxsize=64)
def _scaled_pattern(m, eps):
    out = eps * (1 + _perturb_pattern(m))
    out.flags.writeable = False
    return out


class _Tableau:
    """Standard-form tableau built from an ``LpProblem``.

    Column order: structural, slack/surplus, artificial, perturbation, rhs.
    Lower bounds are shifted out first. The perturbation column carries
    B^-1 delta so the right-hand-side perturbation can be removed exactly.
    """

    def __init__(self, lp):
        A, rel, b = lp.arrays()
        m, n = A.shape
        if lp.lower.any():
            b = b - A @ lp.lower
        flip = b < 0
        code = lp._codes()
        flip |= (b == 0) & (code == 1)
        key = flip.tobytes()
        skel = lp._skeletons.get(key)
        if skel is None:
            skel = self._skeleton(A, code, flip)
            lp._skeletons[key] = skel
        T, basis, self.n_real, self.art_rows, self.std = skel
        self.T = T.copy()
        self.T[:m, -1] = np.abs(b)
        self.basis = basis.copy()
        self.n = n
        self.b = np.abs(b)
        self.m = m

    @staticmethod
    def _skeleton(A, code, flip):
        """Everything except the right-hand side; depends only on which rows are flipped."""
        m, n = A.shape
        A = np.where(flip[:, None], -A, A)
        # after flipping, "<=" rows keep a +1 slack and ">=" rows a -1 surplus
        code = np.where(flip, -code, code)
        le = code == -1
        has_slack = code != 0
        has_art = ~le
        n_slack = int(has_slack.sum())
        n_art = int(has_art.sum())
        ntot = n + n_slack + n_art
        T = np.zeros((m + 1, ntot + 2))
        T[:m, :n] = A
        rows = np.arange(m)
        slack_col = n + np.cumsum(has_slack) - 1
        art_col = n + n_slack + np.cumsum(has_art) - 1
        T[rows[has_slack], slack_col[has_slack]] = np.where(le[has_slack], 1.0, -1.0)
        T[rows[has_art], art_col[has_art]] = 1.0
        basis = np.where(le, slack_col, art_col).astype(np.intp)
        std = T[:m, :ntot].copy()
        std.flags.writeable = False
        return T, basis, n + n_slack, rows[has_art].astype(np.intp), std

    def perturb(self, eps):
        """Shift every basic value up by a small, fixed pseudo-random amount."""
        if eps <= 0:
            return
        m = self.m
        rhs = self.T[:m, -1]
        delta = np.abs(rhs)
        delta += 1.0
        delta *= _scaled_pattern(m, eps)
        self.T[:m, -2] = delta
        rhs += delta

    def unperturb(self):
        self.T[:, -1] -= self.T[:, -2]
        self.T[:, -2] = 0.0

    def drop_artificials(self):
        keep = list(range(self.n_real)) + [self.T.shape[1] - 2, self.T.shape[1] - 1]
        self.T = np.ascontiguousarray(self.T[:, keep])


def _optimize(tab, rule, tol, cap, eps):
    """Perturbed primal simplex, then exact clean-up. Returns (status, iterations)."""
    status, it = kernels.simplex_iterate(tab.T, tab.basis, tab.n_real, cap, tol, _RULES[rule], 50)
    if status == 2:
        raise LpIterationError(f"simplex hit the iteration cap ({cap})")
    if eps > 0:
        tab.unperturb()
    if status == 1:
        return UNBOUNDED, it
    if eps > 0:
        dstat, dit = kernels.dual_simplex_iterate(tab.T, tab.basis, tab.n_real, cap, tol, 1e-12)
        it += dit
        if dstat == 2:
            raise LpIterationError(f"dual clean-up hit the iteration cap ({cap})")
        if dstat == 1:
            return INFEASIBLE, it
        # reduced costs may have drifted by rounding; finish without perturbation
        status, pit = kernels.simplex_iterate(tab.T, tab.basis, tab.n_real, cap, tol, 0, 0)
        it += pit
        if status == 2:
            raise LpIterationError(f"simplex hit the iteration cap ({cap})")
        if status == 1:
            return UNBOUNDED, it
    return OPTIMAL, it


_NO_PATTERN = np.zeros(0)


def _phase_one(tab, rule, tol, cap, eps):
    """Drive artificials to zero. Returns (feasible, iterations)."""
    if not len(tab.art_rows):
        return True, 0
    m = tab.m
    pattern = _scaled_pattern(m, eps) if eps > 0 else _NO_PATTERN
    status, it, obj = kernels.phase_one(tab.T, tab.basis, tab.art_rows, tab.n_real, cap, tol, _RULES[rule], 50, pattern)
    if status == 2:
        raise LpIterationError(f"simplex hit the iteration cap ({cap})")
    if status != 0 or obj > RESIDUAL_TOL:
        return False, it
    T = tab.T
    # pivot remaining (zero-level) artificials out of the basis
    stuck = np.flatnonzero(tab.basis >= tab.n_real)
    if not stuck.size:
        return True, it
    drop = []
    for i in stuck.tolist():
        row = T[i, : tab.n_real]
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > tol:
            kernels.simplex_pivot(T, i, j)
            tab.basis[i] = j
        else:
            drop.append(i)
    if drop:
        dropped = set(drop)
        keep = [i for i in range(m) if i not in dropped]
        rows = keep + [m]
        tab.T = np.ascontiguousarray(T[rows])
        tab.basis = np.ascontiguousarray(tab.basis[keep])
        tab.std = tab.std[keep]
        tab.b = tab.b[keep]
        tab.m = len(keep)
    return True, it


def _extract(tab):
    x = np.zeros(tab.n_real)
    for i, j in enumerate(tab.basis):
        if j < tab.n_real:
            x[j] = tab.T[i, -1]
    return x


def _refine(tab):
    """Recompute basic values from the original columns."""
    B = tab.std[:, tab.basis]
    xb = np.linalg.lstsq(B, tab.b, rcond=None)[0]
    x = np.zeros(tab.std.shape[1])
    x[tab.basis] = xb
    return x[: tab.n_real]


def _finish(tab, lp, iters):
    x = np.maximum(_extract(tab)[: lp.num_vars], 0.0) + lp.lower
    res = lp.violation(x)
    if res > RESIDUAL_TOL:
        x = np.maximum(_refine(tab)[: lp.num_vars], 0.0) + lp.lower
        res = lp.violation(x)
        if res > RESIDUAL_TOL:
            raise LpNumericalError(f"solution violates constraints by {res:.3g}")
    return LpSolution(OPTIMAL, x, float(lp.objective @ x), iters, res)


def _cap(lp):
    return 50 * (lp.num_vars + lp.num_constraints)


def _no_constraints(lp):
    if np.any(lp.objective > 0):
        return LpSolution(UNBOUNDED)
    x = lp.lower.copy()
    return LpSolution(OPTIMAL, x, float(lp.objective @ x), 0, 0.0)


def solve(lp, method="simplex", rule="dantzig", tol=1e-9, perturbation=1e-7):
    """Maximise ``lp``; returns an :class:`LpSolution`.

    The built-in simplex perturbs the right-hand side by ``perturbation``
    (relative) to step off degenerate vertices, then removes it and restores
    feasibility with dual simplex pivots, so the answer is for the exact
    problem. ``rule`` picks the entering column: ``"dantzig"`` (most negative
    reduced cost, switching to Bland's rule after 50 degenerate pivots in a
    row) or ``"bland"`` throughout. ``method="highs"`` hands the problem to
    SciPy's HiGHS instead; the residual check applies to both.
    """
    if method == "highs":
        return _solve_highs(lp)
    if method != "simplex":
        raise ValueError(f"unknown LP method {method!r}")
    if rule not in _RULES:
        raise ValueError(f"unknown pivot rule {rule!r}")
    if lp.num_constraints == 0:
        return _no_constraints(lp)
    cap = _cap(lp)
    tab = _Tableau(lp)
    ok, it1 = _phase_one(tab, rule, tol, cap, perturbation)
    if not ok:
        return LpSolution(INFEASIBLE, iterations=it1)
    tab.drop_artificials()
    tab.perturb(perturbation)
    T = tab.T
    m = tab.m
    cost = np.zeros(tab.n_real)
    cost[: lp.num_vars] = -lp.objective
    T[m] = 0.0
    T[m, : tab.n_real] = cost
    for i, j in enumerate(tab.basis):
        if cost[j] != 0.0:
            T[m] -= cost[j] * T[i]
    status, it2 = _optimize(tab, rule, tol, cap, perturbation)
    if status != OPTIMAL:
        return LpSolution(status, iterations=it1 + it2)
    return _finish(tab, lp, it1 + it2)


def feasible(lp, method="simplex", rule="dantzig", tol=1e-9, perturbation=1e-7):
    """True iff the constraints of ``lp`` admit a point (phase one only)."""
    if method == "highs":
        probe = LpProblem.from_arrays(*lp.arrays(), objective=np.zeros(lp.num_vars), lower=lp.lower)
        return _solve_highs(probe).status == OPTIMAL
    if lp.num_constraints == 0:
        return True
    tab = _Tableau(lp)
    ok, _ = _phase_one(tab, rule, tol, _cap(lp), perturbation)
    return ok


def _solve_highs(lp):
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix

    A, rel, b = lp.arrays()
    rel = np.asarray(rel)
    ub = rel != "="
    sign = np.where(rel == ">=", -1.0, 1.0)
    A_ub = (A * sign[:, None])[ub]
    b_ub = (b * sign)[ub]
    eq = rel == "="
    res = linprog(
        -lp.objective,
        A_ub=csr_matrix(A_ub) if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=csr_matrix(A[eq]) if eq.any() else None,
        b_eq=b[eq] if eq.any() else None,
        bounds=[(lo, None) for lo in lp.lower],
        # interior point + crossover without presolve is the fastest exact
        # option on the bound programs (about 0.5 s at K=6)
        method="highs-ipm",
        options={"presolve": False, "primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        return LpSolution(INFEASIBLE)
    if res.status == 3:
        return LpSolution(UNBOUNDED)
    if res.status != 0:
        raise LpNumericalError(f"HiGHS failed: {res.message}")
    x = np.asarray(res.x, dtype=float)
    viol = lp.violation(x)
    if viol > RESIDUAL_TOL:
        raise LpNumericalError(f"HiGHS solution violates constraints by {viol:.3g}")
    return LpSolution(OPTIMAL, x, float(lp.objective @ x), int(getattr(res, "nit", 0)), viol)
