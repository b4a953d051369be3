"""Capacity outer bound, LP inner bound and closed-form regions.

Rates are packets per slot. A *ray* ``phi`` is a direction in rate space; the
``*_max_scale`` functions return the largest ``t`` with ``t * phi`` inside the
region.
"""
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelError, ChannelModel, members, popcount, subsets
from .lp import INFEASIBLE, OPTIMAL, LpError, LpNumericalError, LpProblem, feasible, solve

BOUNDARY_TOL = 1e-9
MAX_OUTER_K = 8
MAX_INNER_K = 7
# own simplex up to this many rows, HiGHS above (see README, "LP backends")
AUTO_SIMPLEX_MAX_ROWS = 600


class NotOneSidedlyFair(ValueError):
    pass


# orderings ---------------------------------------------------------------

def canonical_order(K):
    """Rank array: by cardinality, then ascending bitmask."""
    sets = sorted(range(1 << K), key=lambda s: (popcount(s), s))
    rank = np.empty(1 << K, dtype=np.int64)
    rank[sets] = np.arange(1 << K)
    return rank


def revlex_order(K):
    """By cardinality, then descending bitmask."""
    sets = sorted(range(1 << K), key=lambda s: (popcount(s), -s))
    rank = np.empty(1 << K, dtype=np.int64)
    rank[sets] = np.arange(1 << K)
    return rank


def order_from_sets(sets):
    """Rank array from an explicit list of bitmasks, smallest first."""
    rank = np.full(len(sets), -1, dtype=np.int64)
    for i, s in enumerate(sets):
        rank[s] = i
    return rank


def is_cardinality_compatible(order):
    order = np.asarray(order)
    n = order.size
    if n == 0 or n & (n - 1) or sorted(order.tolist()) != list(range(n)):
        return False
    sizes = np.array([popcount(s) for s in range(n)])
    by_rank = sizes[np.argsort(order)]
    return bool(np.all(np.diff(by_rank) >= 0))


# outer bound ---------------------------------------------------------------

@lru_cache(maxsize=None)
def _perm_tables(K):
    perms = np.array(list(itertools.permutations(range(K))), dtype=np.int64).reshape(-1, K)
    prefix = np.cumsum(1 << perms, axis=1)
    return perms, prefix


def _reach_tables(ch):
    """Per channel, the permutation sums as matrices acting on R.

    ``W[i, k]`` is 1/p_union of the prefix of permutation i that ends at k, so
    the left-hand sides are ``W @ R``. ``D[i, k]`` flags a zero reach
    probability there (None when the channel reaches every prefix).
    """
    cached = getattr(ch, "_outer_cache", None)
    if cached is None:
        perms, prefix = _perm_tables(ch.K)
        pu = ch.p_union_table()[prefix]
        dead = pu == 0
        inv = np.divide(1.0, pu, out=np.zeros_like(pu), where=~dead)
        rows = np.arange(len(perms))[:, None]
        W = np.zeros(perms.shape)
        W[rows, perms] = inv
        D = None
        if dead.any():
            D = np.zeros(perms.shape)
            D[rows, perms] = dead
        cached = (W, D)
        ch._outer_cache = cached
    return cached


def _outer_sums(ch, R):
    """Left-hand side of every permutation inequality."""
    if ch.K > MAX_OUTER_K:
        raise ChannelError(f"outer bound enumerates K! permutations; K={ch.K} exceeds {MAX_OUTER_K}")
    R = np.asarray(R, dtype=float)
    if R.shape != (ch.K,):
        raise ValueError(f"rate vector needs {ch.K} entries")
    if R.min() < 0:
        raise ValueError("rates must be non-negative")
    W, D = _reach_tables(ch)
    sums = W @ R
    if D is not None:
        sums[D @ (R > 0) > 0] = np.inf
    return sums, _perm_tables(ch.K)[0]


@dataclass
class OuterCheck:
    feasible: bool
    permutation: tuple  # 1-based receiver order of the tightest inequality
    lhs: float


def outer_feasible(ch, R, tol=BOUNDARY_TOL):
    sums, perms = _outer_sums(ch, R)
    i = int(sums.argmax())
    worst = float(sums[i])
    return OuterCheck(worst <= 1 + tol, tuple((perms[i] + 1).tolist()), worst)


def outer_max_scale(ch, phi):
    phi = np.asarray(phi, dtype=float)
    if not np.any(phi > 0):
        raise ValueError("ray direction must have a positive entry")
    sums, _ = _outer_sums(ch, phi)
    worst = sums.max()
    return 0.0 if not np.isfinite(worst) else float(1.0 / worst)


def two_user_region(ch, R, tol=BOUNDARY_TOL):
    """Direct evaluation of the 1-to-2 capacity region."""
    if ch.K != 2:
        raise ChannelError("two-user region needs K=2")
    p1, p2, p12 = ch.p_union(1), ch.p_union(2), ch.p_union(3)

    def term(r, p):
        if r == 0:
            return 0.0
        return np.inf if p == 0 else r / p

    a = term(R[0], p1) + term(R[1], p12)
    b = term(R[0], p12) + term(R[1], p2)
    return a <= 1 + tol and b <= 1 + tol


def two_user_max_scale(ch, phi):
    """Boundary scale of the 1-to-2 region along ``phi``, from the two inequalities directly."""
    if ch.K != 2:
        raise ChannelError("two-user region needs K=2")
    phi = np.asarray(phi, dtype=float)
    p1, p2, p12 = ch.p_union(1), ch.p_union(2), ch.p_union(3)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (phi[0] / p1 if phi[0] else 0.0) + (phi[1] / p12 if phi[1] else 0.0)
        b = (phi[0] / p12 if phi[0] else 0.0) + (phi[1] / p2 if phi[1] else 0.0)
    worst = max(a, b)
    return 0.0 if not np.isfinite(worst) else float(1.0 / worst)


# inner bound ---------------------------------------------------------------

_KIND_ONE, _KIND_PU, _KIND_FP = 0, 1, 2


@dataclass(frozen=True)
class _Structure:
    K: int
    n_x: int
    n_w: int
    w_index: dict
    rows: np.ndarray
    cols: np.ndarray
    sign: np.ndarray
    kind: np.ndarray
    arg1: np.ndarray
    arg2: np.ndarray
    rel: tuple
    rate_rows: np.ndarray  # the K rows carrying R_k on the right
    rate_cols: np.ndarray  # w_{k;0->0} column per k
    n_rows: int


@lru_cache(maxsize=32)
def _structure(K, order_key):
    order = np.array(order_key)
    full = (1 << K) - 1
    n_x = 1 << K
    w_index = {}
    for k in range(K):
        rest = full & ~(1 << k)
        for S in sorted(subsets(rest)):
            for T in sorted(subsets(S)):
                w_index[(k, S, T)] = n_x + len(w_index)
    entries = []
    rel = []
    row = 0

    def put(col, sign, kind, a1=0, a2=0):
        entries.append((row, col, sign, kind, a1, a2))

    # total time budget (strict "< 1" taken as "<= 1")
    for S in range(n_x):
        put(S, 1.0, _KIND_ONE)
    rel.append("<=")
    row += 1
    # every group's slots cover each member's use of them
    for T in range(1, n_x):
        for k in members(T):
            Tk = T & ~(1 << k)
            put(T, -1.0, _KIND_ONE)
            for S in subsets(full & ~(1 << k)):
                if S & Tk == Tk:
                    put(w_index[(k, S, Tk)], 1.0, _KIND_ONE)
            rel.append("<=")
            row += 1
    # fresh packets leave the empty state
    rate_rows, rate_cols = [], []
    for k in range(K):
        col = w_index[(k, 0, 0)]
        put(col, 1.0, _KIND_PU, full)
        rel.append(">=")
        rate_rows.append(row)
        rate_cols.append(col)
        row += 1
    for k in range(K):
        rest = full & ~(1 << k)
        kbit = 1 << k
        pairs = [(S1, T1) for S1 in subsets(rest) for T1 in subsets(S1)]
        # every non-empty state is drained at least as fast as it fills
        for S in sorted(subsets(rest)):
            if S == 0:
                continue
            comp = full & ~S
            for T1 in subsets(S):
                put(w_index[(k, S, T1)], -1.0, _KIND_PU, comp)
            for S1, T1 in pairs:
                if T1 & S == T1 and S & S1 != S:
                    put(w_index[(k, S1, T1)], 1.0, _KIND_FP, S & ~T1, comp)
            rel.append("<=")
            row += 1
        # group-by-group causality under the ordering
        for S in sorted(subsets(rest)):
            comp = full & ~S
            for T in sorted(subsets(S)):
                if T == S:
                    continue
                g = order[T | kbit]
                put(w_index[(k, S, T)], 1.0, _KIND_PU, comp)
                for T1 in subsets(S):
                    if order[T1 | kbit] < g:
                        put(w_index[(k, S, T1)], 1.0, _KIND_PU, comp)
                for S1 in subsets(rest):
                    if order[S1] < order[S] and S1 & T == T:
                        put(w_index[(k, S1, T)], -1.0, _KIND_FP, S & ~T, comp)
                for S1, T1 in pairs:
                    if order[T1 | kbit] < g and T1 & S == T1 and S & S1 != S:
                        put(w_index[(k, S1, T1)], -1.0, _KIND_FP, S & ~T1, comp)
                rel.append("<=")
                row += 1
    e = np.array(entries, dtype=float).reshape(-1, 6)
    return _Structure(
        K=K,
        n_x=n_x,
        n_w=len(w_index),
        w_index=w_index,
        rows=e[:, 0].astype(np.int64),
        cols=e[:, 1].astype(np.int64),
        sign=e[:, 2],
        kind=e[:, 3].astype(np.int64),
        arg1=e[:, 4].astype(np.int64),
        arg2=e[:, 5].astype(np.int64),
        rel=tuple(rel),
        rate_rows=np.array(rate_rows, dtype=np.int64),
        rate_cols=np.array(rate_cols, dtype=np.int64),
        n_rows=row,
    )


def _fp_table(ch):
    """fp[S, T] = P(all of S receive, none of T receive), by direct summation."""
    idx = np.arange(1 << ch.K)
    sup = (idx[None, :] & idx[:, None]) == idx[:, None]  # sup[S, i]: pattern i contains S
    dis = (idx[None, :] & idx[:, None]) == 0  # dis[T, i]: pattern i misses T
    return (sup * ch.probs[None, :]) @ dis.T.astype(float)


class InnerBound:
    """The linear-network-code inner bound for one channel and ordering.

    The constraint matrix is built once; rate vectors and rays only change
    the right-hand side or one extra column. ``method`` is ``"simplex"``,
    ``"highs"`` or ``"auto"``; the last picks by size and retries with HiGHS
    when the built-in simplex fails, counting retries in ``fallbacks``.
    """

    def __init__(self, ch, order=None, method="auto"):
        if ch.K > MAX_INNER_K:
            raise ChannelError(f"inner bound LP is limited to K <= {MAX_INNER_K}, got {ch.K}")
        order = canonical_order(ch.K) if order is None else np.asarray(order)
        if order.shape != (1 << ch.K,) or not is_cardinality_compatible(order):
            raise ValueError("ordering must be a cardinality-compatible total order on all subsets")
        self.ch = ch
        self.order = order
        st = _structure(ch.K, tuple(int(v) for v in order))
        self.structure = st
        pu = ch.p_union_table()
        fp = _fp_table(ch)
        vals = np.where(
            st.kind == _KIND_ONE,
            1.0,
            np.where(st.kind == _KIND_PU, pu[st.arg1], fp[st.arg1, st.arg2]),
        ) * st.sign
        A = np.zeros((st.n_rows, st.n_x + st.n_w))
        np.add.at(A, (st.rows, st.cols), vals)
        self.A = A
        self.rel = list(st.rel)
        self._base = None
        # "auto" starts with the built-in simplex on small programs and hands
        # any it cannot finish (badly scaled channels) to HiGHS
        self.fallback = method == "auto"
        self.fallbacks = 0
        if method == "auto":
            method = "simplex" if st.n_rows <= AUTO_SIMPLEX_MAX_ROWS else "highs"
        self.method = method

    @property
    def num_vars(self):
        return self.structure.n_x + self.structure.n_w

    @property
    def num_constraints(self):
        return self.structure.n_rows

    def x_index(self, S):
        return S

    def w_index(self, k, S, T):
        return self.structure.w_index[(k, S, T)]

    def lp(self, R):
        """The feasibility program for rate vector ``R`` (zero objective)."""
        R = np.asarray(R, dtype=float)
        if R.shape != (self.ch.K,) or (R < 0).any():
            raise ValueError(f"rate vector needs {self.ch.K} non-negative entries")
        rhs = np.zeros(self.num_constraints)
        rhs[0] = 1.0
        rhs[self.structure.rate_rows] = R
        if self._base is None:
            self._base = LpProblem.from_arrays(self.A, self.rel, rhs)
            return self._base
        return self._base.with_rhs(rhs)

    def scale_lp(self, phi):
        """maximise t subject to the program with ``R = t * phi``; t is the last variable."""
        phi = np.asarray(phi, dtype=float)
        A = np.hstack([self.A, np.zeros((self.num_constraints, 1))])
        A[self.structure.rate_rows, -1] = -phi
        rhs = np.zeros(self.num_constraints)
        rhs[0] = 1.0
        obj = np.zeros(self.num_vars + 1)
        obj[-1] = 1.0
        return LpProblem.from_arrays(A, self.rel, rhs, obj)

    def _run(self, fn, lp):
        try:
            return fn(lp, method=self.method)
        except LpError:
            if not self.fallback or self.method == "highs":
                raise
        self.fallbacks += 1
        return fn(lp, method="highs")

    def feasible(self, R):
        return self._run(feasible, self.lp(R))

    def max_scale(self, phi, method="lp", tol=1e-9):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.ch.K,) or np.any(phi < 0) or not np.any(phi > 0):
            raise ValueError("ray direction must be non-negative with a positive entry")
        if method == "bisect":
            return self._bisect(phi, tol)
        if method != "lp":
            raise ValueError(f"unknown scaling method {method!r}")
        sol = self._run(solve, self.scale_lp(phi))
        if sol.status != OPTIMAL:
            raise LpNumericalError(f"ray program ended {sol.status}")
        return float(sol.objective)

    def _bisect(self, phi, tol):
        hi = outer_max_scale(self.ch, phi) if self.ch.K <= MAX_OUTER_K else 1.0 / phi.max()
        if hi == 0.0:
            return 0.0
        hi *= 1 + 1e-6
        lo = 0.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.feasible(mid * phi):
                lo = mid
            else:
                hi = mid
        return lo


def inner_lp(ch, R, order=None):
    return InnerBound(ch, order).lp(R)


def inner_feasible(ch, R, order=None, method="auto"):
    return InnerBound(ch, order, method).feasible(R)


def inner_max_scale(ch, phi, order=None, method="auto", scaling="lp"):
    return InnerBound(ch, order, method).max_scale(phi, method=scaling)


def inner_counts(K):
    """(x variables, w variables, constraints) of the inner-bound program."""
    st = _structure(K, tuple(int(v) for v in canonical_order(K)))
    return st.n_x, st.n_w, st.n_rows


# closed forms --------------------------------------------------------------

def is_one_sidedly_fair(p, R, tol=1e-12):
    p = np.asarray(p, dtype=float)
    R = np.asarray(R, dtype=float)
    load = R * (1 - p)
    for i in range(p.size):
        for j in range(p.size):
            if i != j and p[i] <= p[j] and load[i] < load[j] - tol:
                return False
    return True


def _osf_sum(p, R):
    order = np.argsort(p, kind="stable")
    ps = p[order]
    Rs = R[order]
    reach = 1 - np.cumprod(1 - ps)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Rs > 0, Rs / reach, 0.0)
    return terms.sum()


def _require_independent(ch):
    if not ch.is_spatially_independent():
        raise ChannelError("channel is not spatially independent")
    return ch.marginals()


def osf_capacity_check(ch, R, tol=BOUNDARY_TOL):
    """Membership test for one-sidedly fair rates on a spatially independent channel."""
    p = _require_independent(ch)
    R = np.asarray(R, dtype=float)
    if not is_one_sidedly_fair(p, R):
        raise NotOneSidedlyFair(f"rate vector {R.tolist()} is not one-sidedly fair for marginals {p.tolist()}")
    return bool(_osf_sum(p, R) <= 1 + tol)


def osf_max_scale(p, phi):
    """Boundary scale along a one-sidedly fair ray of an independent channel with marginals ``p``."""
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not is_one_sidedly_fair(p, phi):
        raise NotOneSidedlyFair(f"ray {phi.tolist()} is not one-sidedly fair")
    s = _osf_sum(p, phi)
    return 0.0 if not np.isfinite(s) else float(1 / s)


def symmetric_capacity_scale(ch, phi, cross_check=True):
    """Capacity scale along ``phi`` for a symmetric channel.

    All permutations see the same reach probabilities, so the binding one
    simply lists the largest rates first. With ``cross_check`` the full
    permutation scan is run too and must agree.
    """
    if not ch.is_symmetric():
        raise ChannelError("channel is not symmetric")
    phi = np.asarray(phi, dtype=float)
    desc = np.sort(phi)[::-1]
    reach = np.array([ch.p_union((1 << j) - 1) for j in range(1, ch.K + 1)])
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(desc > 0, desc / reach, 0.0).sum()
    t = 0.0 if not np.isfinite(s) else float(1 / s)
    if cross_check and ch.K <= MAX_OUTER_K:
        scan = outer_max_scale(ch, phi)
        if abs(scan - t) > 1e-12 * max(1.0, t):
            raise LpNumericalError(f"symmetric closed form {t} disagrees with permutation scan {scan}")
    return t


def sym_fair_sum_rate(K, p):
    """Perfectly fair sum-rate capacity of a symmetric independent channel with marginal ``p``."""
    if p <= 0:
        return 0.0
    j = np.arange(1, K + 1)
    return float(K / np.sum(1.0 / (1.0 - (1.0 - p) ** j)))


def time_sharing_scale(p, phi):
    """Largest t with sum_k t*phi_k / p_k <= 1 (each session served alone)."""
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(phi > 0, phi / p, 0.0).sum()
    return 0.0 if not np.isfinite(s) else float(1 / s)


def ray(kind, ch_or_p):
    """Named fairness rays: ``fair`` (all ones) and ``prop`` (proportional to marginals)."""
    p = ch_or_p.marginals() if isinstance(ch_or_p, ChannelModel) else np.asarray(ch_or_p, dtype=float)
    if kind == "fair":
        return np.ones(p.size)
    if kind == "prop":
        return p.copy()
    raise ValueError(f"unknown ray {kind!r}")
