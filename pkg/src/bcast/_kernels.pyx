# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: tableau simplex pivoting and dense GF(2^m) elimination.

Every function here has a line-for-line twin in ``_fallback.py``; the two must
make the same pivot choices so results agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

DEF ZAP = 1e-13
DEF RATIO_TIE = 1e-12
DEF HARRIS_TOL = 1e-9


cdef void _pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c,
                 Py_ssize_t[::1] nz) noexcept nogil:
    cdef Py_ssize_t rows = T.shape[0], cols = T.shape[1]
    cdef Py_ssize_t i, j, jj, nnz = 0
    cdef double piv = T[r, c], f, v
    for j in range(cols):
        if T[r, j] != 0.0:
            T[r, j] = T[r, j] / piv
            nz[nnz] = j
            nnz += 1
    T[r, c] = 1.0
    for i in range(rows):
        if i == r:
            continue
        f = T[i, c]
        if f == 0.0:
            continue
        for jj in range(nnz):
            j = nz[jj]
            v = T[i, j] - f * T[r, j]
            if fabs(v) < ZAP:
                v = 0.0
            T[i, j] = v
        T[i, c] = 0.0


cdef int _primal(double[:, ::1] T, Py_ssize_t[::1] basis, Py_ssize_t n_enter,
                 Py_ssize_t max_iter, double tol, int rule, Py_ssize_t degen_limit,
                 Py_ssize_t[::1] nz, Py_ssize_t* iters) noexcept nogil:
    cdef Py_ssize_t m = T.shape[0] - 1
    cdef Py_ssize_t rhs = T.shape[1] - 1
    cdef Py_ssize_t it = 0, i, j, c, r, degen = 0
    cdef double best, d, a, ratio
    cdef bint use_bland
    cdef int status = -1
    while True:
        use_bland = rule == 0 or degen >= degen_limit
        c = -1
        if use_bland:
            for j in range(n_enter):
                if T[m, j] < -tol:
                    c = j
                    break
        else:
            best = -tol
            for j in range(n_enter):
                d = T[m, j]
                if d < best:
                    best = d
                    c = j
        if c < 0:
            status = 0
            break
        if it >= max_iter:
            status = 2
            break
        best = 0.0
        r = -1
        for i in range(m):
            a = T[i, c]
            if a > tol:
                ratio = T[i, rhs] / a
                if r < 0 or ratio < best:
                    best = ratio
                    r = i
        if r < 0:
            status = 1
            break
        # Bland tie-break: lowest basic index among near-minimal ratios
        for i in range(m):
            a = T[i, c]
            if a > tol and basis[i] < basis[r]:
                if T[i, rhs] / a <= best + RATIO_TIE:
                    r = i
        if T[r, rhs] <= RATIO_TIE:
            degen += 1
        else:
            degen = 0
        _pivot(T, r, c, nz)
        basis[r] = c
        it += 1
    iters[0] += it
    return status


def simplex_iterate(double[:, ::1] T, Py_ssize_t[::1] basis, Py_ssize_t n_enter,
                    Py_ssize_t max_iter, double tol, int rule, Py_ssize_t degen_limit):
    """Run primal simplex pivots on a minimisation tableau in place.

    The last row holds reduced costs, the last column the right-hand side.
    ``rule`` 0 is Bland's rule throughout; 1 uses the most negative reduced
    cost but falls back to Bland after ``degen_limit`` consecutive degenerate
    pivots. Returns ``(status, iterations)`` with status 0 optimal,
    1 unbounded, 2 iteration cap reached.
    """
    cdef Py_ssize_t[::1] nz = np.empty(T.shape[1], dtype=np.intp)
    cdef Py_ssize_t it = 0
    cdef int status
    with nogil:
        status = _primal(T, basis, n_enter, max_iter, tol, rule, degen_limit, nz, &it)
    return status, it


def simplex_pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c):
    cdef Py_ssize_t[::1] nz = np.empty(T.shape[1], dtype=np.intp)
    with nogil:
        _pivot(T, r, c, nz)


def gf_rref(cnp.uint16_t[:, ::1] M, const cnp.uint16_t[::1] exp,
            const cnp.int32_t[::1] log, int qm1):
    """Reduce ``M`` to reduced row echelon form in place; return pivot columns."""
    cdef Py_ssize_t rows = M.shape[0], cols = M.shape[1]
    cdef Py_ssize_t r = 0, c, i, j, p
    cdef int f, inv_log
    cdef cnp.uint16_t tmp
    pivots = []
    for c in range(cols):
        if r == rows:
            break
        p = -1
        for i in range(r, rows):
            if M[i, c] != 0:
                p = i
                break
        if p < 0:
            continue
        if p != r:
            for j in range(cols):
                tmp = M[p, j]
                M[p, j] = M[r, j]
                M[r, j] = tmp
        inv_log = (qm1 - log[M[r, c]]) % qm1
        for j in range(c, cols):
            if M[r, j] != 0:
                M[r, j] = exp[log[M[r, j]] + inv_log]
        for i in range(rows):
            if i == r or M[i, c] == 0:
                continue
            f = log[M[i, c]]
            for j in range(c, cols):
                if M[r, j] != 0:
                    M[i, j] ^= exp[f + log[M[r, j]]]
        pivots.append(c)
        r += 1
    return pivots


def gf_reduce(const cnp.uint16_t[:, ::1] R, const Py_ssize_t[::1] pivots,
              cnp.uint16_t[::1] v, const cnp.uint16_t[::1] exp,
              const cnp.int32_t[::1] log):
    """Subtract the RREF rows ``R`` from ``v`` in place; True if a residue remains."""
    cdef Py_ssize_t k, j, c, cols = v.shape[0]
    cdef int f
    for k in range(pivots.shape[0]):
        c = pivots[k]
        if v[c] == 0:
            continue
        f = log[v[c]]
        for j in range(cols):
            if R[k, j] != 0:
                v[j] ^= exp[f + log[R[k, j]]]
    for j in range(cols):
        if v[j] != 0:
            return True
    return False


cdef int _dual(double[:, ::1] T, Py_ssize_t[::1] basis, Py_ssize_t n_enter,
               Py_ssize_t max_iter, double tol, double feas_tol, Py_ssize_t degen_limit,
               Py_ssize_t[::1] nz, Py_ssize_t* iters) noexcept nogil:
    cdef Py_ssize_t m = T.shape[0] - 1
    cdef Py_ssize_t rhs = T.shape[1] - 1
    cdef Py_ssize_t it = 0, i, j, c, r, degen = 0
    cdef double worst, best, a, ratio, d, bound
    cdef bint use_bland
    cdef int status = -1
    while True:
        use_bland = degen >= degen_limit
        r = -1
        worst = -feas_tol
        for i in range(m):
            if T[i, rhs] < -feas_tol:
                if use_bland:
                    # smallest basic index leaves
                    if r < 0 or basis[i] < basis[r]:
                        r = i
                elif T[i, rhs] < worst:
                    worst = T[i, rhs]
                    r = i
        if r < 0:
            status = 0
            break
        if it >= max_iter:
            status = 2
            break
        c = -1
        best = 0.0
        if use_bland:
            for j in range(n_enter):
                a = T[r, j]
                if a < -tol:
                    d = T[m, j]
                    if d < 0.0:
                        d = 0.0
                    ratio = d / (-a)
                    if c < 0 or ratio < best - RATIO_TIE:
                        best = ratio
                        c = j
        else:
            # Harris two-pass: bound the step with slightly relaxed reduced
            # costs, then take the largest pivot among columns within it
            bound = INFINITY
            for j in range(n_enter):
                a = T[r, j]
                if a < -tol:
                    d = T[m, j]
                    if d < 0.0:
                        d = 0.0
                    ratio = (d + HARRIS_TOL) / (-a)
                    if ratio < bound:
                        bound = ratio
            for j in range(n_enter):
                a = T[r, j]
                if a < -tol:
                    d = T[m, j]
                    if d < 0.0:
                        d = 0.0
                    ratio = d / (-a)
                    if ratio <= bound and (c < 0 or -a > -T[r, c]):
                        best = ratio
                        c = j
        if c < 0:
            status = 1
            break
        if best <= RATIO_TIE:
            degen += 1
        else:
            degen = 0
        _pivot(T, r, c, nz)
        basis[r] = c
        it += 1
    iters[0] += it
    return status


def dual_simplex_iterate(double[:, ::1] T, Py_ssize_t[::1] basis, Py_ssize_t n_enter,
                         Py_ssize_t max_iter, double tol, double feas_tol, Py_ssize_t degen_limit=50):
    """Dual simplex pivots until every right-hand side is >= -feas_tol.

    Assumes the reduced costs in the last row are non-negative. The leaving
    row is the most infeasible one and the ratio test is Harris's two-pass
    rule, which prefers large pivots, switching to smallest-index choices for both after
    ``degen_limit`` consecutive dual-degenerate pivots. Returns
    ``(status, iterations)``: 0 primal feasible, 1 primal infeasible,
    2 iteration cap reached.
    """
    cdef Py_ssize_t[::1] nz = np.empty(T.shape[1], dtype=np.intp)
    cdef Py_ssize_t it = 0
    cdef int status
    with nogil:
        status = _dual(T, basis, n_enter, max_iter, tol, feas_tol, degen_limit, nz, &it)
    return status, it


def phase_one(double[:, ::1] T, Py_ssize_t[::1] basis, const Py_ssize_t[::1] art_rows,
              Py_ssize_t n_real, Py_ssize_t max_iter, double tol, int rule,
              Py_ssize_t degen_limit, const double[::1] pattern):
    """Minimise the sum of the artificials of a fresh phase-one tableau.

    Columns: ``n_real`` structural and slack columns, artificials, a
    perturbation column, the right-hand side. With a non-empty ``pattern``
    the right-hand side is first raised by ``pattern * (1 + |rhs|)``; after
    the perturbed optimum the shift is removed and dual then primal pivots
    restore an exact optimum. Returns ``(status, iterations, objective)``
    with the same status codes as the drivers above, plus 3 when the
    clean-up finds the unperturbed problem primal infeasible.
    """
    cdef Py_ssize_t m = T.shape[0] - 1
    cdef Py_ssize_t cols = T.shape[1]
    cdef Py_ssize_t rhs = cols - 1, pert = cols - 2
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t it = 0
    cdef Py_ssize_t[::1] nz = np.empty(cols, dtype=np.intp)
    cdef bint perturbed = pattern.shape[0] > 0
    cdef double d
    cdef int status
    with nogil:
        if perturbed:
            for i in range(m):
                d = pattern[i] * (1.0 + fabs(T[i, rhs]))
                T[i, pert] = d
                T[i, rhs] += d
        for j in range(cols):
            T[m, j] = 0.0
        for k in range(art_rows.shape[0]):
            i = art_rows[k]
            for j in range(n_real):
                T[m, j] -= T[i, j]
            T[m, pert] -= T[i, pert]
            T[m, rhs] -= T[i, rhs]
        status = _primal(T, basis, n_real, max_iter, tol, rule, degen_limit, nz, &it)
        if status != 2 and perturbed:
            for i in range(m + 1):
                T[i, rhs] -= T[i, pert]
                T[i, pert] = 0.0
        if status == 0 and perturbed:
            status = _dual(T, basis, n_real, max_iter, tol, 1e-12, degen_limit, nz, &it)
            if status == 1:
                status = 3
            elif status == 0:
                # reduced costs may have drifted by rounding; finish without perturbation
                status = _primal(T, basis, n_real, max_iter, tol, 0, 0, nz, &it)
    return status, it, -T[m, rhs]
