"""NumPy versions of the routines in ``_kernels.pyx``.

Selected automatically when the compiled extension is unavailable, or when
``BCAST_PURE_PYTHON=1`` is set. Pivot choices mirror the compiled code.
"""
import numpy as np

ZAP = 1e-13
RATIO_TIE = 1e-12
HARRIS_TOL = 1e-9


def simplex_pivot(T, r, c):
    row = T[r] / T[r, c]
    row[c] = 1.0
    T[r] = row
    col = T[:, c].copy()
    col[r] = 0.0
    hit = np.flatnonzero(col)
    if hit.size:
        nz = np.flatnonzero(row)
        block = T[np.ix_(hit, nz)] - np.outer(col[hit], row[nz])
        block[np.abs(block) < ZAP] = 0.0
        T[np.ix_(hit, nz)] = block
        T[hit, c] = 0.0


def simplex_iterate(T, basis, n_enter, max_iter, tol, rule, degen_limit):
    m = T.shape[0] - 1
    it = 0
    degen = 0
    while True:
        costs = T[m, :n_enter]
        if rule == 0 or degen >= degen_limit:
            cand = np.flatnonzero(costs < -tol)
            c = int(cand[0]) if cand.size else -1
        else:
            c = int(np.argmin(costs))
            if costs[c] >= -tol:
                c = -1
        if c < 0:
            return 0, it
        if it >= max_iter:
            return 2, it
        col = T[:m, c]
        ok = np.flatnonzero(col > tol)
        if ok.size == 0:
            return 1, it
        ratios = T[ok, -1] / col[ok]
        best = ratios.min()
        ties = ok[ratios <= best + RATIO_TIE]
        r = int(ties[np.argmin(basis[ties])])
        if T[r, -1] <= RATIO_TIE:
            degen += 1
        else:
            degen = 0
        simplex_pivot(T, r, c)
        basis[r] = c
        it += 1


def _mul_rows(factor_logs, row, exp, log):
    """Outer product in log domain: result[i, j] = exp[f_i + log[row_j]] (0 where row_j == 0)."""
    nz = row != 0
    out = np.zeros((factor_logs.size, row.size), dtype=np.uint16)
    out[:, nz] = exp[factor_logs[:, None] + log[row[nz]][None, :]]
    return out


def gf_rref(M, exp, log, qm1):
    rows, cols = M.shape
    r = 0
    pivots = []
    for c in range(cols):
        if r == rows:
            break
        nzr = np.flatnonzero(M[r:, c])
        if nzr.size == 0:
            continue
        p = r + int(nzr[0])
        if p != r:
            M[[p, r]] = M[[r, p]]
        inv_log = (qm1 - int(log[M[r, c]])) % qm1
        M[r] = _mul_rows(np.array([inv_log]), M[r], exp, log)[0]
        others = np.flatnonzero(M[:, c])
        others = others[others != r]
        if others.size:
            M[others] ^= _mul_rows(log[M[others, c]], M[r], exp, log)
        pivots.append(c)
        r += 1
    return pivots


def gf_reduce(R, pivots, v, exp, log):
    for k, c in enumerate(pivots):
        if v[c]:
            v ^= _mul_rows(np.array([log[v[c]]]), R[k], exp, log)[0]
    return bool(v.any())


def dual_simplex_iterate(T, basis, n_enter, max_iter, tol, feas_tol, degen_limit=50):
    m = T.shape[0] - 1
    it = 0
    degen = 0
    while True:
        use_bland = degen >= degen_limit
        rhs = T[:m, -1]
        bad = np.flatnonzero(rhs < -feas_tol)
        if bad.size == 0:
            return 0, it
        if it >= max_iter:
            return 2, it
        if use_bland:
            r = int(bad[np.argmin(basis[bad])])
        else:
            r = int(np.argmin(rhs))
        row = T[r, :n_enter]
        cand = np.flatnonzero(row < -tol)
        if cand.size == 0:
            return 1, it
        d = np.maximum(T[m, cand], 0.0)
        a = -row[cand]
        ratios = d / a
        if use_bland:
            k = 0
            for i in range(1, cand.size):
                if ratios[i] < ratios[k] - RATIO_TIE:
                    k = i
        else:
            # Harris two-pass ratio test
            ok = np.flatnonzero(ratios <= np.min((d + HARRIS_TOL) / a))
            k = int(ok[np.argmax(a[ok])])
        c = int(cand[k])
        best = ratios[k]
        if best <= RATIO_TIE:
            degen += 1
        else:
            degen = 0
        simplex_pivot(T, r, c)
        basis[r] = c
        it += 1


def phase_one(T, basis, art_rows, n_real, max_iter, tol, rule, degen_limit, pattern):
    m = T.shape[0] - 1
    perturbed = len(pattern) > 0
    if perturbed:
        d = pattern * (1.0 + np.abs(T[:m, -1]))
        T[:m, -2] = d
        T[:m, -1] += d
    art = T[np.asarray(art_rows, dtype=np.intp)]
    T[m] = 0.0
    T[m, :n_real] = -art[:, :n_real].sum(axis=0)
    T[m, -2:] = -art[:, -2:].sum(axis=0)
    status, it = simplex_iterate(T, basis, n_real, max_iter, tol, rule, degen_limit)
    if status != 2 and perturbed:
        T[:, -1] -= T[:, -2]
        T[:, -2] = 0.0
    if status == 0 and perturbed:
        status, dit = dual_simplex_iterate(T, basis, n_real, max_iter, tol, 1e-12, degen_limit)
        it += dit
        if status == 1:
            status = 3
        elif status == 0:
            status, pit = simplex_iterate(T, basis, n_real, max_iter, tol, 0, 0)
            it += pit
    return status, it, -T[m, -1]
