"""Arithmetic in GF(2^m) and dense linear algebra over it.

Elements are plain ints in ``[0, 2**m)``; bit i is the coefficient of x^i.
Matrices and vectors are ``numpy.uint16`` arrays. Reduction polynomials are
fixed per exponent so every run is reproducible bit for bit:

====  ==========================  =======
m     polynomial                  hex
====  ==========================  =======
4     x^4 + x + 1                 0x13
8     x^8 + x^4 + x^3 + x + 1     0x11B
16    x^16 + x^12 + x^3 + x + 1   0x1100B
====  ==========================  =======
"""
from functools import lru_cache

import numpy as np

from . import kernels

IRREDUCIBLE = {4: 0x13, 8: 0x11B, 16: 0x1100B}


def clmul(a, b, poly, m):
    """Carry-less product of ``a`` and ``b`` reduced modulo ``poly``."""
    prod = 0
    while b:
        if b & 1:
            prod ^= a
        b >>= 1
        a <<= 1
        if a >> m:
            a ^= poly
    return prod


class GF:
    """The field GF(2^m) for m in {4, 8, 16}.

    Multiplication goes through exp/log tables built from the smallest
    primitive element, which is found at construction time.
    """

    def __init__(self, m=8):
        if m not in IRREDUCIBLE:
            raise ValueError(f"unsupported field exponent m={m}; choose one of {sorted(IRREDUCIBLE)}")
        self.m = m
        self.q = 1 << m
        self.poly = IRREDUCIBLE[m]
        self.generator, exp = _find_generator(m, self.poly)
        qm1 = self.q - 1
        self.exp = np.concatenate([exp, exp]).astype(np.uint16)
        log = np.zeros(self.q, dtype=np.int32)
        log[exp] = np.arange(qm1, dtype=np.int32)
        self.log = log
        self._exp_list = self.exp.tolist()
        self._log_list = log.tolist()
        self._mul_table = None

    def __repr__(self):
        return f"GF(2^{self.m}, poly={self.poly:#x})"

    def __eq__(self, other):
        return isinstance(other, GF) and other.m == self.m

    def __hash__(self):
        return hash(("GF", self.m))

    def __reduce__(self):
        return (GF, (self.m,))

    @staticmethod
    def add(a, b):
        return a ^ b

    sub = add

    def mul(self, a, b):
        if a == 0 or b == 0:
            return 0
        return self._exp_list[self._log_list[a] + self._log_list[b]]

    def inv(self, a):
        if a == 0:
            raise ZeroDivisionError("0 has no inverse in GF(2^m)")
        return self._exp_list[(self.q - 1 - self._log_list[a]) % (self.q - 1)]

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def pow(self, a, e):
        if a == 0:
            return 0 if e else 1
        return self._exp_list[(self._log_list[a] * e) % (self.q - 1)]

    def mul_table(self):
        """Full q x q product table as nested lists (only for m <= 8)."""
        if self.m > 8:
            raise ValueError("product table is only built for m <= 8")
        if self._mul_table is None:
            idx = np.arange(self.q)
            t = np.zeros((self.q, self.q), dtype=np.uint16)
            t[1:, 1:] = self.exp[self.log[idx[1:, None]] + self.log[idx[None, 1:]]]
            self._mul_table = t.tolist()
        return self._mul_table

    def scale(self, c, arr):
        """Element-wise ``c * arr`` for a uint16 array."""
        arr = np.asarray(arr, dtype=np.uint16)
        if c == 0:
            return np.zeros_like(arr)
        out = np.zeros_like(arr)
        nz = arr != 0
        out[nz] = self.exp[self._log_list[c] + self.log[arr[nz]]]
        return out

    def matmul(self, A, B):
        """Matrix product over the field (small operands; used by tests and payload encoding)."""
        A = np.atleast_2d(np.asarray(A, dtype=np.uint16))
        B = np.atleast_2d(np.asarray(B, dtype=np.uint16))
        out = np.zeros((A.shape[0], B.shape[1]), dtype=np.uint16)
        for i, j in zip(*np.nonzero(A)):
            out[i] ^= self.scale(int(A[i, j]), B[j])
        return out

    def random_nonzero(self, rng, size=None):
        return rng.integers(1, self.q, size=size)

    # dense linear algebra -------------------------------------------------

    def row_reduce(self, M):
        """Return ``(R, pivots)``: the reduced row echelon form of ``M`` and its pivot columns.

        ``R`` keeps only the nonzero rows, so ``len(pivots) == R.shape[0]``.
        """
        R = np.array(M, dtype=np.uint16, copy=True, order="C", ndmin=2)
        pivots = kernels.gf_rref(R, self.exp, self.log, self.q - 1)
        return R[: len(pivots)].copy(), list(pivots)

    def rank(self, M):
        M = np.asarray(M, dtype=np.uint16)
        if M.size == 0:
            return 0
        return len(self.row_reduce(M)[1])

    def in_span(self, v, basis):
        """True iff ``v`` is a linear combination of the rows of ``basis``."""
        v = np.array(v, dtype=np.uint16, copy=True, order="C")
        basis = np.asarray(basis, dtype=np.uint16)
        if basis.size == 0:
            return not v.any()
        basis = np.atleast_2d(basis)
        if basis.shape[1] != v.shape[0]:
            raise ValueError(f"dimension mismatch: vector has {v.shape[0]} entries, basis rows have {basis.shape[1]}")
        R, pivots = self.row_reduce(basis)
        return not kernels.gf_reduce(R, np.asarray(pivots, dtype=np.intp), v, self.exp, self.log)


@lru_cache(maxsize=None)
def _tables(m, poly):
    q = 1 << m
    for g in range(2, q):
        exp = np.empty(q - 1, dtype=np.int64)
        x = 1
        for i in range(q - 1):
            exp[i] = x
            x = clmul(x, g, poly, m)
            if x == 1 and i < q - 2:
                break
        else:
            if x == 1:
                return g, exp
    raise ValueError(f"no primitive element for polynomial {poly:#x}")


def _find_generator(m, poly):
    g, exp = _tables(m, poly)
    return g, exp.copy()


def field_new(m=8):
    return GF(m)
