"""Memoryless 1-to-K broadcast packet erasure channels.

A channel is the distribution of the *reception set*: the subset of receivers
that get a given slot's packet. Subsets are bitmasks, bit k set meaning
receiver k+1 received. All derived probabilities are computed by summing the
2^K pattern probabilities directly.
"""
import json
from math import comb

import numpy as np

MAX_K = 20
NORM_TOL = 1e-12


class ChannelError(ValueError):
    pass


def popcount(x):
    return bin(x).count("1")


def members(mask):
    """0-based receiver indices in ``mask``, ascending."""
    out = []
    k = 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return out


def mask_of(indices):
    m = 0
    for k in indices:
        m |= 1 << k
    return m


def subsets(mask):
    """All submasks of ``mask``, from ``mask`` down to 0."""
    s = mask
    while True:
        yield s
        if s == 0:
            return
        s = (s - 1) & mask


def fmt_set(mask):
    """1-based set notation, e.g. ``{1,3}``."""
    return "{" + ",".join(str(k + 1) for k in members(mask)) + "}"


class ChannelModel:
    """Reception-pattern probabilities of a 1-to-K broadcast PEC.

    ``probs[S]`` is the probability that exactly the receivers in ``S`` get
    the packet. Instances are treated as immutable.
    """

    def __init__(self, K, probs, kind="general"):
        if not 1 <= K <= MAX_K:
            raise ChannelError(f"K must be in [1, {MAX_K}], got {K}")
        probs = np.array(probs, dtype=float)
        if probs.shape != (1 << K,):
            raise ChannelError(f"expected {1 << K} pattern probabilities for K={K}, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or probs.min() < 0:
            raise ChannelError("pattern probabilities must be finite and non-negative")
        total = probs.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise ChannelError(f"pattern probabilities sum to {total!r}, not 1")
        probs.flags.writeable = False
        self.K = K
        self.probs = probs
        self.kind = kind
        self.full = (1 << K) - 1
        self._idx = np.arange(1 << K)
        self._cdf = None
        self._punion = {}

    def __repr__(self):
        return f"ChannelModel(K={self.K}, kind={self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, ChannelModel) and self.K == other.K and np.array_equal(self.probs, other.probs)

    def __reduce__(self):
        return (ChannelModel, (self.K, np.array(self.probs), self.kind))

    def _check_mask(self, S):
        if S < 0 or S & ~self.full:
            raise ChannelError(f"subset {S:#b} is not a subset of the {self.K} receivers")

    def p_union(self, S):
        """Probability that at least one receiver in ``S`` gets the packet."""
        self._check_mask(S)
        val = self._punion.get(S)
        if val is None:
            val = float(self.probs[(self._idx & S) != 0].sum())
            self._punion[S] = val
        return val

    def p_union_table(self):
        return np.array([self.p_union(S) for S in range(1 << self.K)])

    def f_p(self, S, T):
        """Probability that every receiver in ``S`` and none in ``T`` gets the packet."""
        self._check_mask(S)
        self._check_mask(T)
        if S & T:
            raise ChannelError(f"f_p needs disjoint sets, got S={fmt_set(S)} T={fmt_set(T)}")
        hit = ((self._idx & S) == S) & ((self._idx & T) == 0)
        return float(self.probs[hit].sum())

    def marginals(self):
        return np.array([self.p_union(1 << k) for k in range(self.K)])

    def is_symmetric(self, tol=1e-12):
        sizes = np.array([popcount(S) for S in range(1 << self.K)])
        for j in range(self.K + 1):
            vals = self.probs[sizes == j]
            if vals.max() - vals.min() > tol:
                return False
        return True

    def is_spatially_independent(self, tol=1e-12):
        return np.allclose(make_spatially_independent(self.marginals()).probs, self.probs, rtol=0, atol=tol)

    def sample(self, rng):
        """Draw one reception set."""
        return int(self.sample_many(rng, 1)[0])

    def sample_many(self, rng, n):
        """Draw ``n`` independent reception sets with one uniform per slot."""
        if self._cdf is None:
            cdf = np.cumsum(self.probs)
            cdf[-1] = np.inf
            self._cdf = cdf
        u = rng.random(n)
        out = np.searchsorted(self._cdf, u, side="right")
        # zero-probability patterns at the top can only be hit by rounding
        return np.minimum(out, (1 << self.K) - 1)

    def permuted(self, perm):
        """Relabel receivers: new receiver i is old receiver ``perm[i]``."""
        probs = np.zeros_like(self.probs)
        for S in range(1 << self.K):
            new = 0
            for i, old in enumerate(perm):
                if S >> old & 1:
                    new |= 1 << i
            probs[new] = self.probs[S]
        return ChannelModel(self.K, probs, self.kind)

    def to_json(self):
        if self.kind == "independent":
            return {"type": "independent", "p": self.marginals().tolist()}
        return {
            "type": "general",
            "K": self.K,
            "probs": {str(S): float(v) for S, v in enumerate(self.probs) if v != 0},
        }


def make_spatially_independent(p):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ChannelError("need a non-empty list of marginal success probabilities")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ChannelError(f"marginals must lie in [0, 1], got {p.tolist()}")
    K = p.size
    if K > MAX_K:
        raise ChannelError(f"K must be at most {MAX_K}")
    idx = np.arange(1 << K)
    probs = np.ones(1 << K)
    for k in range(K):
        got = (idx >> k) & 1 == 1
        probs *= np.where(got, p[k], 1 - p[k])
    return ChannelModel(K, probs, kind="independent")


def make_symmetric(K, q_by_size):
    q = np.asarray(q_by_size, dtype=float)
    if q.shape != (K + 1,):
        raise ChannelError(f"q_by_size needs K+1={K + 1} entries, got {q.size}")
    if np.any(q < 0):
        raise ChannelError("q_by_size entries must be non-negative")
    total = sum(comb(K, j) * q[j] for j in range(K + 1))
    if abs(total - 1) > NORM_TOL:
        raise ChannelError(f"sum_j C(K,j) q_by_size[j] = {total!r}, not 1")
    sizes = np.array([popcount(S) for S in range(1 << K)])
    return ChannelModel(K, q[sizes], kind="symmetric")


def symmetric_independent_q(K, p):
    """``q_by_size`` of the symmetric channel with independent marginal ``p``."""
    return np.array([p**j * (1 - p) ** (K - j) for j in range(K + 1)])


def from_spec(spec):
    """Build a channel from the JSON-shaped dict used by channel spec files."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ChannelError('channel spec must be an object with a "type" field')
    kind = spec["type"]
    try:
        if kind == "independent":
            return make_spatially_independent(spec["p"])
        if kind == "symmetric":
            return make_symmetric(int(spec["K"]), spec["q_by_size"])
        if kind == "general":
            K = int(spec["K"])
            probs = np.zeros(1 << K)
            for key, val in spec["probs"].items():
                S = int(key, 0) if isinstance(key, str) else int(key)
                if not 0 <= S < (1 << K):
                    raise ChannelError(f'probs key "{key}" is not a bitmask over {K} receivers')
                probs[S] = float(val)
            return ChannelModel(K, probs)
    except KeyError as exc:
        raise ChannelError(f'channel spec of type "{kind}" is missing field {exc.args[0]!r}') from None
    raise ChannelError(f'unknown channel type "{kind}" (expected independent, symmetric or general)')


def load_channel(path):
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ChannelError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return from_spec(spec)
    except ChannelError as exc:
        raise ChannelError(f"{path}: {exc}") from None
