"""Packet Evolution (PE) coding over a broadcast packet erasure channel.

Every information packet X_{k,j} carries a coding vector ``v`` and an
overhearing set ``S``. At each decision epoch the source picks a target set
T, one target packet per k in T, and transmits a random combination of the
targets' vectors until some target's overhearing set changes.

Coding vectors are sparse ``{column: coefficient}`` dicts over GF(q); column
``offset[k] + j`` belongs to packet X_{k,j} (0-based k and j). Sets are
bitmasks as in :mod:`bcast.channel`.
"""
import heapq
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .bounds import canonical_order, is_cardinality_compatible
from .channel import fmt_set, mask_of, members, popcount, subsets
from .gf import GF

#: scripted five-slot, three-receiver session used as a regression example
WORKED_EXAMPLE = os.path.join(os.path.dirname(__file__), "data", "worked_example.json")


class NoEligiblePacket(LookupError):
    """Packet selection found no packet of some session for the requested T."""

    def __init__(self, k, T):
        super().__init__(f"no packet of session {k + 1} is eligible for T={fmt_set(T)}")
        self.k = k
        self.T = T


class ScriptError(ValueError):
    pass


def _axpy(w, f, row, exp, log):
    """w += f * row over GF(2^m), in place on the dict ``w``."""
    lf = log[f]
    for c, a in row.items():
        val = w.get(c, 0) ^ exp[lf + log[a]]
        if val:
            w[c] = val
        else:
            del w[c]


class PacketState:
    __slots__ = ("k", "j", "v", "S")

    def __init__(self, k, j, v, S=0):
        self.k = k
        self.j = j
        self.v = v
        self.S = S

    @property
    def delivered(self):
        return bool(self.S >> self.k & 1)

    def __repr__(self):
        return f"X[{self.k + 1},{self.j + 1}](S={fmt_set(self.S)}, v={self.v})"


class KnowledgeSpace:
    """Row-reduced span of the vectors one receiver has heard.

    Columns are relabelled so the receiver's own session comes first
    (0 .. n_own-1) and rows are kept in echelon form with the *largest*
    relabelled column as pivot. A row whose pivot is below ``n_own`` then lies
    entirely inside the receiver's message space, which makes both the
    decoding test and the non-interference test a single reduction.

    Rows are never modified after insertion, so :meth:`fork` is cheap.
    """

    def __init__(self, field, dim, own_lo, own_hi, track_payload=False):
        self.field = field
        self.dim = dim
        self.lo = own_lo
        self.n_own = own_hi - own_lo
        self.rows = {}
        self.payloads = {} if track_payload else None
        self.own_rank = 0
        self.last_tx = None

    def _relabel(self, v):
        lo, hi, n_own = self.lo, self.lo + self.n_own, self.n_own
        out = {}
        for c, a in v.items():
            if lo <= c < hi:
                out[c - lo] = a
            elif c < lo:
                out[c + n_own] = a
            else:
                out[c] = a
        return out

    def _global(self, c):
        if c < self.n_own:
            return c + self.lo
        if c < self.lo + self.n_own:
            return c - self.n_own
        return c

    def _reduce(self, w, y=None, stop_below=None):
        """Reduce ``w`` in place. Returns the leftover pivot column or None if w became 0.

        With ``stop_below`` set, stops as soon as every remaining column is below it.
        """
        exp, log = self.field._exp_list, self.field._log_list
        rows = self.rows
        while w:
            p = max(w)
            if stop_below is not None and p < stop_below:
                return p
            row = rows.get(p)
            if row is None:
                return p
            f = w[p]
            _axpy(w, f, row, exp, log)
            if y is not None:
                y ^= self.field.scale(f, self.payloads[p])
        return None

    def insert(self, v, payload=None):
        """Add a received vector; True if it increased the rank."""
        w = self._relabel(v)
        y = None
        if self.payloads is not None:
            y = np.array(payload, dtype=np.uint16, copy=True)
        p = self._reduce(w, y)
        if p is None:
            return False
        f = w[p]
        if f != 1:
            inv = self.field.inv(f)
            mul = self.field.mul
            w = {c: mul(inv, a) for c, a in w.items()}
            if y is not None:
                y = self.field.scale(inv, y)
        self.rows[p] = w
        if y is not None:
            self.payloads[p] = y
        if p < self.n_own:
            self.own_rank += 1
        return True

    def non_interfering(self, v):
        """True iff ``v`` lies in span(received vectors, own message space)."""
        w = self._relabel(v)
        return self._reduce(w, stop_below=self.n_own) is None or max(w) < self.n_own

    def contains(self, v):
        return self._reduce(self._relabel(v)) is None

    @property
    def rank(self):
        return len(self.rows)

    @property
    def foreign_rank(self):
        return len(self.rows) - self.own_rank

    @property
    def decodable(self):
        return self.own_rank == self.n_own

    def fork(self):
        twin = KnowledgeSpace.__new__(KnowledgeSpace)
        twin.__dict__.update(self.__dict__)
        twin.rows = dict(self.rows)
        if self.payloads is not None:
            twin.payloads = dict(self.payloads)
        return twin

    def basis(self):
        """Rows as a dense uint16 matrix in the original column order."""
        M = np.zeros((len(self.rows), self.dim), dtype=np.uint16)
        for i, row in enumerate(self.rows.values()):
            for c, a in row.items():
                M[i, self._global(c)] = a
        return M

    def recover(self):
        """Back-substitute the own-session rows; returns an (n_own, L) array or None."""
        if not self.decodable or self.payloads is None:
            return None
        exp, log = self.field._exp_list, self.field._log_list
        solved = {}
        for p in range(self.n_own):
            row = self.rows[p]
            y = self.payloads[p].copy()
            for c, a in row.items():
                if c != p:
                    y ^= self.field.scale(a, solved[c])
            solved[p] = y
        if not solved:
            return np.zeros((0, 0), dtype=np.uint16)
        return np.stack([solved[p] for p in range(self.n_own)])


class SourceState:
    """Source-side PE state: packet vectors and overhearing sets, f_change, current v_tx."""

    def __init__(self, counts, field=None):
        self.counts = [int(c) for c in counts]
        if any(c < 0 for c in self.counts):
            raise ValueError("packet counts must be non-negative")
        self.K = len(self.counts)
        self.field = field or GF(8)
        self.offset = np.concatenate([[0], np.cumsum(self.counts)]).astype(int).tolist()
        self.dim = self.offset[-1]
        self.packets = [
            [PacketState(k, j, {self.offset[k] + j: 1}) for j in range(n)] for k, n in enumerate(self.counts)
        ]
        self.bucket_size = {}
        self._heaps = {}
        for k, n in enumerate(self.counts):
            if n:
                self.bucket_size[(k, 0)] = n
                self._heaps[(k, 0)] = list(range(n))
        self.undelivered = list(self.counts)
        self.f_change = True
        self.T = 0
        self.targets = {}
        self.coeffs = {}
        self.v_tx = {}
        self.tx_id = 0
        self.t = 0

    def packet(self, k, j):
        return self.packets[k][j]

    @property
    def done(self):
        return not any(self.undelivered)

    def has_exact(self, k, T):
        return self.bucket_size.get((k, T & ~(1 << k)), 0) > 0

    def eligible_states(self, k, T):
        """Occupied overhearing sets S of undelivered session-k packets with S ∪ {k} ⊇ T."""
        need = T & ~(1 << k)
        free = ((1 << self.K) - 1) & ~need & ~(1 << k)
        out = []
        for extra in subsets(free):
            S = need | extra
            if self.bucket_size.get((k, S), 0):
                out.append(S)
        return out

    def has_eligible(self, k, T):
        return bool(self.eligible_states(k, T))

    def _lowest(self, k, S):
        h = self._heaps.get((k, S))
        pk = self.packets[k]
        while h:
            j = h[0]
            if pk[j].S == S:
                return j
            heapq.heappop(h)
        raise AssertionError("bucket count and heap disagree")

    def packet_selection(self, T):
        """Pick one target per k in T: exact match S = T minus k first, lowest j.

        When no exact match exists the smallest eligible superset state is used
        (fewest receivers, then lowest bitmask). Raises NoEligiblePacket.
        """
        if T == 0:
            raise ValueError("target set must be non-empty")
        targets = {}
        for k in members(T):
            if self.has_exact(k, T):
                S = T & ~(1 << k)
            else:
                states = self.eligible_states(k, T)
                if not states:
                    raise NoEligiblePacket(k, T)
                S = min(states, key=lambda s: (popcount(s), s))
            targets[k] = self._lowest(k, S)
        return targets

    def build_tx_vector(self, targets, rng=None, coeffs=None):
        """v_tx = sum of c_k v(X_k) with c_k uniform over the nonzero field elements."""
        ks = sorted(targets)
        if coeffs is None:
            coeffs = dict(zip(ks, self.field.random_nonzero(rng, len(ks)).tolist()))
        exp, log = self.field._exp_list, self.field._log_list
        v = {}
        for k in ks:
            c = int(coeffs[k])
            if not 0 < c < self.field.q:
                raise ValueError(f"coefficient {c} is not a nonzero element of GF({self.field.q})")
            _axpy(v, c, self.packets[k][targets[k]].v, exp, log)
        return v, coeffs

    def start_epoch(self, T, targets, v_tx, coeffs):
        self.T = T
        self.targets = dict(targets)
        self.coeffs = dict(coeffs)
        self.v_tx = v_tx
        self.tx_id += 1
        self.f_change = False

    def _move(self, pkt, S_new):
        key = (pkt.k, pkt.S)
        self.bucket_size[key] -= 1
        if pkt.S >> pkt.k & 1 == 0 and S_new >> pkt.k & 1:
            self.undelivered[pkt.k] -= 1
        pkt.S = S_new
        if not S_new >> pkt.k & 1:
            key = (pkt.k, S_new)
            self.bucket_size[key] = self.bucket_size.get(key, 0) + 1
            heapq.heappush(self._heaps.setdefault(key, []), pkt.j)

    def update(self, S_rx):
        """Apply the COF of one slot; returns the list of target packets that evolved."""
        changed = []
        T = self.T
        for k, j in self.targets.items():
            pkt = self.packets[k][j]
            if S_rx & ~pkt.S:
                S_new = (T & pkt.S) | S_rx
                if pkt.S >> k & 1:
                    # delivered packets are not tracked in buckets
                    pkt.S = S_new
                else:
                    self._move(pkt, S_new)
                pkt.v = self.v_tx
                changed.append(pkt)
        if changed:
            self.f_change = True
        return changed

    def snapshot(self):
        """Per-packet ``(v as dense tuple, S bitmask)`` in session/index order."""
        out = []
        for row in self.packets:
            for pkt in row:
                dense = [0] * self.dim
                for c, a in pkt.v.items():
                    dense[c] = a
                out.append((tuple(dense), pkt.S))
        return out


# policies ---------------------------------------------------------------


class Policy:
    """Chooses T at each decision epoch. Subclasses override :meth:`choose`."""

    name = "base"

    def choose(self, src):
        raise NotImplementedError

    def select(self, src, T):
        return src.packet_selection(T)

    def coefficients(self, src, T, targets):
        return None

    def reception(self, t):
        return None


def _order_list(K, order):
    rank = canonical_order(K) if order is None else np.asarray(order)
    if rank.shape != (1 << K,) or not is_cardinality_compatible(rank):
        raise ValueError("ordering must be a cardinality-compatible total order on all subsets")
    return [int(s) for s in np.argsort(rank, kind="stable") if s]


class PhaseOrder(Policy):
    """Serve T in increasing order, moving on only when exact-match traffic for smaller T is gone.

    Epoch rule: the first T (in the order) for which every k in T has a packet
    with S = T minus k. Failing that, the first T where every member has an
    eligible packet and at least one has an exact match. Failing that, the
    first T where every member has an eligible packet.
    """

    name = "phase-order"

    def __init__(self, order=None):
        self.order = order
        self._sets = None

    def _prepare(self, K):
        if self._sets is None or len(self._sets) != (1 << K) - 1:
            self._sets = [(T, members(T)) for T in _order_list(K, self.order)]
        return self._sets

    def choose(self, src):
        sets = self._prepare(src.K)
        live = [n > 0 for n in src.undelivered]
        active = [(T, ks) for T, ks in sets if all(live[k] for k in ks)]
        for T, ks in active:
            if all(src.has_exact(k, T) for k in ks):
                return T
        for T, ks in active:
            if any(src.has_exact(k, T) for k in ks) and all(src.has_eligible(k, T) for k in ks):
                return T
        for T, ks in active:
            if all(src.has_eligible(k, T) for k in ks):
                return T
        return None


class GreedyMax(Policy):
    """The largest T (in the order) whose members all have an eligible packet."""

    name = "greedy-max"

    def __init__(self, order=None):
        self.order = order
        self._sets = None

    def choose(self, src):
        if self._sets is None or len(self._sets) != (1 << src.K) - 1:
            self._sets = [(T, members(T)) for T in reversed(_order_list(src.K, self.order))]
        live = [n > 0 for n in src.undelivered]
        for T, ks in self._sets:
            if all(live[k] for k in ks) and all(src.has_eligible(k, T) for k in ks):
                return T
        return None


class Scripted(Policy):
    """Replays a fixed list of slots.

    Each slot is a dict with ``S_rx`` (1-based receivers) and, for slots that
    start a decision epoch, ``T`` plus optional ``coeffs`` (one per member of
    T, ascending) and ``targets`` (1-based packet index per member of T).
    """

    name = "scripted"

    def __init__(self, slots):
        self.slots = [dict(s) for s in slots]
        self._t = 0

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScriptError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        slots = doc["slots"] if isinstance(doc, dict) else doc
        pol = cls(slots)
        pol.meta = doc if isinstance(doc, dict) else {}
        return pol

    def _slot(self, t):
        if t > len(self.slots):
            return None
        return self.slots[t - 1]

    def choose(self, src):
        slot = self._slot(src.t)
        if slot is None:
            return None
        if "T" not in slot:
            raise ScriptError(f"slot {src.t} starts a decision epoch but gives no T")
        T = mask_of(k - 1 for k in slot["T"])
        if not T or T >> src.K:
            raise ScriptError(f"slot {src.t}: T={slot['T']} is not a non-empty subset of 1..{src.K}")
        return T

    def select(self, src, T):
        slot = self._slot(src.t)
        if "targets" not in slot:
            return src.packet_selection(T)
        ks = members(T)
        targets = {k: int(j) - 1 for k, j in zip(ks, slot["targets"])}
        for k, j in targets.items():
            pkt = src.packet(k, j)
            if (pkt.S | 1 << k) & T != T:
                raise ScriptError(f"slot {src.t}: X[{k + 1},{j + 1}] is not eligible for T={fmt_set(T)}")
        return targets

    def coefficients(self, src, T, targets):
        slot = self._slot(src.t)
        if "coeffs" not in slot:
            return None
        ks = sorted(targets)
        if len(slot["coeffs"]) != len(ks):
            raise ScriptError(f"slot {src.t}: need {len(ks)} coefficients, got {len(slot['coeffs'])}")
        return dict(zip(ks, (int(c) for c in slot["coeffs"])))

    def reception(self, t):
        slot = self._slot(t)
        if slot is None or "S_rx" not in slot:
            return None
        return mask_of(k - 1 for k in slot["S_rx"])


def make_policy(spec, order=None):
    """``"phase-order"``, ``"greedy-max"`` or ``"scripted:<file>"``."""
    if isinstance(spec, Policy):
        return spec
    if spec == "phase-order":
        return PhaseOrder(order)
    if spec == "greedy-max":
        return GreedyMax(order)
    if isinstance(spec, str) and spec.startswith("scripted:"):
        return Scripted.from_json(spec.split(":", 1)[1])
    raise ValueError(f"unknown policy {spec!r} (phase-order, greedy-max or scripted:<file>)")


# sessions ---------------------------------------------------------------


@dataclass
class SlotRecord:
    t: int
    T: int
    v_tx: dict
    S_rx: int
    f_change_after: bool
    new_epoch: bool = False
    states: list = None


@dataclass
class SessionTrace:
    K: int
    counts: list
    q: int
    slots: list = field(default_factory=list)
    source: SourceState = None
    spaces: list = None
    end_reason: str = "slots"
    lemma3_violations: list = field(default_factory=list)
    lemma4_violations: list = field(default_factory=list)
    payloads: np.ndarray = None
    seed: object = None

    @property
    def slots_used(self):
        return len(self.slots)

    def decoded(self):
        return [sp.decodable for sp in self.spaces]

    def _packet_block(self, states, width):
        if states is None:
            return {}
        out = []
        idx = 0
        for k, n in enumerate(self.counts):
            for j in range(n):
                v, S = states[idx]
                out.append({"X": [k + 1, j + 1], "v": [f"{a:0{width}x}" for a in v], "S": [i + 1 for i in members(S)]})
                idx += 1
        return {"packets": out}

    def to_jsonl(self, path_or_fh):
        """One JSON record per slot, then a final summary record."""
        fh = open(path_or_fh, "w") if isinstance(path_or_fh, str) else path_or_fh
        try:
            dim = sum(self.counts)
            width = max(1, (self.q.bit_length() - 1) // 4)
            for rec in self.slots:
                fh.write(
                    json.dumps(
                        {
                            "t": rec.t,
                            "T": [k + 1 for k in members(rec.T)],
                            "v_tx": {"dim": dim, "coords": {str(c): f"{a:0{width}x}" for c, a in sorted(rec.v_tx.items())}},
                            "S_rx": [k + 1 for k in members(rec.S_rx)],
                            "f_change_after": bool(rec.f_change_after),
                            **self._packet_block(rec.states, width),
                        }
                    )
                    + "\n"
                )
            fh.write(
                json.dumps(
                    {
                        "final": True,
                        "end_reason": self.end_reason,
                        "slots_used": self.slots_used,
                        "decoded": self.decoded(),
                        "rank": [sp.rank for sp in self.spaces],
                        "own_rank": [sp.own_rank for sp in self.spaces],
                        "packets": self.counts,
                        "lemma3_violations": len(self.lemma3_violations),
                        "lemma4_violations": len(self.lemma4_violations),
                    }
                )
                + "\n"
            )
        finally:
            if fh is not path_or_fh:
                fh.close()


def check_lemma3(src, spaces, packets=None):
    """Every packet's v must be non-interfering for each receiver in S ∪ {k}.

    Returns ``(True, None)`` or ``(False, (k, j, i))`` naming a 0-based
    counterexample: packet X_{k,j} interferes at receiver i.
    """
    pkts = packets if packets is not None else (p for row in src.packets for p in row)
    for pkt in pkts:
        for i in members(pkt.S | 1 << pkt.k):
            if not spaces[i].non_interfering(pkt.v):
                return False, (pkt.k, pkt.j, i)
    return True, None


def check_lemma4(src, spaces):
    """span(Z_k, R_k) == span(Z_k, M_k) for every k, by rank comparison.

    Returns ``(True, None)`` or ``(False, k)`` for the first failing receiver.
    """
    for k in range(src.K):
        Z = spaces[k]
        zr = Z.fork()
        zr.payloads = None
        for pkt in src.packets[k]:
            if not pkt.S >> k & 1:
                zr.insert(pkt.v)
        r_zr = zr.rank
        r_zm = Z.n_own + Z.foreign_rank
        r_zrm = zr.n_own + zr.foreign_rank
        if not r_zr == r_zm == r_zrm:
            return False, k
    return True, None


def _rngs(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    rx, coef, data = rng.spawn(3)
    return rx, coef, data


def run_session(
    ch,
    counts,
    n,
    policy="phase-order",
    rng=None,
    q=256,
    payload_len=0,
    check_lemmas=False,
    lemma4_every=1,
    record_states=False,
    order=None,
):
    """Run one PE session of at most ``n`` slots and return its :class:`SessionTrace`.

    ``counts[k]`` is the number of information packets for receiver k (nR_k).
    The session stops early once every packet is delivered, or when the
    policy has nothing left to send. ``payload_len > 0`` also pushes random
    payload symbols through the code so :func:`decode` can verify them.
    """
    K = ch.K
    if len(counts) != K:
        raise ValueError(f"need {K} packet counts, got {len(counts)}")
    if n < 0:
        raise ValueError("slot budget must be non-negative")
    m = {16: 4, 256: 8, 65536: 16}.get(q)
    if m is None:
        raise ValueError(f"q must be 16, 256 or 65536, got {q}")
    gf = GF(m)
    pol = make_policy(policy, order)
    rx_rng, coef_rng, data_rng = _rngs(rng)
    src = SourceState(counts, gf)
    track = payload_len > 0
    X = None
    if track:
        X = data_rng.integers(0, gf.q, size=(src.dim, payload_len)).astype(np.uint16)
    spaces = [KnowledgeSpace(gf, src.dim, src.offset[k], src.offset[k + 1], track) for k in range(K)]
    trace = SessionTrace(K, list(src.counts), gf.q, source=src, spaces=spaces, payloads=X)
    if record_states:
        trace.initial_states = src.snapshot()
    receptions = ch.sample_many(rx_rng, n) if n else np.zeros(0, dtype=int)
    y_tx = None
    for t in range(1, n + 1):
        src.t = t
        if src.done:
            trace.end_reason = "delivered"
            break
        new_epoch = src.f_change
        if src.f_change:
            T = pol.choose(src)
            if T is None:
                trace.end_reason = "exhausted"
                break
            targets = pol.select(src, T)
            v_tx, coeffs = src.build_tx_vector(targets, coef_rng, pol.coefficients(src, T, targets))
            src.start_epoch(T, targets, v_tx, coeffs)
            if track:
                y_tx = np.zeros(payload_len, dtype=np.uint16)
                for c, a in v_tx.items():
                    y_tx ^= gf.scale(a, X[c])
        S_rx = pol.reception(t)
        if S_rx is None:
            S_rx = int(receptions[t - 1])
        for i in members(S_rx):
            sp = spaces[i]
            if sp.last_tx != src.tx_id:
                sp.last_tx = src.tx_id
                sp.insert(src.v_tx, y_tx)
        changed = src.update(S_rx)
        if check_lemmas:
            ok, bad = check_lemma3(src, spaces, changed)
            if not ok:
                trace.lemma3_violations.append((t, bad))
            if lemma4_every and t % lemma4_every == 0:
                ok, bad = check_lemma4(src, spaces)
                if not ok:
                    trace.lemma4_violations.append((t, bad))
        trace.slots.append(
            SlotRecord(
                t,
                src.T,
                src.v_tx,
                S_rx,
                src.f_change,
                new_epoch,
                src.snapshot() if record_states else None,
            )
        )
    else:
        if src.done:
            trace.end_reason = "delivered"
    return trace


def decode(trace, k):
    """``(decoded, packets)`` for 0-based receiver k.

    ``packets`` holds the recovered payload rows when the session simulated
    payloads and decoding succeeded, else None.
    """
    sp = trace.spaces[k]
    if not sp.decodable:
        return False, None
    return True, sp.recover()


def verify_payloads(trace):
    """True iff every decodable receiver recovered exactly its own payloads."""
    if trace.payloads is None:
        raise ValueError("session was run without payload simulation")
    off = trace.source.offset
    for k, sp in enumerate(trace.spaces):
        ok, got = decode(trace, k)
        if ok and not np.array_equal(got.reshape(-1, trace.payloads.shape[1]), trace.payloads[off[k] : off[k + 1]]):
            return False
    return True
