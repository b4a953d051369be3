"""Experiment drivers behind the ``bcast`` command line.

Each driver is a plain function returning rows (lists of dicts) so it can be
called from tests; :mod:`bcast.cli` handles argument parsing and files.
"""
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .bounds import (
    InnerBound,
    inner_feasible,
    is_one_sidedly_fair,
    osf_max_scale,
    outer_max_scale,
    ray,
    sym_fair_sum_rate,
    symmetric_capacity_scale,
    time_sharing_scale,
    two_user_max_scale,
)
from .channel import make_spatially_independent, make_symmetric, symmetric_independent_q
from .pe import run_session, verify_payloads

GAPSTUDY_MAX_K = 6


def parse_ray(spec, ch):
    """``fair``, ``prop`` or ``custom:v1,v2,...``."""
    if spec.startswith("custom:"):
        try:
            phi = np.array([float(x) for x in spec[7:].split(",")])
        except ValueError:
            raise ValueError(f"cannot parse ray {spec!r}") from None
        if phi.shape != (ch.K,):
            raise ValueError(f"custom ray needs {ch.K} entries, got {phi.size}")
        if np.any(phi < 0) or not np.any(phi > 0):
            raise ValueError("custom ray must be non-negative with a positive entry")
        return phi
    return ray(spec, ch)


def bounds_report(ch, phi, method="auto"):
    """Outer and inner boundary scale along ``phi`` plus any closed form that applies."""
    phi = np.asarray(phi, dtype=float)
    t_out = outer_max_scale(ch, phi)
    t_in = InnerBound(ch, method=method).max_scale(phi)
    rep = {
        "K": ch.K,
        "kind": ch.kind,
        "ray": phi.tolist(),
        "t_outer": t_out,
        "t_inner": t_in,
        "gap": t_out - t_in,
        "closed_forms": {},
    }
    cf = rep["closed_forms"]
    if ch.K == 2:
        cf["two_user"] = two_user_max_scale(ch, phi)
    if ch.is_symmetric():
        cf["symmetric"] = symmetric_capacity_scale(ch, phi, cross_check=False)
    if ch.is_spatially_independent():
        p = ch.marginals()
        if is_one_sidedly_fair(p, phi):
            cf["one_sided_fair"] = osf_max_scale(p, phi)
        cf["time_sharing"] = time_sharing_scale(p, phi)
    return rep


# gap study -----------------------------------------------------------------


def trial_rng(seed, i):
    """Independent generator for trial ``i``; depends only on (seed, i)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def _gap_trial(args):
    K, seed, i, method = args
    p = trial_rng(seed, i).random(K)
    ch = make_spatially_independent(p)
    phi = np.ones(K)
    t_out = outer_max_scale(ch, phi)
    t_in = InnerBound(ch, method=method).max_scale(phi)
    return {"trial": i, **{f"p_{k + 1}": float(p[k]) for k in range(K)}, "t_outer": t_out, "t_inner": t_in, "gap": t_out - t_in}


def gapstudy(K, trials, seed, method="auto", workers=1, progress=None):
    """Fair-ray inner/outer gap on ``trials`` channels with marginals uniform on (0,1)^K."""
    if not 1 <= K <= GAPSTUDY_MAX_K:
        raise ValueError(f"gap study needs 1 <= K <= {GAPSTUDY_MAX_K}, got {K}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = [(K, seed, i, method) for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_gap_trial, jobs, chunksize=max(1, trials // (8 * workers))))
    else:
        rows = []
        for job in jobs:
            rows.append(_gap_trial(job))
            if progress:
                progress(len(rows), trials)
    gaps = np.array([r["gap"] for r in rows])
    summary = {"K": K, "trials": trials, "max_gap": float(gaps.max()), "min_gap": float(gaps.min())}
    return rows, summary


# sum-rate sweeps ------------------------------------------------------------


def parse_grid(spec):
    """``a:b:step`` -> points a, a+step, ..., b (inclusive)."""
    try:
        a, b, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must look like a:b:step, got {spec!r}") from None
    if step <= 0 or b < a:
        raise ValueError(f"grid {spec!r} needs step > 0 and b >= a")
    n = int(math.floor((b - a) / step + 1e-9))
    return [round(a + i * step, 12) for i in range(n + 1)]


def hetero_marginals(K, p):
    """p_k evenly spaced from p up to 1."""
    if K < 2:
        raise ValueError("heterogeneous profile needs K >= 2")
    return np.array([p + k * (1 - p) / (K - 1) for k in range(K)])


def sweep_symmetric(Ks, grid):
    """Fair sum-rate capacity of symmetric independent channels, with time sharing for contrast.

    ``sum_rate_fair_outer`` repeats the value through the full permutation
    scan when K is small enough to build the channel (K <= 8).
    """
    rows = []
    for K in Ks:
        for p in grid:
            row = {"K": K, "p": p, "sum_rate_fair": sym_fair_sum_rate(K, p), "sum_rate_time_sharing": p}
            if K <= 8:
                ch = make_symmetric(K, symmetric_independent_q(K, p))
                row["sum_rate_fair_outer"] = K * outer_max_scale(ch, np.ones(K))
            else:
                row["sum_rate_fair_outer"] = ""
            rows.append(row)
    return rows


def sweep_hetero(Ks, grid, method="auto"):
    """Fair and proportionally fair sum rates for p_k evenly spaced in (p, 1)."""
    rows = []
    for K in Ks:
        for p in grid:
            pk = hetero_marginals(K, p)
            ch = make_spatially_independent(pk)
            ib = InnerBound(ch, method=method)
            row = {"K": K, "p": p}
            for name in ("fair", "prop"):
                phi = ray(name, pk)
                s = phi.sum()
                row[f"{name}_outer"] = s * outer_max_scale(ch, phi)
                row[f"{name}_inner"] = s * ib.max_scale(phi)
                row[f"{name}_time_sharing"] = s * time_sharing_scale(pk, phi)
            row["sym_reference"] = sym_fair_sum_rate(K, p)
            rows.append(row)
    return rows


# Monte Carlo ---------------------------------------------------------------


def parse_rates(spec, ch):
    """Comma list of packets/slot, or ``cap:<fraction>[:fair|prop]`` of the outer boundary."""
    if spec.startswith("cap:"):
        parts = spec.split(":")
        frac = float(parts[1])
        phi = ray(parts[2] if len(parts) > 2 else "fair", ch)
        return frac * outer_max_scale(ch, phi) * phi
    R = np.array([float(x) for x in spec.split(",")])
    if R.shape != (ch.K,):
        raise ValueError(f"need {ch.K} rates, got {R.size}")
    if np.any(R < 0):
        raise ValueError("rates must be non-negative")
    return R


def slots_for(counts, rates, slack=1.10):
    """Slot budget giving every session ``slack`` times the slots its rate implies."""
    need = [c / r for c, r in zip(counts, rates) if r > 0]
    # the tolerance keeps rounding noise like 100.00000000000001 from adding a slot
    return int(math.ceil(slack * max(need) - 1e-9)) if need else 0


def simulate(
    ch, counts, n, trials, policy, q=256, seed=0, payload_len=0, check_lemmas=False, keep_traces=1, record_states=False
):
    """Run ``trials`` PE sessions. Returns (per-trial rows, summary, kept traces)."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    K = ch.K
    rows = []
    traces = []
    for i in range(trials):
        tr = run_session(
            ch,
            counts,
            n,
            policy,
            rng=trial_rng(seed, i),
            q=q,
            payload_len=payload_len,
            check_lemmas=check_lemmas,
            record_states=record_states and i < keep_traces,
        )
        dec = tr.decoded()
        row = {"trial": i, "slots_used": tr.slots_used, "end_reason": tr.end_reason}
        for k in range(K):
            row[f"decoded_{k + 1}"] = int(dec[k])
        for k in range(K):
            row[f"throughput_{k + 1}"] = (tr.spaces[k].own_rank / n) if n else 0.0
        row["lemma3_violations"] = len(tr.lemma3_violations)
        row["lemma4_violations"] = len(tr.lemma4_violations)
        if payload_len:
            row["payload_ok"] = int(verify_payloads(tr))
        rows.append(row)
        if i < keep_traces:
            traces.append(tr)
    thr = np.array([[r[f"throughput_{k + 1}"] for k in range(K)] for r in rows]).mean(axis=0)
    summary = {
        "trials": trials,
        "slots": n,
        "packets": list(counts),
        "decode_frequency": [float(np.mean([r[f"decoded_{k + 1}"] for r in rows])) for k in range(K)],
        "all_decoded_frequency": float(np.mean([all(r[f"decoded_{k + 1}"] for k in range(K)) for r in rows])),
        "mean_throughput": thr.tolist(),
        "exhaustion_rate": float(np.mean([r["end_reason"] == "exhausted" for r in rows])),
        "lemma3_violations": int(sum(r["lemma3_violations"] for r in rows)),
        "lemma4_violations": int(sum(r["lemma4_violations"] for r in rows)),
    }
    if K <= 6:
        summary["throughput_inside_inner_bound"] = bool(inner_feasible(ch, thr))
    return rows, summary, traces


__all__ = [
    "bounds_report",
    "gapstudy",
    "hetero_marginals",
    "parse_grid",
    "parse_rates",
    "parse_ray",
    "simulate",
    "slots_for",
    "sweep_hetero",
    "sweep_symmetric",
    "trial_rng",
]
