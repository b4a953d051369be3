import csv
import json

import numpy as np
import pytest

from bcast import __version__, cli
from bcast.bounds import outer_max_scale, two_user_max_scale
from bcast.channel import make_spatially_independent
from bcast.experiments import (
    gapstudy,
    hetero_marginals,
    parse_grid,
    parse_rates,
    parse_ray,
    simulate,
    slots_for,
    sweep_hetero,
    sweep_symmetric,
)
from bcast.lp import LpNumericalError
from bcast.pe import WORKED_EXAMPLE


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(path):
    lines = path.read_text().splitlines()
    body = [x for x in lines[1:] if not x.startswith("#")]
    return lines[0], list(csv.DictReader(body))


# bounds --------------------------------------------------------------------


def test_bounds_two_user(capsys, tmp_path):
    out = tmp_path / "b.json"
    code, text, _ = run(["bounds", "--p", "0.5,0.5", "--out", str(out)], capsys)
    assert code == 0
    assert "t_outer  0.3" in text
    rep = json.loads(out.read_text())
    assert rep["t_outer"] == pytest.approx(0.3)
    assert rep["t_inner"] == pytest.approx(0.3, abs=1e-9)
    assert rep["closed_forms"]["two_user"] == pytest.approx(0.3)
    assert rep["closed_forms"]["symmetric"] == pytest.approx(0.3)
    assert rep["provenance"].startswith(f"bcast {__version__}")


def test_bounds_channel_file_and_custom_ray(capsys, tmp_path):
    f = tmp_path / "ch.json"
    f.write_text(json.dumps({"type": "general", "K": 2, "probs": {"0": 0.1, "1": 0.3, "2": 0.2, "3": 0.4}}))
    code, text, _ = run(["bounds", "--channel", str(f), "--ray", "custom:1,2"], capsys)
    assert code == 0
    assert "channel=general" in text


@pytest.mark.parametrize(
    "argv",
    [
        ["bounds"],
        ["bounds", "--p", "0.5,0.5", "--channel", "x.json"],
        ["bounds", "--p", "0.5,abc"],
        ["bounds", "--p", "0.5,1.5"],
        ["bounds", "--p", "0.5,0.5", "--ray", "custom:1"],
        ["bounds", "--p", "0.5,0.5", "--ray", "sideways"],
        ["bounds", "--channel", "/nonexistent/ch.json"],
        ["gapstudy", "--K", "7", "--trials", "1"],
        ["sweep", "--mode", "sym", "--K", "2", "--pgrid", "1:0:0.1"],
        ["sweep", "--mode", "hetero", "--K", "7", "--pgrid", "0.5:0.5:0.1"],
        ["simulate", "--p", "0.5,0.5"],
        ["simulate", "--p", "0.5,0.5", "--packets", "1,2,3", "--slots", "10"],
        ["simulate", "--p", "0.5", "--packets", "1", "--slots", "10", "--trials", "0"],
        ["simulate", "--policy", "scripted:/nonexistent.json"],
        ["frobnicate"],
        ["bounds", "--method", "cplex", "--p", "0.5"],
    ],
)
def test_configuration_errors_exit_2(argv, capsys):
    code, _, _ = run(argv, capsys)
    assert code == 2


def test_numerical_failure_exits_3(capsys, monkeypatch):
    def boom(*a, **k):
        raise LpNumericalError("solution violates constraints by 1e-3")

    monkeypatch.setattr(cli, "bounds_report", boom)
    code, _, err = run(["bounds", "--p", "0.5,0.5"], capsys)
    assert code == 3 and "numerical" in err


# gap study ---------------------------------------------------------------------


def test_gapstudy_csv_is_reproducible(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for f in (a, b):
        code, _, _ = run(["gapstudy", "--K", "3", "--trials", "4", "--seed", "11", "--out", str(f), "--quiet"], capsys)
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    head, rows = read_csv(a)
    assert head.startswith(f"# bcast {__version__} seed=11 config_hash=")
    assert len(rows) == 4
    assert all(float(r["gap"]) <= 1e-6 for r in rows)
    assert a.read_text().splitlines()[-1].startswith("# trials=4")


def test_gapstudy_trial_depends_only_on_seed_and_index():
    one, _ = gapstudy(3, 1, seed=5)
    three, _ = gapstudy(3, 3, seed=5)
    assert one[0] == three[0]
    with pytest.raises(ValueError):
        gapstudy(2, 0, seed=5)


def test_gapstudy_workers_match_serial():
    serial, _ = gapstudy(2, 6, seed=1)
    par, _ = gapstudy(2, 6, seed=1, workers=2)
    assert serial == par


# sweeps ------------------------------------------------------------------------


def test_grid_parsing():
    assert parse_grid("0.1:0.5:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert parse_grid("0.5:0.5:0.1") == [0.5]
    for bad in ("0.1:0.5", "a:b:c", "0:1:0"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_sweep_symmetric_values():
    rows = sweep_symmetric([2, 3, 100], [0.5])
    by_k = {r["K"]: r for r in rows}
    assert by_k[2]["sum_rate_fair"] == pytest.approx(0.6)
    assert by_k[2]["sum_rate_fair_outer"] == pytest.approx(0.6)
    assert by_k[3]["sum_rate_fair_outer"] == pytest.approx(by_k[3]["sum_rate_fair"], abs=1e-12)
    assert 0.98 < by_k[100]["sum_rate_fair"] < 1
    assert by_k[100]["sum_rate_fair_outer"] == ""


def test_sweep_cli_stdout(capsys):
    code, text, _ = run(["sweep", "--mode", "sym", "--K", "2,4", "--pgrid", "0.2:0.4:0.2"], capsys)
    assert code == 0
    rows = list(csv.DictReader(text.splitlines()))
    assert len(rows) == 4
    assert float(rows[1]["sum_rate_fair"]) > float(rows[1]["sum_rate_time_sharing"])


def test_hetero_profile():
    assert hetero_marginals(3, 0.4).tolist() == pytest.approx([0.4, 0.7, 1.0])
    with pytest.raises(ValueError):
        hetero_marginals(1, 0.4)


def test_hetero_k6_coding_beats_time_sharing(tmp_path, capsys):
    out = tmp_path / "h.csv"
    code, _, _ = run(["sweep", "--mode", "hetero", "--K", "6", "--pgrid", "0.3:0.7:0.2", "--out", str(out)], capsys)
    assert code == 0
    _, rows = read_csv(out)
    assert [float(r["p"]) for r in rows] == pytest.approx([0.3, 0.5, 0.7])
    for r in rows:
        for ray in ("fair", "prop"):
            inner, outer, ts = (float(r[f"{ray}_{x}"]) for x in ("inner", "outer", "time_sharing"))
            assert inner > ts
            assert inner == pytest.approx(outer, abs=1e-6)


def test_hetero_small_k():
    rows = sweep_hetero([2], [0.5])
    r = rows[0]
    ch = make_spatially_independent(hetero_marginals(2, 0.5))
    assert r["fair_outer"] == pytest.approx(2 * two_user_max_scale(ch, [1, 1]))


# simulation --------------------------------------------------------------------


def test_rate_parsing():
    ch = make_spatially_independent([0.5, 0.5])
    assert parse_rates("cap:0.9", ch).tolist() == pytest.approx([0.27, 0.27])
    assert parse_rates("0.1,0.2", ch).tolist() == [0.1, 0.2]
    with pytest.raises(ValueError):
        parse_rates("0.1", ch)
    with pytest.raises(ValueError):
        parse_rates("-0.1,0.2", ch)
    assert slots_for([27, 27], [0.27, 0.27]) == 110
    assert parse_ray("prop", ch).tolist() == [0.5, 0.5]


def test_simulate_worked_example_cli(tmp_path, capsys):
    out = tmp_path / "sim"
    code, text, _ = run(
        ["simulate", "--policy", f"scripted:{WORKED_EXAMPLE}", "--record-states", "--out", str(out)],
        capsys,
    )
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["decode_frequency"] == [1.0, 1.0, 1.0]
    lines = [json.loads(x) for x in (out / "trace_0.jsonl").read_text().splitlines()]
    assert [x["packets"][0]["S"] for x in lines[:5]] == [[2], [2], [2], [2, 3], [1, 2, 3]]
    assert lines[4]["v_tx"]["coords"] == {"0": "01", "1": "01", "2": "01"}
    head, rows = read_csv(out / "trials.csv")
    assert head.startswith("# bcast") and rows[0]["end_reason"] == "delivered"


def test_simulate_cli_is_byte_reproducible(tmp_path, capsys):
    argv = ["simulate", "--p", "0.4,0.8", "--rates", "cap:0.8", "--slots", "400", "--trials", "3", "--seed", "2"]
    for name in ("a", "b"):
        assert run(argv + ["--out", str(tmp_path / name)], capsys)[0] == 0
    for f in ("trials.csv", "summary.json", "trace_0.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_two_user_achievability():
    ch = make_spatially_independent([0.5, 0.5])
    t = 0.9 * outer_max_scale(ch, [1, 1])
    n = 20000
    counts = [int(t * n)] * 2
    _, summary, _ = simulate(ch, counts, n, 50, "phase-order", seed=0, keep_traces=0)
    assert summary["all_decoded_frequency"] >= 0.95
    assert summary["throughput_inside_inner_bound"]


def test_too_few_slots_never_decode():
    ch = make_spatially_independent([0.5, 0.5])
    rows, summary, _ = simulate(ch, [200, 200], 300, 5, "phase-order", seed=0, keep_traces=0)
    assert summary["decode_frequency"] == [0.0, 0.0]


def test_simulate_payload_and_lemmas():
    ch = make_spatially_independent([0.3, 0.7, 0.9])
    rows, summary, traces = simulate(
        ch, [10, 10, 10], 400, 3, "greedy-max", seed=4, payload_len=2, check_lemmas=True, keep_traces=3
    )
    assert all(r["payload_ok"] == 1 for r in rows)
    assert summary["lemma3_violations"] == summary["lemma4_violations"] == 0
    assert len(traces) == 3
    assert summary["mean_throughput"][0] == pytest.approx(np.mean([r["throughput_1"] for r in rows]))
    assert summary["mean_throughput"][0] == pytest.approx(10 / 400)
