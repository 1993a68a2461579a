import csv
import io
import json

import numpy as np
import pytest

from coxcp import cli
from coxcp.search import SearchConfig, search
from coxcp.simulation import TruthSpec, generate_dataset
from coxcp.survival import read_csv


@pytest.fixture
def data_csv(tmp_path):
    ds = generate_dataset(TruthSpec(1, (1.0, 3.0), alpha=0.5, target_events=120), 200, 4)
    path = tmp_path / "d.csv"
    lines = ["time,event,arm"] + [f"{float(t)!r},{int(d)},{int(z)}" for t, d, z in zip(ds.times, ds.events, ds.Z[:, 0])]
    path.write_text("\n".join(lines) + "\n")
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fit_json_matches_library(capsys, data_csv):
    code, out, _ = run(capsys, "fit", data_csv, "--m", 1, "--min-event-fraction", 0.1)
    assert code == 0
    doc = json.loads(out)
    assert doc["tool_version"] == "0.1.0" and doc["config"]["m"] == 1
    fit = doc["fit"]
    assert fit["value"] == pytest.approx(-2 * fit["log_pl"] + 6 + 4)
    lib = search(read_csv(data_csv), 1, 0.0, SearchConfig(min_event_fraction=0.1))
    assert fit["k_hat"] == list(lib.partition.changepoints)


def test_fit_csv_and_output_file(capsys, data_csv, tmp_path):
    out_path = tmp_path / "fit.csv"
    code, out, _ = run(capsys, "fit", data_csv, "--m", 2, "--format", "csv", "-o", out_path)
    assert code == 0 and out == ""
    text = out_path.read_text()
    assert text.startswith("# tool_version=0.1.0\n# config=")
    body = [l for l in text.splitlines() if not l.startswith("#")]
    assert body[0] == "segment,start,end,beta" and len(body) == 4


def test_select_outputs(capsys, data_csv):
    code, out, _ = run(capsys, "select", data_csv, "--max-m", 2, "--criteria", "aic,naive,tic")
    assert code == 0
    doc = json.loads(out)
    assert [r["m"] for r in doc["models"]] == [0, 1, 2]
    for c in ("aic", "aic_naive", "tic"):
        vals = [r[c]["value"] for r in doc["models"]]
        assert doc["selected"][c] == int(np.argmin(vals))
    code, out, _ = run(capsys, "select", data_csv, "--max-m", 1, "--format", "csv")
    rows = list(csv.reader(io.StringIO("\n".join(l for l in out.splitlines() if not l.startswith("#")))))
    assert rows[0] == ["m", "k_hat", "log_pl", "aic", "aic_selected", "aic_naive", "aic_naive_selected"]


def test_select_with_ridge(capsys, data_csv):
    code, out, _ = run(capsys, "select", data_csv, "--xi", 0.1, "--criteria", "aic_xi", "--max-m", 1)
    assert code == 0 and "aic_xi" in json.loads(out)["selected"]


def test_exit_code_data_errors(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,event,arm\n1.0,3,0\n")
    code, _, err = run(capsys, "fit", bad, "--m", 0)
    assert code == 2 and "bad.csv:2: column 'event'" in err
    assert run(capsys, "fit", tmp_path / "missing.csv", "--m", 0)[0] == 2
    assert run(capsys, "simulate", "no_such_recipe")[0] == 2
    assert run(capsys, "verify-bias", "--spec", "1,2,3")[0] == 2
    assert run(capsys, "verify-bias", "--spec", "0,1,1,1")[0] == 2


def test_exit_code_infeasible(capsys, tmp_path):
    small = tmp_path / "s.csv"
    small.write_text("time,event,z\n1,1,0\n2,1,1\n3,0,0\n")
    code, _, err = run(capsys, "fit", small, "--m", 2)
    assert code == 3 and "infeasible" in err


def test_exit_code_contract(capsys, data_csv):
    code, _, err = run(capsys, "fit", data_csv, "--m", 1, "--xi", 0.5, "--criterion", "aic")
    assert code == 4 and "contract" in err
    assert run(capsys, "select", data_csv, "--xi", 0.5, "--criteria", "aic,aic_xi")[0] == 4


def test_verify_bias_passes_and_detects_mismatch(capsys, monkeypatch, tmp_path):
    code, out, _ = run(capsys, "verify-bias", "--spec", "0.5,0.5,1,1", "--paths", 20000, "--seed", 3)
    assert code == 0 and out.count(" ok") == 3
    mats = tmp_path / "m.json"
    mats.write_text(json.dumps({"A_j": [[1.0]], "A_j1": [[2.0]], "B_j": [[1.0]], "B_j1": [[1.5]], "delta": [0.7]}))
    assert run(capsys, "verify-bias", "--from-matrices", mats, "--paths", 20000)[0] == 0
    # a wrong constant must be caught
    monkeypatch.setattr(cli, "c_hat", lambda *a: 2.0)
    code, out, err = run(capsys, "verify-bias", "--spec", "0.5,0.5,1,1", "--paths", 20000, "--seed", 3)
    assert code == 5 and "MISMATCH" in out and "oracle mismatch" in err


def test_km(capsys, data_csv):
    code, out, _ = run(capsys, "km", data_csv, "--group-col", "arm")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO("\n".join(l for l in out.splitlines() if not l.startswith("#")))))
    assert {r["group"] for r in rows} == {"0", "1"}
    for g in ("0", "1"):
        s = [float(r["survival"]) for r in rows if r["group"] == g]
        assert s[0] == 1.0 and all(a >= b for a, b in zip(s, s[1:]))
    assert run(capsys, "km", data_csv, "--group-col", "nope")[0] == 2


def test_simulate_is_deterministic_and_reproducible_from_json(capsys, tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("[experiment]\nkind = bias\nreplicates = 3\nseed = 5\n"
                   "[truth]\nm_star = 1\nhazard_ratios = 1.0, 0.5\nalpha = 0.5\ntarget_events = 50\n"
                   "[search]\nmin_event_fraction = 0.1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "simulate", cfg, "--output-dir", a)[0] == 0
    assert run(capsys, "simulate", cfg, "--output-dir", b)[0] == 0
    assert (a / "tiny.json").read_text() == (b / "tiny.json").read_text()
    assert (a / "tiny.csv").read_text() == (b / "tiny.csv").read_text()
    c = tmp_path / "c"
    assert run(capsys, "simulate", a / "tiny.json", "--output-dir", c)[0] == 0
    assert (c / "tiny.json").read_text() == (a / "tiny.json").read_text()
    code, out, _ = run(capsys, "simulate", cfg, "--output-dir", tmp_path / "d", "--seed", 6, "--replicates", 2)
    doc = json.loads((tmp_path / "d" / "tiny.json").read_text())
    assert doc["seed"] == 6 and doc["replicates"] == 2


def test_shipped_recipe_resolves(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "table1_row_a05_hr08", "--replicates", 2, "--output-dir", tmp_path)
    assert code == 0 and (tmp_path / "table1_row_a05_hr08.json").exists()
    assert "aic_prediction=5" in out
