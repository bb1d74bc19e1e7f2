import csv
import json

import pytest

from hedgelab import cli
from hedgelab.config import ConfigError, canonical_json, emit_csv, format_value, load_schema, normalize, parse_config

BASE = {
    "model": {"kind": "black_scholes", "s0": 100, "horizon": 1, "v": 0.2},
    "payoff": {"kind": "call", "strike": 100},
    "strategy": {"kind": "leland_equidistant"},
    "kappa": 0.05,
    "n_paths": 30,
}


def text(**changes):
    doc = json.loads(json.dumps(BASE))
    doc.update(changes)
    return json.dumps(doc)


def test_defaults_are_filled():
    doc = normalize(json.loads(text()))
    assert doc["alpha"] == 1.0 and doc["strategy"]["alpha"] == 1.0
    assert doc["seed"] == 0 and doc["n_steps"] is None and doc["model"]["mu"] == 0.0
    assert set(doc) == set(load_schema()["properties"])
    assert canonical_json(doc) == canonical_json(normalize(json.loads(canonical_json(doc))))


@pytest.mark.parametrize("bad,match", [
    ({"bogus": 1}, "unknown keys"),
    ({"kappa": 0.0}, "positive"),
    ({"kappa": "x"}, "type"),
    ({"n_paths": 0}, "at least"),
    ({"model": {"kind": "heston"}}, "model.kind"),
    ({"model": {"kind": "cev", "s0": 1, "horizon": 1, "v": 0.2}}, "missing keys in model"),
    ({"payoff": {"kind": "call", "strike": 100, "cap": 3}}, "unknown keys in payoff"),
    ({"strategy": {"kind": "optimal_family"}}, "missing keys in strategy"),
    ({"strategy": {"kind": "optimal_family", "a": -1}}, "strategy.a"),
    ({"eta": "other"}, "one of"),
    ({"pde_nodes": [1, 2, 3]}, "pde_nodes"),
    ({"n_paths": True}, "type"),
])
def test_invalid_configs(bad, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text(**bad))


def test_missing_required_and_malformed():
    doc = dict(BASE)
    del doc["kappa"]
    with pytest.raises(ConfigError, match="missing required keys: kappa"):
        parse_config(json.dumps(doc))
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("{")
    with pytest.raises(ConfigError, match="finite"):
        parse_config(text(model={"kind": "black_scholes", "s0": 100, "horizon": 1, "v": 1e400}))


def test_explicit_coarse_grid_for_band_strategy():
    with pytest.raises(ConfigError, match="at least 40001 steps"):
        parse_config(text(strategy={"kind": "reflected_control"}, n_steps=1000, kappa=0.04))


def test_format_and_csv(tmp_path):
    assert format_value(0.1) == "0.10000000000000001" and format_value(3) == "3" and format_value(True) == "true"
    path = emit_csv([], ["a", "b"], tmp_path / "x.csv")
    assert path.read_text() == "a,b\n"
    emit_csv([{"a": 1, "b": 0.5}, (2, 1.5)], ["a", "b"], tmp_path / "y.csv")
    assert (tmp_path / "y.csv").read_text() == "a,b\n1,0.5\n2,1.5\n"


def write_config(tmp_path, **changes):
    path = tmp_path / "cfg.json"
    path.write_text(text(**changes))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_cli_simulate_and_clt(tmp_path):
    cfg = write_config(tmp_path, n_paths=120)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s"), "--paths", "20", "--seed", "3"]) == 0
    rows = read_csv(tmp_path / "s" / "samples.csv")
    assert len(rows) == 20 and list(rows[0]) == ["path_id", "err", "q", "drift", "u_stat"]
    report = json.loads((tmp_path / "s" / "simulate_report.json").read_text())
    assert report["seed"] == 3 and "need at least" in report["clt"]
    assert cli.main(["clt", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    report = json.loads((tmp_path / "c" / "clt_report.json").read_text())
    assert report["clt"]["n_effective"] == 120
    assert cli.main(["clt", "--config", cfg, "--out", str(tmp_path / "c"), "--paths", "5"]) == 2


def test_cli_tables(tmp_path):
    out = str(tmp_path)
    assert cli.main(["eta-table", "--alpha-min", "0.5", "--alpha-max", "2", "--step", "0.5", "--out", out]) == 0
    rows = read_csv(tmp_path / "eta_table.csv")
    assert [float(r["alpha"]) for r in rows] == [0.5, 1.0, 1.5, 2.0]
    assert cli.main(["eta-table", "--step", "0", "--out", out]) == 2
    assert cli.main(["optimize-y", "--a", "3", "--gamma", "1", "--segments", "16", "--iters", "2000", "--out", out]) == 0
    row = read_csv(tmp_path / "optimize_y.csv")[0]
    assert row["case"] == "ge_two" and abs(float(row["rel_gap"])) < 1e-9
    cfg = write_config(tmp_path, alpha_grid=[1.0, 2.0], eta="dagger")
    assert cli.main(["frontier", "--config", cfg, "--out", out]) == 0
    assert len(read_csv(tmp_path / "frontier.csv")) == 2


def test_cli_price(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["price", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "price.json").read_text())
    assert doc["surface"] == "closed_form" and doc["price"] > 0
    cev = write_config(tmp_path, model={"kind": "cev", "s0": 100, "horizon": 1, "v": 0.2, "beta": 0.7}, pde_nodes=[60, 60])
    assert cli.main(["price", "--config", cev, "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "surface.csv").read_text().startswith("s,t,p,delta,gamma\n")


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["price", "--config", str(tmp_path / "missing.json")]) == 2
    assert "cannot read config" in capsys.readouterr().err
    bad = write_config(tmp_path, extra=1)
    assert cli.main(["simulate", "--config", bad, "--out", str(tmp_path)]) == 2
    assert "unknown keys: extra" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["nonsense"])


def test_single_alpha_eta_table_matches_harness(tmp_path):
    from hedgelab.config import format_value
    from hedgelab.harness import eta_comparison_table

    assert cli.main(["eta-table", "--alpha-min", "1", "--alpha-max", "1", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "eta_table.csv")
    ref = eta_comparison_table([1.0])[0]
    assert len(rows) == 1 and rows[0] == {k: format_value(v) for k, v in ref.items()}
