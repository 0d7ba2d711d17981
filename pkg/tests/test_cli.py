import json
import os

import pytest

from impactforge import cli

TINY = {
    "seed": 3,
    "simulation": {"edge": 1.0, "max_steps": 600, "final_strain": 0.2, "record_points": 21},
    "campaign": {"n": 3, "record_points": 41},
    "dataset": {"k": 2, "strain_lo": 0.1, "strain_hi": 0.2},
    "train": {"hidden": [4], "epochs": 2, "batch_size": 4},
    "sweep": {"rates": [9.1], "vf_bins": 1, "angle_bins": 4},
    "validate": {"tolerance": 10.0},
}


def _lines(capsys):
    return [json.loads(l) for l in capsys.readouterr().out.splitlines() if l.startswith("{")]


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(TINY, workdir=str(tmp_path / "work"))))
    return str(path)


def test_geom_valid_design(tmp_path, capsys):
    mask = tmp_path / "mask.txt"
    rc = cli.main(["geom", "--sides", "4", "--nx", "2", "--ny", "2", "--angle-deg", "15",
                   "--vf", "0.05", "--out", str(mask)])
    assert rc == 0
    (out,) = _lines(capsys)
    assert out["valid"] and out["design"]["sides"] == 4 and out["config_hash"]
    assert len(mask.read_text().splitlines()) == 46


def test_geom_invalid_design_exits_1(capsys):
    rc = cli.main(["geom", "--design", '{"sides":6,"nx":8,"ny":1,"angle_deg":0,"vf":0.1}'])
    assert rc == 1
    assert _lines(capsys)[0]["valid"] is False


def test_geom_missing_flags(capsys):
    assert cli.main(["geom", "--sides", "4"]) == 2
    assert "--nx" in capsys.readouterr().err


def test_sweep_without_checkpoint(config, capsys):
    assert cli.main(["sweep", "--config", config]) == 3
    assert "checkpoint not found" in capsys.readouterr().err


def test_missing_config_file(capsys):
    assert cli.main(["train", "--config", "/nonexistent/cfg.toml"]) == 2
    assert "config file not found" in capsys.readouterr().err


def test_unknown_config_section(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[bogus]\nx = 1\n")
    assert cli.main(["train", "--config", str(p)]) == 2


def test_config_hash_ignores_workdir():
    a = cli._merge(cli.DEFAULTS, {"workdir": "a"})
    b = cli._merge(cli.DEFAULTS, {"workdir": "b"})
    c = cli._merge(cli.DEFAULTS, {"seed": 1})
    assert cli.config_hash(a) == cli.config_hash(b) != cli.config_hash(c)


def test_campaign_plan_is_deterministic_and_valid():
    cfg = cli._merge(cli.DEFAULTS, {"campaign": {"n": 5}})
    p1 = cli.campaign_plan(cfg, 0.24)
    assert p1 == cli.campaign_plan(cfg, 0.24)
    assert [sid for sid, _, _ in p1] == [f"sim{i:05d}" for i in range(5)]
    assert all(0.45 <= r <= 90.9 for _, _, r in p1)
    # a longer plan keeps its prefix
    longer = cli.campaign_plan(cli._merge(cfg, {"campaign": {"n": 7}}), 0.24)
    assert longer[:5] == p1


def test_workers_env_fallback(monkeypatch):
    class A:
        workers = None
    monkeypatch.setenv("IMPACTFORGE_WORKERS", "3")
    assert cli._workers(A()) == 3
    A.workers = 1
    assert cli._workers(A()) == 1


def test_pipeline_end_to_end(config, tmp_path, capsys):
    work = tmp_path / "work"
    assert cli.main(["campaign", "--config", config, "--workers", "1"]) == 0
    out = _lines(capsys)[-1]
    assert out["completed"] == 3 and out["ran"] == 3
    with open(work / "campaign.jsonl") as fh:
        assert sum(1 for _ in fh) == 3
    # a rerun finds nothing left to do
    assert cli.main(["campaign", "--config", config, "--workers", "1"]) == 0
    assert _lines(capsys)[-1]["ran"] == 0
    manifest = json.loads((work / "campaign.jsonl.manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["config_hash"] == out["config_hash"]

    assert cli.main(["train", "--config", config]) == 0
    tr = _lines(capsys)[-1]
    assert tr["config_hash"] == out["config_hash"]
    assert os.path.exists(work / "model.ifgru") and os.path.exists(work / "history.csv")

    assert cli.main(["sweep", "--config", config, "--workers", "1"]) == 0
    sw = _lines(capsys)[-1]
    assert sw["config_hash"] == out["config_hash"]
    assert os.path.exists(work / "sweep.csv") and os.path.exists(work / "sweep.svg")

    rc = cli.main(["validate", "--config", config, "--workers", "1"])
    rows = json.loads((work / "validation.json").read_text())
    assert len(rows) == 2
    assert all("rel_err" in r and r["config_hash"] == out["config_hash"] for r in rows)
    assert rc == (0 if all(r["passed"] for r in rows) else 1)

    assert cli.main(["analyze", "--config", config]) == 0
    an = json.loads((work / "analysis.json").read_text())
    assert an["config_hash"] == out["config_hash"]


def test_campaign_refuses_foreign_workdir(config, tmp_path, capsys):
    assert cli.main(["campaign", "--config", config, "--workers", "1"]) == 0
    assert cli.main(["campaign", "--config", config, "--seed", "4", "--workers", "1"]) == 2
    assert "fresh workdir" in capsys.readouterr().err


def test_simulate_solid_control(tmp_path, capsys):
    out = tmp_path / "rec.jsonl"
    rc = cli.main(["simulate", "--solid", "--rate", "5", "--final-strain", "0.02", "--edge", "1.0",
                   "--record-points", "5", "--out", str(out)])
    assert rc == 0
    res = _lines(capsys)[-1]
    assert res["design"] is None and res["points"] == 5 and res["energy_error"] < 0.01
    assert json.loads(out.read_text())["record"]["strain"][-1] == pytest.approx(0.02)


def test_campaign_with_solid_control(tmp_path, capsys):
    cfg = dict(TINY, workdir=str(tmp_path / "w"))
    cfg["campaign"] = {"n": 1, "record_points": 11, "solid_control": True}
    cfg["simulation"] = dict(TINY["simulation"], final_strain=0.02)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert cli.main(["campaign", "--config", str(p), "--workers", "1"]) == 0
    recs = [json.loads(l) for l in open(tmp_path / "w" / "campaign.jsonl")]
    assert sorted(r["sim_id"] for r in recs) == ["sim00000", "solid"]
    assert [r["control"] for r in recs if r["sim_id"] == "solid"] == [True]


def test_concurrent_campaign_refused(config, tmp_path, capsys):
    import fcntl
    work = tmp_path / "work"
    work.mkdir()
    with open(work / "campaign.jsonl.lock", "w") as held:
        fcntl.flock(held, fcntl.LOCK_EX)
        assert cli.main(["campaign", "--config", config, "--workers", "1"]) == 2
    assert "another campaign" in capsys.readouterr().err
    assert not (work / "campaign.jsonl").exists()


def test_duplicate_campaign_lines_are_read_once(config, tmp_path):
    assert cli.main(["campaign", "--config", config, "--workers", "1"]) == 0
    path = tmp_path / "work" / "campaign.jsonl"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines + lines[:1]) + "\n")
    ids = [sid for sid, _, _ in cli._campaign_entries(str(path))]
    assert ids == sorted(set(ids)) and len(ids) == 3
