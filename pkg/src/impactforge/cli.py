"""``impactforge`` command line: geom, simulate, campaign, train, sweep, validate, analyze.

Each command prints one JSON summary line on stdout when it succeeds.
Configuration comes from a JSON or TOML file (``--config``); flags override
individual entries.  Every artifact written carries the hash of the resolved
configuration that produced it.
"""
from __future__ import annotations

import argparse
import copy
import fcntl
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .dataset import build_dataset, load_dataset, save_dataset
from .errors import (GeometryError, InvalidArgument, MissingArtifact, SimulationDiverged,
                     SolverFailure)
from .explorer import (SweepGrid, SweepTable, best_worst, correlations, emit_maps, error_by_input,
                       quarter_turn_gap, sea, sea_error_band, specimen_mass, sweep,
                       validate_extremes)
from .fesolver.material import MaterialModel
from .fesolver.solver import SimulationRecord, run_simulation
from .geometry import (COUNT_RANGE, SIDES_RANGE, VF_RANGE, DesignParams, Rejection, build_design,
                       mesh_for_design, solid_mesh)
from .surrogate import SurrogateModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .surrogate.train import evaluate as evaluate_model
from .surrogate.train import write_history

log = logging.getLogger("impactforge")

DEFAULTS = {
    "workdir": "impactforge-run",
    "material": None,  # path to a material JSON, or an inline table, or None for defaults
    "seed": 0,
    "simulation": {"edge": 0.24, "integration": "full", "record_points": 50, "max_steps": 6000,
                   "final_strain": 0.25},
    "campaign": {"n": 200, "rate_min": 0.45, "rate_max": 90.9, "rate_sampling": "loguniform",
                 "record_points": 201, "solid_control": False, "max_fail_fraction": 0.10},
    "dataset": {"k": 20, "strain_lo": 0.10, "strain_hi": 0.25},
    "train": {"hidden": [64, 64, 64], "lr": 1e-3, "epochs": 150, "batch_size": 64,
              "cosine": False},
    "sweep": {"rates": [0.45, 9.1, 90.9], "vf_bins": 40, "angle_bins": 20, "vf_window": None},
    "validate": {"tolerance": 0.10, "rates": None},
}

# artifact names inside the work directory
CAMPAIGN = "campaign.jsonl"
DATASET = "dataset.jsonl"
CHECKPOINT = "model.ifgru"
HISTORY = "history.csv"
SWEEP = "sweep.npz"
VALIDATION = "validation.json"
ANALYSIS = "analysis.json"


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    else:
        with open(path) as fh:
            user = json.load(fh)
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise CliError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    cfg = _merge(cfg, user)
    if isinstance(cfg["material"], str) and not os.path.isabs(cfg["material"]):
        cfg["material"] = os.path.join(os.path.dirname(os.path.abspath(path)), cfg["material"])
    return cfg


def config_hash(cfg):
    """Short hash of everything that influences results (not paths or workers)."""
    body = {k: v for k, v in cfg.items() if k != "workdir"}
    if isinstance(body.get("material"), str):
        body["material"] = _material(cfg).to_dict()
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _material(cfg):
    m = cfg.get("material")
    if m is None:
        return MaterialModel()
    if isinstance(m, dict):
        return MaterialModel.from_dict(m)
    if not os.path.exists(m):
        raise CliError(f"material file not found: {m}")
    return MaterialModel.load(m)


def _workers(args):
    if getattr(args, "workers", None):
        return max(1, int(args.workers))
    env = os.environ.get("IMPACTFORGE_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _emit(summary):
    print(json.dumps(summary, sort_keys=True, default=_json_default), flush=True)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _path(cfg, name):
    return os.path.join(cfg["workdir"], name)


def _require(path, what):
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}", code=3)
    return path


def _write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
    os.replace(tmp, path)


def _design_from_args(args):
    if args.design:
        src = args.design
        text = open(src).read() if os.path.exists(src) else src
        return DesignParams.from_json(text)
    missing = [f for f in ("sides", "nx", "ny", "angle_deg", "vf") if getattr(args, f) is None]
    if missing:
        raise CliError("missing design parameter(s): " + ", ".join("--" + m.replace("_", "-")
                                                                  for m in missing))
    return DesignParams.from_dict({"sides": args.sides, "nx": args.nx, "ny": args.ny,
                                   "angle_deg": args.angle_deg, "vf": args.vf})


# ----------------------------------------------------------------------------- geom

def cmd_geom(args, cfg):
    p = _design_from_args(args)
    polys = build_design(p)
    out = {"command": "geom", "design": p.to_dict(), "config_hash": config_hash(cfg)}
    if isinstance(polys, Rejection):
        out.update(valid=False, reason=polys.reason)
        _emit(out)
        return 1
    mesh = mesh_for_design(p, cfg["simulation"]["edge"])
    out.update(valid=not isinstance(mesh, Rejection), tubules=len(polys),
               solid_area_mm2=p.solid_area)
    if isinstance(mesh, Rejection):
        out["reason"] = mesh.reason
    else:
        out.update(elements=mesh.n_active, raster_porosity=mesh.porosity)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(mesh.to_ascii())
            out["mask"] = args.out
    _emit(out)
    return 0 if out["valid"] else 1


# ------------------------------------------------------------------------- simulate

def _simulate_one(job):
    """Worker body shared by ``simulate`` and ``campaign``."""
    sim_id, design, rate, sim, mat_dict, chash = job
    mat = MaterialModel.from_dict(mat_dict)
    if design is None:
        mesh = solid_mesh(sim["edge"])
    else:
        mesh = mesh_for_design(DesignParams.from_dict(design), sim["edge"])
        if isinstance(mesh, Rejection):
            return {"sim_id": sim_id, "ok": False, "error": f"geometry rejected: {mesh.reason}"}
    t0 = time.perf_counter()
    try:
        rec = run_simulation(mesh, mat, rate, sim["final_strain"],
                             record_points=sim["record_points"], integration=sim["integration"],
                             max_steps=sim["max_steps"])
    except (SolverFailure, SimulationDiverged, GeometryError, ArithmeticError, ValueError) as exc:
        return {"sim_id": sim_id, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return {"sim_id": sim_id, "ok": True, "design": design, "control": design is None,
            "strain_rate": rate, "final_strain": sim["final_strain"], "config_hash": chash,
            "wall_s": time.perf_counter() - t0, "record": rec.to_dict()}


def cmd_simulate(args, cfg):
    sim = dict(cfg["simulation"])
    design = None if args.solid else _design_from_args(args).to_dict()
    rate = args.rate if args.rate is not None else 9.1
    res = _simulate_one(("simulate", design, rate, sim, _material(cfg).to_dict(), config_hash(cfg)))
    if not res["ok"]:
        raise CliError(res["error"], code=1)
    rec = SimulationRecord.from_dict(res["record"])
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps(res) + "\n")
    mat = _material(cfg)
    mass = specimen_mass(DesignParams.from_dict(design), mat) if design else mat.rho * 121e-6
    _emit({"command": "simulate", "config_hash": res["config_hash"], "design": design,
           "strain_rate": rate, "final_strain": rec.final_strain, "points": len(rec),
           "peak_stress_Pa": float(rec.nominal_stress.max()),
           "sea_J_per_kg": float(sea(rec.nominal_stress, rec.nominal_strain, mass)),
           "energy_error": rec.energy_error(), "nsteps": rec.info["nsteps"],
           "wall_s": res["wall_s"], "out": args.out})
    return 0


# ------------------------------------------------------------------------- campaign

def sample_design(rng):
    """One design drawn uniformly over the parameter ranges (may be invalid)."""
    return DesignParams(int(rng.integers(SIDES_RANGE[0], SIDES_RANGE[1] + 1)),
                        int(rng.integers(COUNT_RANGE[0], COUNT_RANGE[1] + 1)),
                        int(rng.integers(COUNT_RANGE[0], COUNT_RANGE[1] + 1)),
                        float(rng.uniform(0.0, 2 * math.pi)), float(rng.uniform(*VF_RANGE)))


def sample_rate(rng, camp):
    lo, hi = camp["rate_min"], camp["rate_max"]
    mode = camp["rate_sampling"]
    if mode == "loguniform":
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    if mode == "uniform":
        return float(rng.uniform(lo, hi))
    raise CliError(f"unknown rate_sampling {mode!r}")


def campaign_plan(cfg, edge):
    """Deterministic ``(sim_id, design_dict, rate)`` list.

    Sample ``i`` uses its own generator seeded by ``(seed, i)``, so the plan
    does not depend on resumption or worker count.  Invalid geometries are
    redrawn from the same generator.
    """
    camp = cfg["campaign"]
    plan = []
    for i in range(int(camp["n"])):
        rng = np.random.default_rng([int(cfg["seed"]), i])
        for _ in range(10000):
            p = sample_design(rng)
            if not isinstance(mesh_for_design(p, edge), Rejection):
                break
        else:  # pragma: no cover - valid designs are abundant
            raise CliError("could not draw a valid design")
        plan.append((f"sim{i:05d}", p.to_dict(), sample_rate(rng, camp)))
    if camp.get("solid_control"):
        rng = np.random.default_rng([int(cfg["seed"]), -1 % 2**32])
        plan.append(("solid", None, sample_rate(rng, camp)))
    return plan


def _read_jsonl(path):
    out = []
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError:
                    log.warning("skipping truncated line in %s", path)
    return out


def cmd_campaign(args, cfg):
    os.makedirs(cfg["workdir"], exist_ok=True)
    chash = config_hash(cfg)
    sim = dict(cfg["simulation"])
    sim["record_points"] = int(cfg["campaign"]["record_points"])
    path = _path(cfg, CAMPAIGN)
    mpath = path + ".manifest.json"
    if os.path.exists(mpath):
        with open(mpath) as fh:
            old = json.load(fh)
        if old.get("config_hash") != chash:
            raise CliError(f"{path} was produced by config {old.get('config_hash')}, current is "
                           f"{chash}; use a fresh workdir", code=2)
    with open(path + ".lock", "w") as lock:
        try:
            fcntl.flock(lock, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            raise CliError(f"another campaign is writing {path}", code=2) from None
        try:
            return _run_campaign(args, cfg, chash, sim, path, mpath)
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def _run_campaign(args, cfg, chash, sim, path, mpath):
    done = {r["sim_id"] for r in _read_jsonl(path)}
    plan = campaign_plan(cfg, sim["edge"])
    todo = [(sid, d, rate, sim, _material(cfg).to_dict(), chash) for sid, d, rate in plan
            if sid not in done]
    workers = _workers(args)
    t0 = time.perf_counter()
    log.info("campaign: %d planned, %d done, %d to run on %d worker(s)",
             len(plan), len(done), len(todo), workers)
    failures = []
    with open(path, "a") as fh:
        def sink(res):
            if res["ok"]:
                fh.write(json.dumps(res) + "\n")
                fh.flush()
            else:
                failures.append({"sim_id": res["sim_id"], "error": res["error"]})
                log.warning("simulation %s failed: %s", res["sim_id"], res["error"])

        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                for res in ex.map(_simulate_one, todo):
                    sink(res)
        else:
            for k, job in enumerate(todo):
                sink(_simulate_one(job))
                log.info("campaign: %d/%d", k + 1, len(todo))
    completed = len({r["sim_id"] for r in _read_jsonl(path)})
    manifest = {"config_hash": chash, "seed": cfg["seed"], "planned": len(plan),
                "completed": completed, "failures": failures, "version": __version__,
                "simulation": sim, "campaign": cfg["campaign"]}
    _write_json(mpath, manifest)
    frac = len(failures) / max(len(plan), 1)
    _emit({"command": "campaign", "config_hash": chash, "records": path, "planned": len(plan),
           "completed": completed, "ran": len(todo), "failed": len(failures),
           "wall_s": time.perf_counter() - t0})
    if frac > cfg["campaign"]["max_fail_fraction"]:
        raise CliError(f"{len(failures)} of {len(plan)} simulations failed", code=1)
    return 0


# ---------------------------------------------------------------------------- train

def _campaign_entries(path):
    seen = set()
    for r in _read_jsonl(path):
        # a record may appear twice if a run was interrupted mid-flush; first wins
        if r.get("ok") and not r.get("control") and r["sim_id"] not in seen:
            seen.add(r["sim_id"])
            yield r["sim_id"], DesignParams.from_dict(r["design"]), SimulationRecord.from_dict(r["record"])


def _train_config(cfg):
    t = cfg["train"]
    return TrainConfig(lr=t["lr"], epochs=t["epochs"], batch_size=t["batch_size"],
                       seed=cfg["seed"], cosine=t["cosine"])


def cmd_train(args, cfg):
    chash = config_hash(cfg)
    camp = _require(_path(cfg, CAMPAIGN), "campaign records")
    ds_path = _path(cfg, DATASET)
    ds = None
    if os.path.exists(ds_path) and os.path.exists(ds_path + ".manifest.json"):
        ds = load_dataset(ds_path)
        if ds.manifest.get("config_hash") != chash:
            ds = None
    if ds is None:
        d = cfg["dataset"]
        ds = build_dataset(_campaign_entries(camp), k=d["k"], strain_lo=d["strain_lo"],
                           strain_hi=d["strain_hi"], seed=cfg["seed"])
        ds.manifest["config_hash"] = chash
        save_dataset(ds, ds_path)
    Xtr, Ytr = ds.arrays("train")
    Xva, Yva = ds.arrays("validation")
    Xte, Yte = ds.arrays("test")
    model = SurrogateModel.create(8, tuple(cfg["train"]["hidden"]), 4, seed=cfg["seed"])
    t0 = time.perf_counter()

    def progress(row):
        log.info("epoch %d train %.4g val %.4g", row["epoch"], row["train_mae"], row["val_mae"])

    res = train(model, Xtr, Ytr, Xva, Yva, config=_train_config(cfg), callback=progress)
    wall = time.perf_counter() - t0
    save_checkpoint(_path(cfg, CHECKPOINT), res.model, ds.scaler)
    write_history(res.history, _path(cfg, HISTORY))
    summary = {"command": "train", "config_hash": chash, "checkpoint": _path(cfg, CHECKPOINT),
               "samples": {k: int(len(getattr(ds.split, k))) for k in ("train", "validation", "test")},
               "params": res.model.n_params, "epochs": len(res.history), "aborted": res.aborted,
               "train_mae": evaluate_model(res.model, Xtr, Ytr),
               "val_mae": evaluate_model(res.model, Xva, Yva),
               "test_mae": evaluate_model(res.model, Xte, Yte),
               "test_sea_rel_err": sea_error_band(res.model, ds, _material(cfg)),
               "wall_s": wall}
    _write_json(_path(cfg, "train.json"), summary)
    _emit(summary)
    return 1 if res.aborted else 0


# ---------------------------------------------------------------------------- sweep

def _grid(cfg, rates=None):
    s = cfg["sweep"]
    return SweepGrid(vf_bins=s["vf_bins"], angle_bins=s["angle_bins"],
                     rates=tuple(rates or s["rates"]),
                     final_strain=cfg["simulation"]["final_strain"])


def _load_model(cfg):
    path = _path(cfg, CHECKPOINT)
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path} (run 'impactforge train' first)", code=3)
    model, scaler = load_checkpoint(path)
    if scaler is None:
        raise CliError(f"checkpoint {path} carries no scaler", code=3)
    return model, scaler


def save_sweep(table: SweepTable, path, chash):
    g = table.grid
    meta = {"config_hash": chash, "grid": {"vf_bins": g.vf_bins, "angle_bins": g.angle_bins,
                                           "rates": list(g.rates), "final_strain": g.final_strain,
                                           "vf_range": list(g.vf_range)},
            "stats": table.stats}
    tmp = path + ".tmp.npz"
    np.savez(tmp, index=table.index, rate=table.rate, valid=table.valid, sea=table.sea,
             extrapolated=table.extrapolated, meta=np.array(json.dumps(meta)))
    os.replace(tmp, path)


def load_sweep(path) -> SweepTable:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        g = meta["grid"]
        grid = SweepGrid(g["vf_bins"], g["angle_bins"], tuple(g["rates"]), g["final_strain"],
                         tuple(g["vf_range"]))
        t = SweepTable(grid, z["index"], z["rate"], z["valid"], z["sea"], z["extrapolated"],
                       meta["stats"])
    t.stats["config_hash"] = meta["config_hash"]
    return t


def _validity_cache(cfg, grid, vf_window, workers):
    """Geometry validity is rate-independent; cache it in the workdir."""
    from .explorer import grid_validity
    key = hashlib.sha256(json.dumps([grid.vf_bins, grid.angle_bins, list(grid.vf_range),
                                     vf_window], sort_keys=True).encode()).hexdigest()[:12]
    path = _path(cfg, f"validity-{key}.npy")
    idx = grid.indices(vf_window)
    if os.path.exists(path):
        v = np.load(path)
        if v.shape == idx.shape:
            return v
    v = grid_validity(grid, idx, workers)
    np.save(path, v)
    return v


def cmd_sweep(args, cfg):
    chash = config_hash(cfg)
    model, scaler = _load_model(cfg)
    grid = _grid(cfg, args.rate and [args.rate])
    window = cfg["sweep"]["vf_window"]
    workers = _workers(args)
    t0 = time.perf_counter()
    validity = _validity_cache(cfg, grid, window, workers)
    table = sweep(model, scaler, grid, _material(cfg), vf_window=window, validity=validity)
    table.stats["config_hash"] = chash
    save_sweep(table, _path(cfg, SWEEP), chash)
    maps = emit_maps(table, cfg["workdir"])
    extremes = {}
    for rate in grid.rates:
        b, w = best_worst(table, rate)
        extremes[repr(rate)] = {"best": {"design_index": b.design_index, "sea": b.sea,
                                         "design": b.params.to_dict()},
                                "worst": {"design_index": w.design_index, "sea": w.sea,
                                          "design": w.params.to_dict()}}
    _emit({"command": "sweep", "config_hash": chash, "records": len(table),
           "per_rate": len(table) // max(len(grid.rates), 1),
           "valid_fraction": table.stats["valid_fraction"],
           "predictions_per_s": table.stats["predictions_per_s"],
           "extrapolated": int(table.extrapolated.sum()), "extremes": extremes,
           "files": dict(maps, table=_path(cfg, SWEEP)), "wall_s": time.perf_counter() - t0})
    return 0


# ------------------------------------------------------------------------- validate

def cmd_validate(args, cfg):
    chash = config_hash(cfg)
    path = _require(_path(cfg, SWEEP), "sweep table")
    table = load_sweep(path)
    sim = cfg["simulation"]
    rates = cfg["validate"]["rates"] or list(table.grid.rates)
    rows = validate_extremes(table, _material(cfg), tolerance=cfg["validate"]["tolerance"],
                             rates=rates, workers=_workers(args), edge=sim["edge"],
                             integration=sim["integration"], record_points=sim["record_points"],
                             max_steps=sim["max_steps"])
    report = [dict(r.to_dict(), config_hash=chash) for r in rows]
    _write_json(_path(cfg, VALIDATION), report)
    ok = all(r.passed for r in rows)
    _emit({"command": "validate", "config_hash": chash, "report": _path(cfg, VALIDATION),
           "rows": report, "all_passed": ok})
    return 0 if ok else 1


# -------------------------------------------------------------------------- analyze

def cmd_analyze(args, cfg):
    chash = config_hash(cfg)
    table = load_sweep(_require(_path(cfg, SWEEP), "sweep table"))
    model, _ = _load_model(cfg)
    ds = load_dataset(_require(_path(cfg, DATASET), "dataset"))
    mat = _material(cfg)
    band = sea_error_band(model, ds, mat)
    gaps = {}
    for rate in table.grid.rates:
        try:
            gaps[repr(rate)] = quarter_turn_gap(table, rate)
        except InvalidArgument:
            gaps[repr(rate)] = None
    out = {"config_hash": chash,
           "correlations": correlations(table).to_dict(),
           "test_sea_rel_err": band,
           "quarter_turn_gap": gaps,
           "error_by_input": error_by_input(model, ds, "test")}
    _write_json(_path(cfg, ANALYSIS), out)
    _emit({"command": "analyze", "config_hash": chash, "report": _path(cfg, ANALYSIS),
           "correlations": out["correlations"], "test_sea_rel_err": band,
           "quarter_turn_gap": gaps})
    return 0


# ----------------------------------------------------------------------------- main

def _design_flags(p):
    p.add_argument("--design", help="design JSON (inline or file)")
    p.add_argument("--sides", type=int)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--angle-deg", type=float)
    p.add_argument("--vf", type=float)


def build_parser():
    ap = argparse.ArgumentParser(prog="impactforge", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML configuration file")
    common.add_argument("--workers", type=int, help="worker processes (env IMPACTFORGE_WORKERS)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (geom, simulate) or work directory")
    common.add_argument("--rate", type=float, help="nominal strain rate, 1/s")
    common.add_argument("--final-strain", type=float)
    common.add_argument("--record-points", type=int)
    common.add_argument("--edge", type=float, help="element edge, mm")
    common.add_argument("--integration", choices=("full", "reduced"))
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("geom", parents=[common], help="check a design and write its raster mask")
    _design_flags(g)
    s = sub.add_parser("simulate", parents=[common], help="run one FE simulation")
    _design_flags(s)
    s.add_argument("--solid", action="store_true", help="simulate the fully dense specimen")
    for name, hlp in (("campaign", "run the FE campaign (resumable)"),
                      ("train", "build the dataset and train the surrogate"),
                      ("sweep", "sweep the design grid with the surrogate"),
                      ("validate", "re-simulate sweep extremes with the FE solver"),
                      ("analyze", "correlations, angle periodicity and error analysis")):
        sub.add_parser(name, parents=[common], help=hlp)
    return ap


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg["seed"] = args.seed
    sim = cfg["simulation"]
    if args.final_strain is not None:
        sim["final_strain"] = args.final_strain
    if args.record_points is not None:
        sim["record_points"] = args.record_points
    if args.edge is not None:
        sim["edge"] = args.edge
    if args.integration is not None:
        sim["integration"] = args.integration
    if args.out and args.command not in ("geom", "simulate"):
        cfg["workdir"] = args.out
    return cfg


COMMANDS = {"geom": cmd_geom, "simulate": cmd_simulate, "campaign": cmd_campaign,
            "train": cmd_train, "sweep": cmd_sweep, "validate": cmd_validate,
            "analyze": cmd_analyze}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"impactforge {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (InvalidArgument, MissingArtifact) as exc:
        print(f"impactforge {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
