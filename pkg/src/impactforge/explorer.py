"""Design-space sweep with the surrogate: SEA maps, trends and FE spot checks."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import HEIGHT_M, N_GEOM, STRAIN, Dataset
from .errors import (GeometryError, InvalidArgument, SimulationDiverged, SolverFailure,
                     UndefinedCorrelation)
from .fesolver.material import MaterialModel
from .fesolver.solver import run_simulation
from .geometry import (COUNT_RANGE, DEFAULT_EDGE, SIDES_RANGE, SPECIMEN, VF_RANGE, DesignParams,
                       Rejection, is_valid, mesh_for_design)
from .surrogate.gru import forward
from .surrogate.train import predict

log = logging.getLogger(__name__)

DEFAULT_RATES = (0.45, 9.1, 90.9)
GEOM_NAMES = ("sides", "n_x", "n_y", "angle", "vf")
CSV_HEADER = ("design_index", "sides", "nx", "ny", "angle_deg", "vf", "rate_per_s", "valid",
              "sea_J_per_kg")


@dataclass(frozen=True)
class SweepGrid:
    """Full-factorial design grid; vf and angle sit at interval midpoints."""
    vf_bins: int = 40
    angle_bins: int = 20
    rates: Tuple[float, ...] = DEFAULT_RATES
    final_strain: float = 0.25
    vf_range: Tuple[float, float] = VF_RANGE

    def __post_init__(self):
        if self.vf_bins < 1 or self.angle_bins < 1:
            raise InvalidArgument("bin counts must be >= 1")
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))

    @property
    def sides_values(self):
        return np.arange(SIDES_RANGE[0], SIDES_RANGE[1] + 1)

    @property
    def count_values(self):
        return np.arange(COUNT_RANGE[0], COUNT_RANGE[1] + 1)

    @property
    def vf_values(self):
        lo, hi = self.vf_range
        return lo + (np.arange(self.vf_bins) + 0.5) * (hi - lo) / self.vf_bins

    @property
    def angle_values(self):
        return (np.arange(self.angle_bins) + 0.5) * (2 * math.pi / self.angle_bins)

    @property
    def radices(self):
        return (len(self.sides_values), len(self.count_values), len(self.count_values),
                self.vf_bins, self.angle_bins)

    @property
    def size(self):
        return int(np.prod(self.radices))

    def digits(self, index):
        """Mixed-radix digits ``(s, nx-1, ny-1, vf_bin, angle_bin)`` of ``index``."""
        index = np.asarray(index, dtype=np.int64)
        if np.any(index < 0) or np.any(index >= self.size):
            raise InvalidArgument(f"design index outside [0, {self.size})")
        out = []
        for r in reversed(self.radices):
            out.append(index % r)
            index = index // r
        return tuple(reversed(out))

    def vectors(self, index):
        """Geometry rows ``(sides, n_x, n_y, angle, vf)`` for an index array."""
        s, ix, iy, kv, ka = self.digits(index)
        return np.column_stack((self.sides_values[s], self.count_values[ix], self.count_values[iy],
                                self.angle_values[ka], self.vf_values[kv])).astype(float)

    def params(self, index) -> DesignParams:
        row = self.vectors(np.array([index]))[0]
        return DesignParams(int(row[0]), int(row[1]), int(row[2]), float(row[3]), float(row[4]))

    def indices(self, vf_window=None):
        """All grid indices, optionally restricted to vf midpoints in ``vf_window``."""
        idx = np.arange(self.size, dtype=np.int64)
        if vf_window is None:
            return idx
        lo, hi = vf_window
        keep = np.nonzero((self.vf_values >= lo - 1e-12) & (self.vf_values <= hi + 1e-12))[0]
        kv = self.digits(idx)[3]
        return idx[np.isin(kv, keep)]


def _bin(value, centers, name):
    k = int(np.argmin(np.abs(centers - value)))
    if not math.isclose(centers[k], value, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(value))):
        raise InvalidArgument(f"{name}={value!r} is not a grid point")
    return k


def design_index(params: DesignParams, grid: SweepGrid = SweepGrid()) -> int:
    s = params.sides - SIDES_RANGE[0]
    kv = _bin(params.vf, grid.vf_values, "vf")
    ka = _bin(params.angle, grid.angle_values, "angle")
    ncount = len(grid.count_values)
    return (((s * ncount + (params.n_x - 1)) * ncount + (params.n_y - 1)) * grid.vf_bins
            + kv) * grid.angle_bins + ka


def specimen_mass(params_or_solid_area, mat: MaterialModel):
    """Mass per metre of thickness, kg."""
    area = (params_or_solid_area.solid_area if isinstance(params_or_solid_area, DesignParams)
            else np.asarray(params_or_solid_area, dtype=float))
    return mat.rho * area * 1e-6


def sea(stress, strain, mass):
    """Specific energy absorption ``int F dx / m`` in J/kg.

    ``stress`` and ``strain`` may be ``(T,)`` or ``(N, T)``; ``mass`` is the
    per-metre specimen mass (scalar or ``(N,)``).
    """
    stress = np.asarray(stress, dtype=float)
    strain = np.asarray(strain, dtype=float)
    mass = np.asarray(mass, dtype=float)
    if np.any(mass <= 0):
        raise InvalidArgument("specimen mass must be positive")
    F = stress * HEIGHT_M
    x = strain * HEIGHT_M
    work = 0.5 * ((F[..., 1:] + F[..., :-1]) * np.diff(x, axis=-1)).sum(axis=-1)
    return work / mass


def sea_of_outputs(outputs, params: DesignParams, mat: MaterialModel, final_strain):
    """SEA of one sample's physical outputs on the uniform strain grid."""
    strain = np.linspace(0.0, final_strain, len(outputs))
    return float(sea(np.asarray(outputs)[:, 0], strain, specimen_mass(params, mat)))


@dataclass
class SweepRecord:
    design_index: int
    params: DesignParams
    rate: float
    sea: Optional[float]
    valid: bool


@dataclass
class SweepTable:
    """Columnar sweep result ordered by ``(rate, design_index)``."""
    grid: SweepGrid
    index: np.ndarray     # int64
    rate: np.ndarray
    valid: np.ndarray     # bool
    sea: np.ndarray       # nan where invalid
    extrapolated: np.ndarray = None
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.index)

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i) -> SweepRecord:
        v = bool(self.valid[i])
        return SweepRecord(int(self.index[i]), self.grid.params(int(self.index[i])),
                           float(self.rate[i]), float(self.sea[i]) if v else None, v)

    def records(self):
        return list(self)

    def at_rate(self, rate):
        m = np.isclose(self.rate, rate, rtol=1e-12, atol=0)
        return SweepTable(self.grid, self.index[m], self.rate[m], self.valid[m], self.sea[m],
                          None if self.extrapolated is None else self.extrapolated[m],
                          dict(self.stats))

    def vectors(self):
        return self.grid.vectors(self.index)


def _validity_chunk(args):
    grid, idx = args
    return np.array([is_valid(grid.params(int(i))) for i in idx], dtype=bool)


def grid_validity(grid: SweepGrid, indices, workers=1, chunk=4096):
    """Geometry validity per index; a process pool when ``workers > 1``."""
    indices = np.asarray(indices, dtype=np.int64)
    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [_validity_chunk((grid, c)) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_validity_chunk, [(grid, c) for c in chunks]))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def sweep(model, scaler, grid: SweepGrid, mat: MaterialModel, vf_window=None, workers=1,
          batch=8192, validity=None) -> SweepTable:
    """Predict SEA for every grid point at every rate of ``grid``.

    Invalid geometries are kept with ``valid=False`` and no SEA.  Pass a
    precomputed ``validity`` array (aligned with ``grid.indices(vf_window)``)
    to skip the geometry checks.
    """
    idx = grid.indices(vf_window)
    t0 = time.perf_counter()
    valid = grid_validity(grid, idx, workers) if validity is None else np.asarray(validity, bool)
    if valid.shape != idx.shape:
        raise InvalidArgument("validity array does not match the grid selection")
    t_geom = time.perf_counter() - t0
    vec = grid.vectors(idx[valid])
    mass = specimen_mass(SPECIMEN ** 2 - vec[:, 4] * 100.0, mat)
    strain = None
    cols = {"index": [], "rate": [], "valid": [], "sea": [], "extrap": []}
    t_pred = 0.0
    n_pred = 0
    for rate in grid.rates:
        s = np.full(len(idx), np.nan)
        ext = np.zeros(len(idx), dtype=bool)
        if len(vec):
            t1 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                pred = predict(model, scaler, vec, rate, grid.final_strain, batch=batch)
            t_pred += time.perf_counter() - t1
            n_pred += len(vec)
            strain = np.linspace(0.0, grid.final_strain, pred.outputs.shape[1])
            s[valid] = sea(pred.outputs[:, :, 0], strain, mass)
            ext[valid] = pred.extrapolated
        cols["index"].append(idx)
        cols["rate"].append(np.full(len(idx), rate))
        cols["valid"].append(valid)
        cols["sea"].append(s)
        cols["extrap"].append(ext)
    cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in cols.items()}
    stats = {"geometry_s": t_geom, "predict_s": t_pred, "predictions": n_pred,
             "predictions_per_s": n_pred / t_pred if t_pred > 0 else float("nan"),
             "valid_fraction": float(valid.mean()) if len(valid) else float("nan")}
    log.info("sweep: %d designs x %d rates, %.0f predictions/s", len(idx), len(grid.rates),
             stats["predictions_per_s"])
    return SweepTable(grid, cat["index"].astype(np.int64), cat["rate"], cat["valid"].astype(bool),
                      cat["sea"], cat["extrap"].astype(bool), stats)


def pearson(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("pearson needs two 1-D series of equal length")
    if len(x) < 2:
        raise InvalidArgument("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined for a constant series")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


@dataclass
class CorrelationReport:
    # rate -> {parameter name -> r or None when undefined}
    by_rate: Dict[float, Dict[str, Optional[float]]]

    def to_dict(self):
        return {repr(r): v for r, v in self.by_rate.items()}


def correlations(table: SweepTable) -> CorrelationReport:
    out = {}
    for rate in table.grid.rates:
        sub = table.at_rate(rate)
        ok = sub.valid
        vec = sub.vectors()[ok]
        y = sub.sea[ok]
        row = {}
        for k, name in enumerate(GEOM_NAMES):
            try:
                row[name] = pearson(vec[:, k], y)
            except (UndefinedCorrelation, InvalidArgument):
                row[name] = None
        out[rate] = row
    return CorrelationReport(out)


def best_worst(records, rate) -> Tuple[SweepRecord, SweepRecord]:
    """Max- and min-SEA valid records at ``rate``; ties go to the lower index."""
    if isinstance(records, SweepTable):
        sub = records.at_rate(rate)
        pos = np.nonzero(sub.valid)[0]
        if len(pos) == 0:
            raise InvalidArgument(f"no valid record at rate {rate}")
        order = np.lexsort((sub.index[pos], -sub.sea[pos]))
        hi = pos[order[0]]
        order = np.lexsort((sub.index[pos], sub.sea[pos]))
        lo = pos[order[0]]
        return sub.record(hi), sub.record(lo)
    cand = [r for r in records if r.valid and math.isclose(r.rate, rate, rel_tol=1e-12)]
    if not cand:
        raise InvalidArgument(f"no valid record at rate {rate}")
    best = min(cand, key=lambda r: (-r.sea, r.design_index))
    worst = min(cand, key=lambda r: (r.sea, r.design_index))
    return best, worst


@dataclass
class ValidationRow:
    design_index: int
    rate: float
    sea_fe: Optional[float]
    sea_pred: float
    rel_err: Optional[float]
    passed: bool
    role: str = ""
    error: str = ""

    def to_dict(self):
        return {"design_index": self.design_index, "rate": self.rate, "sea_fe": self.sea_fe,
                "sea_pred": self.sea_pred, "rel_err": self.rel_err, "passed": self.passed,
                "role": self.role, "error": self.error}


def _fe_sea(args):
    params, rate, final_strain, mat, sim_kw = args
    mesh = mesh_for_design(params, sim_kw.get("edge", DEFAULT_EDGE))
    if isinstance(mesh, Rejection):
        return None, f"geometry rejected: {mesh.reason}"
    kw = {k: v for k, v in sim_kw.items() if k != "edge"}
    try:
        rec = run_simulation(mesh, mat, rate, final_strain, **kw)
    except (SolverFailure, SimulationDiverged, GeometryError, ArithmeticError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return float(sea(rec.nominal_stress, rec.nominal_strain, specimen_mass(params, mat))), ""


def validate_extremes(records, mat: MaterialModel, tolerance=0.10, rates=None, workers=1,
                      **sim_kw) -> List[ValidationRow]:
    """Re-simulate the best and worst design at each rate with the FE solver.

    ``records`` is a :class:`SweepTable` (or list of :class:`SweepRecord`
    with ``final_strain`` passed via ``sim_kw``).  A diverged simulation is
    reported as a failed row rather than raised.
    """
    if isinstance(records, SweepTable):
        final_strain = sim_kw.pop("final_strain", records.grid.final_strain)
        rates = rates or records.grid.rates
    else:
        final_strain = sim_kw.pop("final_strain")
        rates = rates or sorted({r.rate for r in records})
    jobs = []
    for rate in rates:
        best, worst = best_worst(records, rate)
        jobs += [(best, "best"), (worst, "worst")]
    args = [(r.params, r.rate, final_strain, mat, sim_kw) for r, _ in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_fe_sea, args))
    else:
        results = [_fe_sea(a) for a in args]
    rows = []
    for (r, role), (fe, err) in zip(jobs, results):
        rel = None if fe is None or fe == 0 else abs(r.sea - fe) / abs(fe)
        rows.append(ValidationRow(r.design_index, r.rate, fe, float(r.sea), rel,
                                  rel is not None and rel <= tolerance, role, err))
    return rows


def write_validation(rows: Sequence[ValidationRow], path):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in rows], fh, indent=1)


def angle_trend(table: SweepTable, rate, n_x, n_y, vf_bin, sides=4):
    """``(angles, sea)`` over the angle bins of one fixed design family."""
    g = table.grid
    ncount = len(g.count_values)
    s = sides - SIDES_RANGE[0]
    base = (((s * ncount + (n_x - 1)) * ncount + (n_y - 1)) * g.vf_bins + vf_bin) * g.angle_bins
    sub = table.at_rate(rate)
    pos = np.searchsorted(sub.index, base + np.arange(g.angle_bins))
    pos = np.clip(pos, 0, max(len(sub.index) - 1, 0))
    hit = (len(sub.index) > 0) & (sub.index[pos] == base + np.arange(g.angle_bins))
    vals = np.where(hit & sub.valid[pos], sub.sea[pos], np.nan)
    return g.angle_values, vals


def quarter_turn_gap(table: SweepTable, rate):
    """Mean relative SEA change between square designs at ``θ`` and ``θ + π/2``.

    Needs an angle bin count divisible by 4 so both angles are grid points.
    Pairs with an invalid member are skipped.
    """
    g = table.grid
    if g.angle_bins % 4:
        raise InvalidArgument("angle bins must be a multiple of 4")
    shift = g.angle_bins // 4
    sub = table.at_rate(rate)
    digits = g.digits(sub.index)
    square = (digits[0] == 4 - SIDES_RANGE[0]) & sub.valid
    lookup = dict(zip(sub.index[square].tolist(), sub.sea[square].tolist()))
    gaps = []
    for i, v in lookup.items():
        ka = i % g.angle_bins
        if ka >= shift * 3:
            continue
        j = i + shift
        if j in lookup:
            gaps.append(abs(v - lookup[j]) / max(0.5 * (abs(v) + abs(lookup[j])), 1e-300))
    return float(np.mean(gaps)) if gaps else float("nan")


def write_sweep_csv(table: SweepTable, path):
    vec = table.vectors() if len(table) else np.zeros((0, N_GEOM))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(len(table)):
            v = vec[k]
            w.writerow([int(table.index[k]), int(v[0]), int(v[1]), int(v[2]),
                        repr(math.degrees(v[3])), repr(float(v[4])), repr(float(table.rate[k])),
                        "true" if table.valid[k] else "false",
                        repr(float(table.sea[k])) if table.valid[k] else ""])


def write_svg(table: SweepTable, path, width=900, height=420):
    """Scatter of SEA against design index, one colour per rate, extremes ringed."""
    pad = 50
    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    ok = table.valid & np.isfinite(table.sea)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">design index</text>',
             f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
             f'text-anchor="middle">SEA (J/kg)</text>']
    if ok.any():
        smin, smax = float(table.sea[ok].min()), float(table.sea[ok].max())
        span = smax - smin or 1.0
        xmax = max(table.grid.size - 1, 1)

        def xy(i, s):
            return (pad + (width - 2 * pad) * i / xmax,
                    height - pad - (height - 2 * pad) * (s - smin) / span)

        for k, rate in enumerate(table.grid.rates):
            sub = table.at_rate(rate)
            m = sub.valid & np.isfinite(sub.sea)
            if not m.any():
                continue
            c = colours[k % len(colours)]
            # thin very dense sweeps so the file stays small
            sel = np.nonzero(m)[0][::max(1, int(m.sum()) // 20000)]
            dots = "".join(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="1"/>'
                           for x, y in (xy(sub.index[i], sub.sea[i]) for i in sel))
            parts.append(f'<g fill="{c}" fill-opacity="0.5">{dots}</g>')
            best, worst = best_worst(sub, rate)
            for r in (best, worst):
                x, y = xy(r.design_index, r.sea)
                parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="6" fill="none" stroke="{c}" '
                             f'stroke-width="2"/>')
            parts.append(f'<text x="{width - pad - 120}" y="{pad + 14 * k}" font-size="11" '
                         f'fill="{c}">rate {rate:g} /s</text>')
        parts.append(f'<text x="{pad - 4}" y="{pad}" text-anchor="end" font-size="10">{smax:.3g}</text>')
        parts.append(f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" '
                     f'font-size="10">{smin:.3g}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def write_angle_trend(table: SweepTable, path, vf_bins=None):
    """Square-tubule SEA against angle for every (n_x, n_y) at the chosen vf bins."""
    g = table.grid
    vf_bins = [g.vf_bins // 2] if vf_bins is None else list(vf_bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate_per_s", "nx", "ny", "vf", "angle_deg", "sea_J_per_kg"])
        if not len(table):
            return
        for rate in g.rates:
            for nx in g.count_values:
                for ny in g.count_values:
                    for kv in vf_bins:
                        ang, vals = angle_trend(table, rate, int(nx), int(ny), kv)
                        for a, v in zip(ang, vals):
                            if np.isfinite(v):
                                w.writerow([repr(rate), int(nx), int(ny), repr(float(g.vf_values[kv])),
                                            repr(math.degrees(a)), repr(float(v))])


def emit_maps(table: SweepTable, out_dir, prefix="sweep"):
    """Write the sweep CSV, SVG scatter and square-tubule angle trend; returns paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    paths = {"csv": os.path.join(out_dir, f"{prefix}.csv"),
             "svg": os.path.join(out_dir, f"{prefix}.svg"),
             "angle_trend": os.path.join(out_dir, f"{prefix}_angle_trend.csv")}
    write_sweep_csv(table, paths["csv"])
    write_svg(table, paths["svg"])
    write_angle_trend(table, paths["angle_trend"])
    return paths


def error_by_input(model, dataset: Dataset, which="test", bins=5):
    """Scaled MAE of ``which`` samples, binned by each input channel.

    Geometry and rate are binned per sample; strain is binned per time step.
    Returns ``{channel: [(lo, hi, mae, count), ...]}``.
    """
    X, Y = dataset.arrays(which, scaled=True)
    if len(X) == 0:
        return {}
    err = np.abs(forward(model, X) - Y).mean(axis=2)          # (N, T)
    raw, _ = dataset.arrays(which, scaled=False)
    names = ("sides", "n_x", "n_y", "angle", "vf", "strain", "strain_rate")
    chans = (0, 1, 2, 3, 4, STRAIN, 7)
    out = {}
    for name, c in zip(names, chans):
        if c == STRAIN:
            v, e = raw[:, :, c].ravel(), err.ravel()
        else:
            v, e = raw[:, 0, c], err.mean(axis=1)
        edges = np.unique(np.quantile(v, np.linspace(0, 1, bins + 1)))
        rows = []
        if len(edges) < 2:
            rows.append((float(v.min()), float(v.max()), float(e.mean()), int(len(e))))
        else:
            which_bin = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, len(edges) - 2)
            for b in range(len(edges) - 1):
                m = which_bin == b
                if m.any():
                    rows.append((float(edges[b]), float(edges[b + 1]), float(e[m].mean()), int(m.sum())))
        out[name] = rows
    return out


def sea_error_band(model, dataset: Dataset, mat: MaterialModel, which="test"):
    """Mean relative SEA error of the surrogate over ``which`` samples."""
    X, _ = dataset.arrays(which, scaled=True)
    idx = getattr(dataset.split, which)
    if len(idx) == 0:
        return float("nan")
    pred = dataset.scaler.unscale_outputs(forward(model, X))
    errs = []
    for k, i in enumerate(idx):
        s = dataset.samples[i]
        p = DesignParams(*s.inputs[0, :N_GEOM])
        strain = s.inputs[:, STRAIN]
        m = specimen_mass(p, mat)
        fe = float(sea(s.outputs[:, 0], strain, m))
        pr = float(sea(pred[k, :, 0], strain, m))
        if fe > 0:
            errs.append(abs(pr - fe) / fe)
    return float(np.mean(errs)) if errs else float("nan")
