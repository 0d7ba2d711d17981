"""Simulation records -> fixed-length, scaled, augmented, split training tensors."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import InvalidArgument
from .fesolver.solver import SimulationRecord
from .geometry import SPECIMEN, DesignParams

T_STEPS = 50
INPUT_CHANNELS = ("sides", "n_x", "n_y", "angle", "vf", "time_s", "strain", "strain_rate")
OUTPUT_CHANNELS = ("stress_Pa", "E_plastic_J", "E_elastic_J", "E_absorbed_J")
N_GEOM = 5
TIME, STRAIN, RATE = 5, 6, 7
HEIGHT_M = SPECIMEN * 1e-3


@dataclass
class SampleTensor:
    inputs: np.ndarray   # (T, 8)
    outputs: np.ndarray  # (T, 4)
    sim_id: str = ""
    sample_id: str = ""

    @property
    def final_strain(self):
        return float(self.inputs[-1, STRAIN])

    def to_dict(self):
        return {"sample_id": self.sample_id, "sim_id": self.sim_id,
                "inputs": self.inputs.tolist(), "outputs": self.outputs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["inputs"], dtype=float), np.asarray(d["outputs"], dtype=float),
                   d.get("sim_id", ""), d.get("sample_id", ""))


def absorbed_energy(strain, force, height=HEIGHT_M):
    """Cumulative trapezoidal integral of force over plate displacement."""
    x = np.asarray(strain, dtype=float) * height
    f = np.asarray(force, dtype=float)
    out = np.zeros_like(x)
    if len(x) > 1:
        out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))
    return out


def downsample(record: SimulationRecord, params: DesignParams, T=T_STEPS, sim_id="") -> SampleTensor:
    """Resample a record onto ``T`` uniform strain levels in ``[0, final strain]``."""
    n = len(record.nominal_strain)
    if n < 2:
        raise InvalidArgument("record needs at least two points")
    strain = np.asarray(record.nominal_strain, dtype=float)
    grid = np.linspace(0.0, strain[-1], T)
    e_abs = absorbed_energy(strain, record.reaction_force)
    inputs = np.empty((T, 8))
    inputs[:, :N_GEOM] = params.as_vector()
    inputs[:, TIME] = np.interp(grid, strain, record.time)
    inputs[:, STRAIN] = grid
    inputs[:, RATE] = record.strain_rate
    outputs = np.column_stack([np.interp(grid, strain, a) for a in
                               (record.nominal_stress, record.E_plastic, record.E_elastic, e_abs)])
    return SampleTensor(inputs, outputs, sim_id, sample_id=f"{sim_id}:0")


def truncate(sample: SampleTensor, final_strain, T=T_STEPS, sample_id=None) -> SampleTensor:
    """Cut ``sample`` at ``final_strain`` and re-interpolate onto ``T`` points."""
    strain = sample.inputs[:, STRAIN]
    grid = np.linspace(0.0, final_strain, T)
    if np.array_equal(grid, strain):
        inputs, outputs = sample.inputs.copy(), sample.outputs.copy()
    else:
        inputs = np.empty((T, 8))
        inputs[:, :N_GEOM] = sample.inputs[0, :N_GEOM]
        inputs[:, TIME] = np.interp(grid, strain, sample.inputs[:, TIME])
        inputs[:, STRAIN] = grid
        inputs[:, RATE] = sample.inputs[0, RATE]
        outputs = np.column_stack([np.interp(grid, strain, sample.outputs[:, c]) for c in range(4)])
    return SampleTensor(inputs, outputs, sample.sim_id, sample_id or sample.sample_id)


def augment(sample: SampleTensor, k=20, strain_lo=0.10, strain_hi=0.25, rng=None,
            T=T_STEPS) -> List[SampleTensor]:
    """``k`` children of ``sample`` truncated at uniformly drawn final strains.

    ``sample`` may be longer than ``T`` (a finer resampling of the same
    record); children always have ``T`` points.
    """
    if not strain_lo < strain_hi:
        raise InvalidArgument("need strain_lo < strain_hi")
    if strain_hi > sample.final_strain * (1 + 1e-12):
        raise InvalidArgument("strain_hi exceeds the sample's final strain")
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    rng = np.random.default_rng(rng)
    finals = rng.uniform(strain_lo, strain_hi, size=k)
    return [truncate(sample, float(ef), T, f"{sample.sim_id}:{i + 1}") for i, ef in enumerate(finals)]


@dataclass
class ScalerParams:
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    # training range of the inputs, used to flag extrapolation
    in_lo: np.ndarray = None
    in_hi: np.ndarray = None

    def scale_inputs(self, x):
        return (x - self.in_mean) / self.in_std

    def scale_outputs(self, y):
        return (y - self.out_mean) / self.out_std

    def unscale_inputs(self, xs):
        return xs * self.in_std + self.in_mean

    def unscale_outputs(self, ys):
        return ys * self.out_std + self.out_mean

    def to_dict(self):
        return {k: (None if getattr(self, k) is None else getattr(self, k).tolist())
                for k in ("in_mean", "in_std", "out_mean", "out_std", "in_lo", "in_hi")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (None if v is None else np.asarray(v, dtype=float)) for k, v in d.items()})


def _moments(a):
    mu = a.mean(axis=0)
    sd = a.std(axis=0)
    # zero-variance channels keep unit scale
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def fit_scaler(samples: Sequence[SampleTensor]) -> ScalerParams:
    """Per-channel z-score statistics of the (training) samples."""
    if len(samples) == 0:
        raise InvalidArgument("cannot fit a scaler on an empty set")
    X = np.concatenate([s.inputs for s in samples])
    Y = np.concatenate([s.outputs for s in samples])
    im, isd = _moments(X)
    om, osd = _moments(Y)
    return ScalerParams(im, isd, om, osd, X.min(axis=0), X.max(axis=0))


def apply_scaler(scaler: ScalerParams, sample: SampleTensor) -> SampleTensor:
    return SampleTensor(scaler.scale_inputs(sample.inputs), scaler.scale_outputs(sample.outputs),
                        sample.sim_id, sample.sample_id)


def invert_scaler(scaler: ScalerParams, sample: SampleTensor) -> SampleTensor:
    return SampleTensor(scaler.unscale_inputs(sample.inputs), scaler.unscale_outputs(sample.outputs),
                        sample.sim_id, sample.sample_id)


@dataclass
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def to_dict(self):
        return {"train": self.train.tolist(), "validation": self.validation.tolist(),
                "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("train", "validation", "test")))


FRACTIONS = (0.65, 0.15, 0.20)


def split(groups: Sequence[str], seed=0, fractions=FRACTIONS) -> DatasetSplit:
    """Partition sample indices by whole parent-simulation groups."""
    groups = list(groups)
    parents = list(dict.fromkeys(groups))
    if len(parents) < 3:
        raise InvalidArgument("need at least 3 parent simulations to split")
    order = np.random.default_rng(seed).permutation(len(parents))
    n = len(parents)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    where = {}
    for rank, p in enumerate(order):
        where[parents[p]] = 0 if rank < n_train else (1 if rank < n_train + n_val else 2)
    part = np.array([where[g] for g in groups])
    idx = np.arange(len(groups))
    return DatasetSplit(idx[part == 0], idx[part == 1], idx[part == 2])


@dataclass
class Dataset:
    samples: List[SampleTensor]
    split: DatasetSplit
    scaler: ScalerParams
    manifest: dict = field(default_factory=dict)

    def arrays(self, which, scaled=True):
        idx = getattr(self.split, which)
        X = np.stack([self.samples[i].inputs for i in idx]) if len(idx) else np.zeros((0, T_STEPS, 8))
        Y = np.stack([self.samples[i].outputs for i in idx]) if len(idx) else np.zeros((0, T_STEPS, 4))
        if scaled:
            X = self.scaler.scale_inputs(X)
            Y = self.scaler.scale_outputs(Y)
        return X, Y


def build_dataset(entries, k=20, strain_lo=0.10, strain_hi=0.25, seed=0, T=T_STEPS,
                  fine_points=None) -> Dataset:
    """Downsample, augment, split and scale.

    ``entries`` yields ``(sim_id, DesignParams, SimulationRecord)``.  Children
    are cut from a resampling with ``fine_points`` points (default: the
    record's own length) so that truncation keeps the record's resolution.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for sim_id, params, rec in entries:
        parent = downsample(rec, params, T, sim_id)
        samples.append(parent)
        if k > 0:
            fine = downsample(rec, params, fine_points or max(T, len(rec)), sim_id)
            samples.extend(augment(fine, k, strain_lo, strain_hi, rng, T))
    sp = split([s.sim_id for s in samples], seed)
    scaler = fit_scaler([samples[i] for i in sp.train])
    manifest = {"seed": seed, "T": T,
                "augmentation": {"k": k, "strain_lo": strain_lo, "strain_hi": strain_hi,
                                 "fine_points": fine_points},
                "n_samples": len(samples)}
    return Dataset(samples, sp, scaler, manifest)


def save_dataset(ds: Dataset, path):
    """JSON-lines samples at ``path`` plus ``<path>.manifest.json``."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for s in ds.samples:
            fh.write(json.dumps(s.to_dict()) + "\n")
    os.replace(tmp, path)
    manifest = dict(ds.manifest)
    manifest["scaler"] = ds.scaler.to_dict()
    manifest["split"] = ds.split.to_dict()
    with open(manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=1)


def manifest_path(path):
    return f"{path}.manifest.json"


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        samples = [SampleTensor.from_dict(json.loads(line)) for line in fh if line.strip()]
    with open(manifest_path(path)) as fh:
        manifest = json.load(fh)
    scaler = ScalerParams.from_dict(manifest.pop("scaler"))
    sp = DatasetSplit.from_dict(manifest.pop("split"))
    return Dataset(samples, sp, scaler, manifest)
