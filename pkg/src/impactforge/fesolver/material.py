"""Rate-dependent J2 material: overstress power law with radial return.

Stress and strain tensors are stored as plane-strain vectors
``(xx, yy, zz, xy)``; shear entries are tensor components (not engineering).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidArgument, SolverFailure, UndefinedDirection
from . import kernels

RETURN_TOL = 1e-13
RETURN_MAXIT = 100


@dataclass(frozen=True)
class MaterialModel:
    E: float = 2.5e9
    nu: float = 0.35
    rho: float = 1070.0
    # rows of (plastic strain, static yield stress in Pa); PC-ABS-like placeholder values
    hardening: tuple = ((0.0, 60e6), (0.5, 80e6))
    D: float = 100.0
    n_exp: float = 2.0

    def __post_init__(self):
        h = np.asarray(self.hardening, dtype=float)
        if h.ndim != 2 or h.shape[1] != 2 or len(h) == 0:
            raise InvalidArgument("hardening must be a list of (epbar, sigma0) rows")
        object.__setattr__(self, "hardening", tuple(map(tuple, h.tolist())))
        if not self.E > 0:
            raise InvalidArgument("E must be positive")
        if not 0 < self.nu < 0.5:
            raise InvalidArgument("nu must be in (0, 0.5)")
        if not self.rho > 0:
            raise InvalidArgument("rho must be positive")
        if not self.D > 0 or not self.n_exp >= 1:
            raise InvalidArgument("need D > 0 and n_exp >= 1")
        if np.any(h[:, 1] <= 0) or np.any(np.diff(h[:, 1]) < 0) or np.any(np.diff(h[:, 0]) <= 0):
            raise InvalidArgument("hardening curve must be positive, non-decreasing, with increasing epbar")

    @property
    def G(self):
        return self.E / (2 * (1 + self.nu))

    @property
    def lam(self):
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def K(self):
        return self.E / (3 * (1 - 2 * self.nu))

    @property
    def constrained_modulus(self):
        return self.E * (1 - self.nu) / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def wave_speed(self):
        return math.sqrt(self.constrained_modulus / self.rho)

    @property
    def table(self):
        h = np.asarray(self.hardening, dtype=float)
        return np.ascontiguousarray(h[:, 0]), np.ascontiguousarray(h[:, 1])

    def sigma0(self, epbar):
        hx, hy = self.table
        return kernels.hardening(float(epbar), hx, hy)[0]

    def with_(self, **kw):
        return replace(self, **kw)

    @classmethod
    def elastic(cls, **kw):
        """Same elasticity with a yield stress high enough never to be reached."""
        return cls(hardening=((0.0, 1e18),), **kw)

    def to_dict(self):
        return {"E_Pa": self.E, "nu": self.nu, "rho_kg_m3": self.rho,
                "hardening": [list(r) for r in self.hardening],
                "D_per_s": self.D, "n_exp": self.n_exp}

    @classmethod
    def from_dict(cls, d):
        return cls(E=d["E_Pa"], nu=d["nu"], rho=d["rho_kg_m3"],
                   hardening=tuple(tuple(r) for r in d["hardening"]),
                   D=d["D_per_s"], n_exp=d["n_exp"])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _deviator(stress):
    s = np.array(stress, dtype=float)
    p = s[..., :3].mean(axis=-1)
    s[..., :3] -= p[..., None]
    return s, p


def von_mises(stress):
    """Mises stress sqrt(3/2 S:S) of plane-strain stress vector(s)."""
    S, _ = _deviator(stress)
    return np.sqrt(1.5 * (S[..., 0] ** 2 + S[..., 1] ** 2 + S[..., 2] ** 2 + 2 * S[..., 3] ** 2))


def flow_direction(stress):
    """Normal ``3/2 S / q``; raises :class:`UndefinedDirection` where ``q == 0``."""
    S, _ = _deviator(stress)
    q = von_mises(stress)
    if np.any(q == 0):
        raise UndefinedDirection("flow direction undefined for a purely hydrostatic state")
    return 1.5 * S / np.asarray(q)[..., None]


def double_contract(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2] + 2 * a[..., 3] * b[..., 3]


def overstress_rate(q, epbar, mat: MaterialModel):
    """Equivalent plastic strain rate of the overstress power law, 1/s."""
    s0 = mat.sigma0(epbar)
    if q <= s0:
        return 0.0
    return mat.D * (q / s0 - 1.0) ** mat.n_exp


@dataclass
class ElementState:
    stress: np.ndarray = field(default_factory=lambda: np.zeros(4))
    epbar: float = 0.0

    def eps_el(self, mat: MaterialModel):
        s = np.asarray(self.stress, dtype=float)
        tr = s[:3].sum()
        e = (1 + mat.nu) / mat.E * s
        e[:3] -= mat.nu / mat.E * tr
        return e

    def copy(self):
        return ElementState(np.array(self.stress, dtype=float), float(self.epbar))


def solve_increment(q_trial, epbar, dt, mat: MaterialModel, tol=RETURN_TOL, maxit=RETURN_MAXIT):
    """Backward-Euler plastic increment for a trial Mises stress."""
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    hx, hy = mat.table
    dep, its, ok = kernels.return_map(float(q_trial), float(epbar), float(dt), 3 * mat.G,
                                      float(mat.D), float(mat.n_exp), hx, hy, tol, maxit)
    if not ok:
        raise SolverFailure("return map did not converge", q_trial=q_trial, epbar=epbar,
                            dt=dt, iterations=its, last=dep)
    return dep


def return_residual(dep, q_trial, epbar, dt, mat: MaterialModel):
    """g(dep) of the backward-Euler update (overstress clipped at zero)."""
    s0 = mat.sigma0(epbar + dep)
    over = max((q_trial - 3 * mat.G * dep) / s0 - 1.0, 0.0)
    return dep - dt * mat.D * over ** mat.n_exp


def radial_return(trial_stress, dt, state: ElementState, mat: MaterialModel) -> ElementState:
    trial = np.asarray(trial_stress, dtype=float)
    q = float(von_mises(trial))
    dep = solve_increment(q, state.epbar, dt, mat)
    if dep == 0.0:
        return ElementState(trial.copy(), state.epbar)
    S, p = _deviator(trial)
    S *= (q - 3 * mat.G * dep) / q
    S[:3] += p
    return ElementState(S, state.epbar + dep)
