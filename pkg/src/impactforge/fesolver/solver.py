"""Explicit central-difference simulation of transverse compression.

The top edge moves down at ``strain_rate * H``; the bottom edge is held
vertically; horizontal motion is free on both faces except one bottom node
at the centreline.  Side walls are traction-free unless ``lateral="confined"``.

When the stable step would need more than ``max_steps`` increments, the
density is scaled so that exactly ``max_steps`` stable increments cover the
loading (mass scaling); kinetic energy is reported with the scaled mass.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import _backend
from ..errors import InvalidArgument, SimulationDiverged, SolverFailure
from ..geometry import RasterMesh
from . import kernels
from .element import HOURGLASS, square_operators, stable_dt
from .material import RETURN_MAXIT, RETURN_TOL, MaterialModel

log = logging.getLogger(__name__)

RATE_RANGE = (0.45, 90.9)
MAX_STRAIN = 0.25
ARRAY_FIELDS = ("time", "nominal_strain", "nominal_stress", "reaction_force",
                "E_plastic", "E_elastic", "E_kinetic", "external_work", "hourglass_energy")
# JSON names of the arrays in the record file
WIRE_NAMES = {"time": "time_s", "nominal_strain": "strain", "nominal_stress": "stress_Pa",
              "reaction_force": "force_N_per_m", "E_plastic": "E_pl_J", "E_elastic": "E_el_J",
              "E_kinetic": "E_k_J", "external_work": "W_ext_J", "hourglass_energy": "E_hg_J"}


@dataclass
class SimulationRecord:
    """Recorded histories, SI units, per metre of thickness."""
    time: np.ndarray
    nominal_strain: np.ndarray
    nominal_stress: np.ndarray
    reaction_force: np.ndarray
    E_plastic: np.ndarray
    E_elastic: np.ndarray
    E_kinetic: np.ndarray
    external_work: np.ndarray
    hourglass_energy: np.ndarray
    strain_rate: float = 0.0
    final_strain: float = 0.0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.time)

    def energy_residual(self):
        """|W_ext - (E_k + E_el + E_pl + E_hg)| at every recorded instant."""
        stored = self.E_kinetic + self.E_elastic + self.E_plastic + self.hourglass_energy
        return np.abs(self.external_work - stored)

    def energy_error(self):
        """Largest residual relative to the external work at the same instant."""
        W = self.external_work
        res = self.energy_residual()
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(W > 0, res / W, np.where(res > 0, np.inf, 0.0))
        return float(rel.max()) if len(rel) else 0.0

    def to_dict(self):
        d = {WIRE_NAMES[k]: np.asarray(getattr(self, k)).tolist() for k in ARRAY_FIELDS}
        d["strain_rate"] = self.strain_rate
        d["final_strain"] = self.final_strain
        d["info"] = self.info
        return d

    @classmethod
    def from_dict(cls, d):
        arrays = {k: np.asarray(d[WIRE_NAMES[k]], dtype=float) for k in ARRAY_FIELDS
                  if WIRE_NAMES[k] in d}
        n = len(arrays["time"])
        for k in ARRAY_FIELDS:
            arrays.setdefault(k, np.zeros(n))
        return cls(**arrays, strain_rate=float(d.get("strain_rate", 0.0)),
                   final_strain=float(d.get("final_strain", 0.0)), info=dict(d.get("info", {})))


@dataclass
class _Model:
    conn: np.ndarray
    mass: np.ndarray
    free: np.ndarray
    vpres: np.ndarray
    v_init: np.ndarray
    top_ydofs: np.ndarray
    height: float
    width: float


def _assemble(mesh: RasterMesh, rho, velocity, lateral):
    h = mesh.edge * 1e-3
    N, M = mesh.elems_x, mesh.elems_y
    nnx = N + 1
    nnodes = nnx * (M + 1)
    jj, ii = np.nonzero(mesh.active)
    n0 = jj * nnx + ii
    conn = np.ascontiguousarray(np.column_stack((n0, n0 + 1, n0 + 1 + nnx, n0 + nnx)).astype(np.int64))
    node_mass = np.zeros(nnodes)
    np.add.at(node_mass, conn.ravel(), rho * h * h / 4.0)
    mass = np.repeat(node_mass, 2)

    prescribed = np.zeros(2 * nnodes, dtype=bool)
    vpres = np.zeros(2 * nnodes)
    top = M * nnx + np.arange(nnx)
    bottom = np.arange(nnx)
    prescribed[2 * top + 1] = True
    vpres[2 * top + 1] = -velocity
    prescribed[2 * bottom + 1] = True
    prescribed[2 * (N // 2)] = True  # horizontal rigid-body control at the bottom centreline
    if lateral == "confined":
        sides = np.concatenate((np.arange(M + 1) * nnx, np.arange(M + 1) * nnx + N))
        prescribed[2 * sides] = True
    elif lateral != "free":
        raise InvalidArgument(f"lateral must be 'free' or 'confined', got {lateral!r}")
    massless = mass == 0
    prescribed |= massless
    vpres[massless] = 0.0

    H = M * h
    y = (np.arange(nnodes) // nnx) * h
    v_init = np.zeros(2 * nnodes)
    v_init[1::2] = -velocity * y / H
    v_init[massless] = 0.0
    v_init[prescribed] = vpres[prescribed]
    top_ydofs = (2 * top + 1)[node_mass[top] > 0].astype(np.int64)
    return _Model(conn, mass, ~prescribed, vpres, v_init, top_ydofs, H, N * h)


def plan_steps(T, dt_stable, record_points, max_steps):
    """Step count (multiple of ``record_points - 1``) and density scale factor."""
    n = max(1, math.ceil(T / dt_stable))
    scale = 1.0
    if max_steps and n > max_steps:
        n = int(max_steps)
        scale = (T / n / dt_stable) ** 2
    seg = max(1, record_points - 1)
    n = seg * math.ceil(n / seg)
    return n, scale


def run_simulation(mesh: RasterMesh, mat: MaterialModel, strain_rate, final_strain,
                   record_points=50, integration="full", safety=0.9, max_steps=20000,
                   lateral="free", rate_range=RATE_RANGE, max_strain=MAX_STRAIN,
                   energy_tol=0.01, hourglass_kappa=0.1, backend=None) -> SimulationRecord:
    """Compress ``mesh`` at a constant nominal strain rate up to ``final_strain``.

    Raises :class:`SimulationDiverged` when non-finite values appear or the
    energy balance misses by more than ``energy_tol`` of the external work
    (pass ``energy_tol=None`` to skip the check).
    """
    backend = _backend.resolve(backend)
    if not (math.isfinite(strain_rate) and strain_rate > 0):
        raise InvalidArgument("strain_rate must be positive")
    if rate_range is not None and not rate_range[0] <= strain_rate <= rate_range[1]:
        raise InvalidArgument(f"strain_rate {strain_rate} outside {rate_range}")
    if not 0 <= final_strain <= max_strain:
        raise InvalidArgument(f"final_strain must be in [0, {max_strain}]")
    if record_points < 2 and final_strain > 0:
        raise InvalidArgument("record_points must be at least 2")

    if final_strain == 0:
        z = np.zeros(1)
        return SimulationRecord(*(z.copy() for _ in ARRAY_FIELDS), strain_rate=float(strain_rate),
                                final_strain=0.0, info={"nsteps": 0})

    h = mesh.edge * 1e-3
    H = mesh.elems_y * h
    velocity = strain_rate * H
    T = final_strain / strain_rate
    dt0 = stable_dt(h, mat, safety)
    nsteps, scale = plan_steps(T, dt0, record_points, max_steps)
    dt = T / nsteps
    rho = mat.rho * scale
    model = _assemble(mesh, rho, velocity, lateral)

    B, wdet = square_operators(h, integration)
    ngp = B.shape[0]
    ne = model.conn.shape[0]
    hx, hy = mat.table
    hg_coef = 0.0
    if integration == "reduced":
        hg_coef = hourglass_kappa * rho * math.sqrt(mat.constrained_modulus / rho) * h / 4.0

    rec_slot = -np.ones(nsteps + 1, dtype=np.int64)
    seg = nsteps // (record_points - 1)
    rec_slot[::seg] = np.arange(record_points)
    stress = np.zeros((ne, ngp, 4))
    epbar = np.zeros((ne, ngp))
    out = np.zeros((record_points, 6))

    log.debug("simulate: %d elements, %d steps, dt=%.3e s, mass scale %.3g, backend %s",
              ne, nsteps, dt, scale, backend)
    if backend == "numba":
        status, step, el = kernels.run_steps_numba(
            model.conn, B, wdet, mat.lam, mat.G, float(mat.D), float(mat.n_exp), hx, hy,
            model.mass, model.free, model.vpres, model.v_init, dt, nsteps, rec_slot,
            model.top_ydofs, hg_coef, HOURGLASS, RETURN_TOL, RETURN_MAXIT, stress, epbar, out)
    else:
        stepper = kernels.NumpyStepper(model.conn, B, wdet, mat.lam, mat.G, float(mat.D),
                                       float(mat.n_exp), hx, hy, model.mass, model.free,
                                       model.vpres, hg_coef, HOURGLASS, RETURN_TOL, RETURN_MAXIT)
        status, step, el = stepper.run(model.v_init, dt, nsteps, rec_slot, model.top_ydofs,
                                       stress, epbar, out)
    if status == kernels.RETURN_MAP_FAILED:
        raise SolverFailure(f"return map failed at step {step} in element {el}", step=step, element=el)
    if status == kernels.NON_FINITE:
        raise SimulationDiverged(f"non-finite state at step {step}")

    strain = np.arange(record_points) * (final_strain / (record_points - 1))
    rec = SimulationRecord(
        time=strain / strain_rate,
        nominal_strain=strain,
        nominal_stress=out[:, 0] / model.width,
        reaction_force=out[:, 0],
        E_plastic=out[:, 1],
        E_elastic=out[:, 2],
        E_kinetic=out[:, 3],
        external_work=out[:, 4],
        hourglass_energy=out[:, 5],
        strain_rate=float(strain_rate),
        final_strain=float(final_strain),
        info={"nsteps": nsteps, "dt": dt, "mass_scale": scale, "integration": integration,
              "lateral": lateral, "backend": backend, "elements": ne},
    )
    rec.final_state = {"stress": stress, "epbar": epbar, "conn": model.conn}
    if energy_tol is not None:
        err = rec.energy_error()
        if err > energy_tol:
            raise SimulationDiverged(f"energy balance error {err:.3%} exceeds {energy_tol:.1%}")
    return rec
