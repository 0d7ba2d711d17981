"""Wall-clock comparison of the numba and numpy kernels.

    python3 benchmarks/bench_backends.py [--edge 0.24] [--steps 2000] [--repeat 3]

Times one explicit FE simulation per backend (after a warm-up run that pays
the JIT cost) and the vectorised return map on a large batch of states.
"""
import argparse
import json
import time

import numpy as np

from impactforge.fesolver import MaterialModel, run_simulation
from impactforge.fesolver.kernels import return_map_vec
from impactforge.geometry import DesignParams, mesh_for_design


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--edge", type=float, default=0.24)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    mat = MaterialModel()
    mesh = mesh_for_design(DesignParams(4, 3, 3, 0.4, 0.06), args.edge)
    results = {"elements": int(mesh.n_active), "steps": args.steps}
    for backend in ("numba", "numpy"):
        run = lambda: run_simulation(mesh, mat, 9.1, 0.25, max_steps=args.steps, backend=backend)
        run()  # warm-up (JIT compile for numba)
        results[f"simulate_{backend}_s"] = best_of(run, args.repeat)
    results["simulate_speedup"] = results["simulate_numpy_s"] / results["simulate_numba_s"]

    rng = np.random.default_rng(0)
    n = 200_000
    q = rng.uniform(40e6, 150e6, n)
    ep = rng.uniform(0, 0.3, n)
    hx, hy = mat.table
    results["return_map_states"] = n
    results["return_map_vec_s"] = best_of(
        lambda: return_map_vec(q, ep, 2e-6, 3 * mat.G, mat.D, mat.n_exp, hx, hy), args.repeat)
    print(json.dumps(results, indent=1))
    return results


if __name__ == "__main__":
    main()
