"""Timing comparison of the jitted and pure-numpy integration paths.

Builds a ring-with-chords oscillator network with saturating-integrator
edge controllers, integrates it once with the compiled kernels and once
with COUPLEDNET_FORCE_NUMPY=1, and reports wall times.  The first jit
run includes compilation, so one warmup run is done before timing.

Usage:
    python3 benchmarks/bench_integrate.py [--nodes 24] [--horizon 20]
        [--repeat 3] [--method rk45]
"""

import argparse
import os
import time

import numpy as np

from couplednet import _fastpath
from couplednet.couplers import nonlinear_integrator, paper_psi, PSI_RANGE
from couplednet.netgraph import build_graph
from couplednet.plants import damped_oscillator_agent
from couplednet.relations import quadratic, scalar_separable
from couplednet.simulate import (IntegrateOptions, closed_loop,
                                 default_initial_state, integrate)


def build_system(nodes: int, seed: int = 3):
    rng = np.random.default_rng(seed)
    d = 2
    edges = [(i, (i + 1) % nodes) for i in range(nodes)]
    edges += [(i, (i + nodes // 2) % nodes) for i in range(0, nodes, 4)]
    graph = build_graph(nodes, edges)

    def orth():
        q, r = np.linalg.qr(rng.normal(size=(d, d)))
        return q * np.sign(np.diag(r))

    agents = []
    for _ in range(nodes):
        U, V = orth(), orth()
        M = U @ np.diag(rng.uniform(18.0, 22.0, d)) @ V.T
        Q = orth()
        S = Q @ np.diag(rng.uniform(35.0, 45.0, d)) @ Q.T
        R = orth()
        D = R @ np.diag(rng.uniform(170.0, 190.0, d)) @ R.T
        anchor = rng.normal(0.0, 0.5, d)
        agents.append(damped_oscillator_agent(M, M.T @ S, psi=quadratic(D),
                                              anchor=anchor))
    pot = scalar_separable(paper_psi, d, PSI_RANGE)
    ctrls = [nonlinear_integrator(pot) for _ in range(graph.edge_count)]
    return closed_loop(graph, agents, ctrls)


def run_once(system, horizon, opts):
    init = default_initial_state(system)
    t0 = time.perf_counter()
    traj = integrate(system, init, horizon, opts)
    dt = time.perf_counter() - t0
    return dt, traj


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=24)
    ap.add_argument("--horizon", type=float, default=20.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--method", choices=("rk45", "rk4"), default="rk45")
    args = ap.parse_args()

    system = build_system(args.nodes)
    opts = IntegrateOptions(method=args.method, tol=1e-8, dt=1e-3)
    print(f"network: {system.graph.node_count} nodes, "
          f"{system.graph.edge_count} edges, state dim {system.state_dim}, "
          f"method {args.method}, horizon {args.horizon}")

    if not _fastpath.HAS_NUMBA:
        print("numba not installed; only the numpy path is available")

    results = {}
    for label, force in (("numpy", "1"), ("numba", "0")):
        if label == "numba" and not _fastpath.HAS_NUMBA:
            continue
        os.environ["COUPLEDNET_FORCE_NUMPY"] = force
        if label == "numba":
            run_once(system, min(args.horizon, 1.0), opts)  # compile
        times = []
        ref = None
        for _ in range(args.repeat):
            dt, traj = run_once(system, args.horizon, opts)
            times.append(dt)
            ref = traj
        results[label] = (min(times), ref)
        print(f"{label:>6}: best of {args.repeat}: {min(times)*1e3:9.2f} ms "
              f"({len(ref.times)} samples)")
    os.environ.pop("COUPLEDNET_FORCE_NUMPY", None)

    if len(results) == 2:
        t_np, traj_np = results["numpy"]
        t_nb, traj_nb = results["numba"]
        dev = float(np.max(np.abs(traj_np.y - traj_nb.y)))
        print(f"speedup numba vs numpy: {t_np / t_nb:.1f}x, "
              f"max |y| deviation between paths: {dev:.2e}")


if __name__ == "__main__":
    main()
