"""Command-line front-end: predict, simulate, synthesize, check-cm, verify."""
from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from . import config as cfgmod
from .couplers import ControllerKind
from .errors import (
    ConfigInvalid,
    CoupledNetError,
    EmptyInverse,
    EmptySelection,
    Infeasible,
    InfiniteValue,
    LeastSquaresFailure,
    NoConvergence,
    NonFiniteState,
    NotForcible,
    OutsideDomain,
    RadiusNotFound,
    RelationNotEvaluable,
    SingularMatrix,
    SolverFailure,
    StepUnderflow,
    Unbounded,
    UnsupportedKind,
)
from .netopt import (
    SolveOptions,
    assemble,
    duality_gap,
    recover_certificate,
    solve_opp,
    verify_steady_state,
)
from .plants import AgentKind, is_meicmp_linear, is_meicmp_oscillator, ss_relation
from .relations import Sampler, check_cm
from .simulate import (
    IntegrateOptions,
    closed_loop,
    compare_prediction,
    default_initial_state,
    detect_convergence,
    export_csv,
    integrate,
    integrate_schedule,
)
from .synthesis import (
    apply_leader,
    check_forcible,
    check_uniqueness_conditions,
    leader_input,
    reconfiguration_offsets,
    synthesize_linear,
    wrap_reconfigured,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MATH = 2
EXIT_NUMERIC = 3

_MATH_ERRORS = (Infeasible, NotForcible, EmptyInverse, EmptySelection,
                RelationNotEvaluable, Unbounded, OutsideDomain)
_NUMERIC_ERRORS = (NoConvergence, SolverFailure, StepUnderflow,
                   NonFiniteState, RadiusNotFound, SingularMatrix,
                   LeastSquaresFailure, InfiniteValue)


def _guard(fn) -> int:
    try:
        fn()
        return EXIT_OK
    except ConfigInvalid as ex:
        click.echo(f"config error: {ex}", err=True)
        return EXIT_CONFIG
    except _MATH_ERRORS as ex:
        click.echo(f"infeasible: {type(ex).__name__}: {ex}", err=True)
        return EXIT_MATH
    except _NUMERIC_ERRORS as ex:
        click.echo(f"numerical failure: {type(ex).__name__}: {ex}", err=True)
        return EXIT_NUMERIC
    except CoupledNetError as ex:
        click.echo(f"error: {type(ex).__name__}: {ex}", err=True)
        return EXIT_CONFIG


def _outdir(out) -> str:
    os.makedirs(out, exist_ok=True)
    return out


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
        fh.write("\n")


def _fmt_vec(v) -> str:
    return "(" + ", ".join(f"{x:.6g}" for x in np.asarray(v).ravel()) + ")"


def _load(config_path, seed):
    cfg = cfgmod.load_config(config_path)
    if seed is not None:
        object.__setattr__(cfg, "seed", int(seed))
    return cfg


def _solve_options(cfg) -> SolveOptions:
    sec = cfg.solver
    kw = {}
    if "tol" in sec:
        kw["tol"] = float(sec["tol"])
    if "max_iter" in sec:
        kw["max_iter"] = int(sec["max_iter"])
    if "step" in sec and sec["step"] is not None:
        kw["step"] = float(sec["step"])
    return SolveOptions(**kw)


def _integrate_options(cfg) -> IntegrateOptions:
    sec = cfg.simulation
    kw = {}
    if "method" in sec:
        kw["method"] = str(sec["method"])
    if "tol" in sec:
        kw["tol"] = float(sec["tol"])
    if "dt" in sec:
        kw["dt"] = float(sec["dt"])
    if sec.get("record_every") is not None:
        kw["record_every"] = float(sec["record_every"])
    return IntegrateOptions(**kw)


@click.group()
def cli():
    """Steady-state analysis and simulation of diffusively coupled networks."""


@cli.command("predict")
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="Network config (JSON).")
@click.option("--out", default=".", type=click.Path(), help="Output directory.")
@click.option("--seed", default=None, type=int, help="Override config seed.")
def cmd_predict(config_path, out, seed):
    """Solve for the steady state and write the certificate."""

    def run():
        cfg = _load(config_path, seed)
        problem = assemble(cfg.graph, cfg.agents, cfg.controllers)
        y, zeta, trace = solve_opp(problem, opts=_solve_options(cfg))
        cert = recover_certificate(problem, y, zeta)
        gap = duality_gap(problem, cert.u, cert.mu, cert.y, cert.zeta)
        outdir = _outdir(out)
        trace.write_csv(os.path.join(outdir, "opp_trace.csv"))
        _write_json(os.path.join(outdir, "certificate.json"), {
            "u": cert.u, "y": cert.y, "zeta": cert.zeta, "mu": cert.mu,
            "residual_consistency": cert.residual_consistency,
            "residual_relations": cert.residual_relations,
            "residual_inclusion": cert.residual_inclusion,
            "duality_gap": gap,
            "method": trace.method, "iterations": trace.iterations,
        })
        click.echo(f"y = {_fmt_vec(cert.y)}")
        click.echo(f"mu = {_fmt_vec(cert.mu)}")
        click.echo(f"duality_gap = {gap:.3e}")

    return _guard(run)


def _plan_segments(cfg):
    """Per-target systems for the objective schedule.

    For each target: inject the leader input when a leader is declared,
    then wrap the base controllers with the reconfiguration offsets
    computed against the segment plant's natural steady state. Returns
    (system, duration, certificate, target) tuples.
    """
    obj = cfg.objective
    d = cfg.agents[0].io_dim
    base_problem = assemble(cfg.graph, cfg.agents, cfg.controllers)
    segments = []
    for y_star, T in zip(obj.targets, obj.durations):
        agents_k = cfg.agents
        problem_k = base_problem
        if obj.leader is not None:
            z = leader_input(base_problem, y_star, obj.leader)
            agents_k = apply_leader(cfg.agents, obj.leader, z)
            problem_k = assemble(cfg.graph, agents_k, cfg.controllers)
        y0, _, _ = solve_opp(problem_k, opts=_solve_options(cfg))
        alpha, beta = reconfiguration_offsets(problem_k, y0, y_star)
        ctrls_k = wrap_reconfigured(cfg.controllers, alpha, beta, d)
        problem_w = assemble(cfg.graph, agents_k, ctrls_k)
        zeta_star = problem_w.op.lifted.T @ y_star
        cert = recover_certificate(problem_w, y_star, zeta_star)
        system = closed_loop(cfg.graph, agents_k, ctrls_k)
        segments.append((system, T, cert, y_star))
    return segments


@cli.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=None, type=int)
def cmd_simulate(config_path, out, seed):
    """Integrate the closed loop and report convergence per segment."""

    def run():
        cfg = _load(config_path, seed)
        opts = _integrate_options(cfg)
        outdir = _outdir(out)
        summary = []
        if cfg.objective is not None:
            plan = _plan_segments(cfg)
            init = cfg.simulation.get("initial_state")
            init = (np.asarray(init, dtype=float)
                    if init is not None else default_initial_state(plan[0][0]))
            traj = integrate_schedule(
                [(sysk, T) for sysk, T, _, _ in plan], init, opts)
            t_lo = 0.0
            for k, (sysk, T, cert, y_star) in enumerate(plan):
                t_hi = t_lo + T
                mask = (traj.times >= t_lo) & (traj.times <= t_hi)
                sub = _slice_traj(traj, mask, sysk)
                conv = detect_convergence(sub, tol=float(
                    cfg.simulation.get("conv_tol", 1e-6)))
                line = f"segment {k}: converged = {conv.converged}"
                if conv.converged:
                    err = float(np.max(np.abs(conv.y_ss - y_star)))
                    rep = compare_prediction(sub, cert, tol=1e-3)
                    line += (f", y_ss = {_fmt_vec(conv.y_ss)}"
                             f", target_err_inf = {err:.3e}"
                             f", prediction_pass = {rep.passed}")
                summary.append(line)
                t_lo = t_hi
        else:
            system = closed_loop(cfg.graph, cfg.agents, cfg.controllers)
            horizon = float(cfg.simulation.get("horizon", 0.0))
            if horizon <= 0.0:
                raise ConfigInvalid(
                    "simulation.horizon must be positive (empty trajectory)")
            init = cfg.simulation.get("initial_state")
            init = (np.asarray(init, dtype=float)
                    if init is not None else default_initial_state(system))
            traj = integrate(system, init, horizon, opts)
            conv = detect_convergence(traj, tol=float(
                cfg.simulation.get("conv_tol", 1e-6)))
            summary.append(f"converged = {conv.converged}")
            if conv.converged:
                summary.append(f"y_ss = {_fmt_vec(conv.y_ss)}")
                problem = assemble(cfg.graph, cfg.agents, cfg.controllers)
                y, zeta, _ = solve_opp(problem, opts=_solve_options(cfg))
                cert = recover_certificate(problem, y, zeta)
                rep = compare_prediction(traj, cert, tol=1e-3)
                summary.append(f"y_error_aligned = {rep.y_error_aligned:.6e}")
                summary.append(f"mu_error_aligned = {rep.mu_error_aligned:.6e}")
                summary.append(f"prediction_pass = {rep.passed}")
        export_csv(traj, os.path.join(outdir, "trajectory.csv"))
        text = "\n".join(summary)
        with open(os.path.join(outdir, "summary.txt"), "w") as fh:
            fh.write(text + "\n")
        click.echo(text)

    return _guard(run)


def _slice_traj(traj, mask, system):
    from .simulate import Trajectory

    return Trajectory(system=system, times=traj.times[mask],
                      states=traj.states[mask], u=traj.u[mask],
                      y=traj.y[mask], zeta=traj.zeta[mask],
                      mu=traj.mu[mask], metadata=traj.metadata)


@cli.command("synthesize")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--target", default=None, type=str,
              help="Desired steady output y* as a JSON array "
                   "(defaults to the first objective target).")
@click.option("--mode", default="absolute",
              type=click.Choice(["absolute", "relative"]))
@click.option("--leader", default=None, type=int,
              help="Leading node index for plant augmentation.")
def cmd_synthesize(config_path, out, seed, target, mode, leader):
    """Design linear controllers (and leader input) for a target output."""

    def run():
        cfg = _load(config_path, seed)
        d = cfg.agents[0].io_dim
        n = cfg.graph.node_count
        if target is not None:
            try:
                y_star = np.asarray(json.loads(target), dtype=float).ravel()
            except (json.JSONDecodeError, ValueError) as ex:
                raise ConfigInvalid(f"--target: {ex}") from None
        elif cfg.objective is not None:
            y_star = np.asarray(cfg.objective.targets[0])
        else:
            raise ConfigInvalid("no --target given and no objective section")
        if y_star.size != n * d:
            raise ConfigInvalid(
                f"target must have length {n * d}, got {y_star.size}")
        problem = assemble(cfg.graph, cfg.agents, cfg.controllers)
        forci = check_forcible(problem, y_star)
        result = synthesize_linear(problem, y_star, mode=mode, leader=leader)
        agents_out = cfg.agents
        if leader is not None and result.leader_input is not None:
            agents_out = apply_leader(cfg.agents, leader, result.leader_input)
        uniq = check_uniqueness_conditions(
            assemble(cfg.graph, agents_out, result.controllers),
            result.y_target)
        patch = cfgmod.emit_config(cfg, agents=agents_out,
                                   controllers=result.controllers)
        patch.pop("objective", None)
        outdir = _outdir(out)
        _write_json(os.path.join(outdir, "patch.json"), patch)
        lines = [
            f"mode = {result.mode}",
            f"forcible = {forci.forcible} (residual {forci.residual:.3e})",
            f"steady-state equation holds = {forci.forcible or result.mode != 'absolute'}",
            f"edge potentials strictly convex = {uniq.outer_strict}",
            f"node potential sum strictly convex near target = {uniq.inner_strict}",
            f"stationarity residual = {uniq.stationarity_residual:.3e}",
            f"y_target = {_fmt_vec(result.y_target)}",
            f"xi = {_fmt_vec(result.xi)}",
        ]
        if result.leader_input is not None:
            lines.append(f"leader = {leader}, z = {_fmt_vec(result.leader_input)}")
        text = "\n".join(lines)
        with open(os.path.join(outdir, "synthesis_report.txt"), "w") as fh:
            fh.write(text + "\n")
        click.echo(text)

    return _guard(run)


def _classify_agent(agent, samples, seed):
    if agent.kind is AgentKind.LINEAR:
        res = is_meicmp_linear(agent.A, agent.B, agent.C, agent.T)
        return {"verdict": res.verdict, "reason": res.reason, "exact": True}
    if agent.kind is AgentKind.DAMPED_OSCILLATOR:
        res = is_meicmp_oscillator(agent.M, agent.B)
        return {"verdict": res.verdict, "reason": res.reason, "exact": True}
    rel = ss_relation(agent)
    cm = check_cm(rel, Sampler(seed=seed), cycles=samples)
    out = {"verdict": "yes" if cm.passed else "no",
           "reason": f"randomized cyclic-monotonicity check, "
                     f"{cm.cycles_checked} cycles", "exact": False}
    if not cm.passed:
        out["witness"] = [[u.tolist(), y.tolist()] for u, y in cm.witness]
        out["witness_sum"] = cm.witness_sum
    return out


def _classify_controller(ctrl):
    kind = ctrl.kind
    inner = ctrl
    while inner.kind is ControllerKind.RECONFIGURED:
        inner = inner.inner
    if inner.kind is ControllerKind.NONLINEAR_INTEGRATOR:
        return {"verdict": "yes",
                "reason": "integrator relation: domain {0}, any cycle sum is 0",
                "exact": True}
    if inner.kind is ControllerKind.LINEAR_SYNTHESIS:
        return {"verdict": "yes-strict",
                "reason": "affine relation with S = I (positive definite)",
                "exact": True}
    raise UnsupportedKind(f"cannot classify controller kind {kind.name}")


@cli.command("check-cm")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--samples", default=10_000, type=int,
              help="Cycles per randomized check.")
@click.option("--jobs", default=1, type=int,
              help="Parallel workers for independent randomized checks.")
def cmd_check_cm(config_path, out, seed, samples, jobs):
    """Classify every agent and controller for cyclic monotonicity."""

    def run():
        cfg = _load(config_path, seed)
        rng_seed = cfg.seed
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_classify_agent, a, samples, rng_seed + i)
                           for i, a in enumerate(cfg.agents)]
                agent_rows = [f.result() for f in futures]
        else:
            agent_rows = [_classify_agent(a, samples, rng_seed + i)
                          for i, a in enumerate(cfg.agents)]
        ctrl_rows = [_classify_controller(c) for c in cfg.controllers]
        outdir = _outdir(out)
        _write_json(os.path.join(outdir, "cm_report.json"),
                    {"agents": agent_rows, "controllers": ctrl_rows})
        for i, row in enumerate(agent_rows):
            note = f" ({row['reason']})" if row["reason"] else ""
            click.echo(f"agent {i}: {row['verdict']}{note}")
        for e, row in enumerate(ctrl_rows):
            note = f" ({row['reason']})" if row["reason"] else ""
            click.echo(f"controller {e}: {row['verdict']}{note}")

    return _guard(run)


@cli.command("verify")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--tol", default=1e-6, type=float)
def cmd_verify(config_path, out, seed, tol):
    """Check a candidate steady state recorded in the config."""

    def run():
        cfg = _load(config_path, seed)
        if cfg.candidate is None:
            raise ConfigInvalid("config has no 'candidate' section to verify")
        problem = assemble(cfg.graph, cfg.agents, cfg.controllers)
        cand = tuple(np.asarray(cfg.candidate[k], dtype=float)
                     for k in ("u", "y", "zeta", "mu"))
        report = verify_steady_state(problem, cand, tol=tol)
        try:
            gap = duality_gap(problem, cand[0], cand[3], cand[1], cand[2])
        except InfiniteValue:
            gap = float("inf")
        outdir = _outdir(out)
        _write_json(os.path.join(outdir, "verify.json"),
                    {"valid": report.valid, "residuals": report.residuals,
                     "duality_gap": gap})
        for key, val in report.residuals.items():
            click.echo(f"{key} = {val:.6e}")
        click.echo(f"duality_gap = {gap:.6e}")
        click.echo(f"valid = {report.valid}")
        if not report.valid:
            raise Infeasible("candidate fails steady-state verification")

    return _guard(run)


def main(argv=None) -> None:
    try:
        rc = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as ex:
        click.echo(f"usage error: {ex.format_message()}", err=True)
        sys.exit(EXIT_CONFIG)
    except click.ClickException as ex:
        ex.show()
        sys.exit(EXIT_CONFIG)
    except click.exceptions.Abort:
        sys.exit(EXIT_CONFIG)
    sys.exit(rc if isinstance(rc, int) else EXIT_OK)


if __name__ == "__main__":
    main()
