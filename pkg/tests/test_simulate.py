import math

import numpy as np
import pytest

from couplednet.couplers import (PSI_RANGE, custom_controller,
                                 linear_synthesis, nonlinear_integrator,
                                 paper_psi)
from couplednet.errors import (AlgebraicLoop, DimensionMismatch,
                               NoConvergence, NonFiniteState)
from couplednet.netgraph import build_graph
from couplednet.netopt import assemble, recover_certificate, solve_opp
from couplednet.plants import (custom_agent, damped_oscillator_agent,
                               linear_agent, convex_gradient_agent)
from couplednet.relations import quadratic, scalar_separable
from couplednet.simulate import (IntegrateOptions, closed_loop,
                                 compare_prediction, default_initial_state,
                                 detect_convergence, export_csv, integrate,
                                 integrate_schedule, run_summary, step_rhs,
                                 storage_candidate)


def solo(agent):
    """One agent, no edges."""
    return closed_loop(build_graph(1, []), [agent], [])


def pair_system(offset=1.0):
    g = build_graph(2, [(0, 1)])
    agents = [linear_agent([[-1.0]], [[1.0]], [[1.0]]),
              linear_agent([[-2.0]], [[1.0]], [[1.0]], w=[6.0])]
    ctrls = [linear_synthesis([offset])]
    return g, agents, ctrls, closed_loop(g, agents, ctrls)


def test_closed_loop_shapes():
    _, _, _, system = pair_system()
    assert system.state_dim == 3
    assert system.agent_dim == 2 and system.ctrl_dim == 1
    assert system.io_dim == 1


def test_closed_loop_broadcasts_single_controller():
    g = build_graph(3, [(0, 1), (1, 2)])
    agents = [linear_agent([[-1.0]], [[1.0]], [[1.0]]) for _ in range(3)]
    system = closed_loop(g, agents, linear_synthesis([0.0]))
    assert len(system.controllers) == 2


def test_closed_loop_count_mismatch():
    g = build_graph(2, [(0, 1)])
    agents = [linear_agent([[-1.0]], [[1.0]], [[1.0]])]
    with pytest.raises(DimensionMismatch):
        closed_loop(g, agents, [linear_synthesis([0.0])])


def test_algebraic_loop_detected():
    g = build_graph(2, [(0, 1)])
    ft_agent = linear_agent([[-1.0]], [[1.0]], [[1.0]], T=[[1.0]])
    agents = [ft_agent, linear_agent([[-1.0]], [[1.0]], [[1.0]])]
    ft_ctrl = custom_controller(1, 1, phi=lambda e, z: -e,
                                out=lambda e, z: e + z)
    with pytest.raises(AlgebraicLoop):
        closed_loop(g, agents, [ft_ctrl])


def test_exponential_decay_accuracy():
    system = solo(linear_agent([[-1.0]], [[1.0]], [[1.0]]))
    traj = integrate(system, [1.0], 1.0, IntegrateOptions(tol=1e-10))
    assert traj.times[-1] == 1.0
    assert traj.y[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_rk4_order_factor():
    system = solo(linear_agent([[-1.0]], [[1.0]], [[1.0]]))
    errs = []
    for dt in (0.1, 0.05):
        opts = IntegrateOptions(method="rk4", dt=dt, record_every=1.0)
        traj = integrate(system, [1.0], 1.0, opts)
        errs.append(abs(traj.y[-1, 0] - math.exp(-1.0)))
    factor = errs[0] / errs[1]
    assert 12.0 <= factor <= 20.0


def test_wiring_identities_exact():
    _, _, _, system = pair_system()
    traj = integrate(system, default_initial_state(system), 5.0,
                     IntegrateOptions())
    E = system.op.lifted
    assert np.array_equal(traj.zeta, traj.y @ E)
    assert np.array_equal(traj.u, -(traj.mu @ E.T))


def test_integrate_rejects_bad_horizon():
    _, _, _, system = pair_system()
    with pytest.raises(DimensionMismatch):
        integrate(system, default_initial_state(system), 0.0)


def test_default_initial_state_uses_controller_state():
    g = build_graph(2, [(0, 1)])
    agents = [linear_agent([[-1.0]], [[1.0]], [[1.0]]) for _ in range(2)]
    ctrls = [nonlinear_integrator(quadratic(np.eye(1)), initial_state=[0.7])]
    system = closed_loop(g, agents, ctrls)
    assert np.allclose(default_initial_state(system), [0.0, 0.0, 0.7])


def test_detect_convergence_and_steady_values():
    _, _, _, system = pair_system()
    traj = integrate(system, default_initial_state(system), 40.0,
                     IntegrateOptions())
    conv = detect_convergence(traj)
    assert conv.converged and bool(conv)
    assert np.allclose(conv.y_ss, [0.8, 2.6], atol=1e-6)
    assert np.allclose(conv.mu_ss, [0.8], atol=1e-6)
    assert 0.0 < conv.t_conv < 40.0


def test_detect_convergence_rejects_transient():
    _, _, _, system = pair_system()
    traj = integrate(system, default_initial_state(system), 0.5,
                     IntegrateOptions())
    conv = detect_convergence(traj, tol=1e-9)
    assert not conv.converged


def test_compare_prediction_matches_optimizer():
    g, agents, ctrls, system = pair_system()
    prob = assemble(g, agents, ctrls)
    y, zeta, _ = solve_opp(prob)
    cert = recover_certificate(prob, y, zeta)
    traj = integrate(system, default_initial_state(system), 40.0,
                     IntegrateOptions())
    rep = compare_prediction(traj, cert)
    assert rep.passed
    assert rep.y_error_aligned <= 1e-5
    assert rep.mu_error_aligned <= 1e-5


def test_compare_prediction_needs_convergence():
    _, _, _, system = pair_system()
    g, agents, ctrls, _ = pair_system()
    prob = assemble(g, agents, ctrls)
    y, zeta, _ = solve_opp(prob)
    cert = recover_certificate(prob, y, zeta)
    traj = integrate(system, default_initial_state(system), 0.5,
                     IntegrateOptions())
    with pytest.raises(NoConvergence):
        compare_prediction(traj, cert, conv_tol=1e-10)


def test_integrate_schedule_concatenates():
    _, _, _, system = pair_system()
    _, _, _, system2 = pair_system(offset=2.0)
    traj = integrate_schedule([(system, 5.0), (system2, 5.0)],
                              default_initial_state(system),
                              IntegrateOptions())
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(10.0)
    assert (np.diff(traj.times) > 0).all()
    assert traj.metadata["segments"] == [(0.0, 5.0), (5.0, 10.0)]


def test_finite_time_blowup_aborts():
    from couplednet.errors import StepUnderflow
    blower = custom_agent(1, 1, f=lambda x, u, w: x * x, h=lambda x, u, w: x)
    system = closed_loop(build_graph(1, []), [blower], [])
    with pytest.raises((NonFiniteState, StepUnderflow)):
        integrate(system, [1.0], 10.0, IntegrateOptions())


def test_nonfinite_rhs_raises():
    bad = custom_agent(1, 1, f=lambda x, u, w: x * np.nan, h=lambda x, u, w: x)
    system = closed_loop(build_graph(1, []), [bad], [])
    with pytest.raises(NonFiniteState):
        integrate(system, [1.0], 1.0, IntegrateOptions(method="rk4", dt=0.1))


def test_storage_candidate_nonincreasing_linear():
    g = build_graph(2, [(0, 1)])
    agents = [linear_agent([[-1.0]], [[1.0]], [[1.0]]),
              linear_agent([[-1.0]], [[1.0]], [[1.0]], w=[0.3])]
    ctrls = [nonlinear_integrator(scalar_separable(paper_psi, 1, PSI_RANGE))]
    prob = assemble(g, agents, ctrls)
    y, zeta, _ = solve_opp(prob)
    cert = recover_certificate(prob, y, zeta)
    system = closed_loop(g, agents, ctrls)
    V = storage_candidate(system, cert)
    traj = integrate(system, default_initial_state(system), 20.0,
                     IntegrateOptions(tol=1e-10))
    vals = np.array([V(s) for s in traj.states])
    assert (np.diff(vals) <= 1e-8).all()
    assert vals[-1] < 1e-6 * vals[0]


def test_storage_candidate_decreasing_oscillator_constant_input():
    M = np.array([[2.0, 0.0], [0.0, 1.0]])
    agent = damped_oscillator_agent(M, np.eye(2), psi=quadratic(3.0 * np.eye(2)),
                                    anchor=[0.1, 0.0])
    system = closed_loop(build_graph(1, []), [agent], [])

    class Cert:
        u = np.zeros(2)
        mu = np.zeros(0)

    V = storage_candidate(system, Cert())
    traj = integrate(system, [1.0, -0.5, 0.3, 0.2], 20.0,
                     IntegrateOptions(tol=1e-10))
    vals = np.array([V(s) for s in traj.states])
    assert (np.diff(vals) <= 1e-8).all()
    assert vals[-1] < 1e-6 * vals[0]


def test_storage_candidate_oscillator_closed_loop_decays():
    g = build_graph(2, [(0, 1)])
    M = np.array([[2.0, 0.0], [0.0, 1.0]])
    agents = [damped_oscillator_agent(M, np.eye(2), psi=quadratic(3.0 * np.eye(2)),
                                      anchor=[0.1, 0.0]),
              damped_oscillator_agent(M, np.eye(2), psi=quadratic(3.0 * np.eye(2)),
                                      anchor=[-0.1, 0.0])]
    pot = scalar_separable(paper_psi, 2, PSI_RANGE)
    ctrls = [nonlinear_integrator(pot)]
    prob = assemble(g, agents, ctrls)
    y, zeta, _ = solve_opp(prob)
    cert = recover_certificate(prob, y, zeta)
    system = closed_loop(g, agents, ctrls)
    V = storage_candidate(system, cert)
    traj = integrate(system, default_initial_state(system), 20.0,
                     IntegrateOptions(tol=1e-10))
    vals = np.array([V(s) for s in traj.states])
    # position output is not passive above the eigenfrequencies, so the
    # sum may rise during the transient; only eventual decay holds
    half = len(vals) // 2
    assert (np.diff(vals[half:]) <= 1e-6).all()
    assert vals[-1] < 1e-2 * vals[0]


def test_storage_candidate_nonincreasing_convex_gradient():
    from couplednet.relations import function_sum
    sep = scalar_separable(lambda t: t ** 3, 2)
    psi = function_sum([quadratic(np.eye(2)), sep])
    agent = convex_gradient_agent(psi, J=np.array([[0.0, 1.0], [-1.0, 0.0]]))
    system = closed_loop(build_graph(1, []), [agent], [])
    from couplednet.plants import solve_equilibrium
    eq = solve_equilibrium(agent, np.zeros(2))

    class Cert:
        u = np.zeros(2)
        mu = np.zeros(0)

    V = storage_candidate(system, Cert())
    traj = integrate(system, [1.5, -0.5], 20.0, IntegrateOptions(tol=1e-10))
    vals = np.array([V(s) for s in traj.states])
    assert (np.diff(vals) <= 1e-6).all()
    assert np.allclose(traj.states[-1], eq.x0, atol=1e-6)


def test_step_rhs_vanishes_at_steady_state():
    g, agents, ctrls, system = pair_system()
    traj = integrate(system, default_initial_state(system), 60.0,
                     IntegrateOptions(tol=1e-10))
    assert np.abs(step_rhs(system, traj.states[-1])).max() <= 1e-7


def test_export_csv_format(tmp_path):
    _, _, _, system = pair_system()
    traj = integrate(system, default_initial_state(system), 1.0,
                     IntegrateOptions())
    path = tmp_path / "traj.csv"
    export_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,y[0.0],y[1.0],u[0.0],u[1.0],zeta[0.0],mu[0.0]"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(traj.times), 7)
    assert np.allclose(data[:, 0], traj.times)
    assert np.allclose(data[:, 1:3], traj.y)


def test_run_summary_mentions_convergence():
    _, _, _, system = pair_system()
    traj = integrate(system, default_initial_state(system), 40.0,
                     IntegrateOptions())
    text = run_summary(traj)
    assert "converged = True" in text
    assert "y_ss" in text


def test_metadata_records_fast_path_and_samples():
    _, _, _, system = pair_system()
    traj = integrate(system, default_initial_state(system), 1.0,
                     IntegrateOptions())
    assert traj.metadata["method"] == "rk45"
    assert "fast_path" in traj.metadata
    assert len(traj.times) == 501
