import dataclasses

import numpy as np
import pytest

from couplednet import _fastpath
from couplednet.couplers import (PSI_RANGE, custom_controller,
                                 linear_synthesis, nonlinear_integrator,
                                 paper_psi, reconfigured)
from couplednet.netgraph import build_graph
from couplednet.plants import (convex_gradient_agent, custom_agent,
                               damped_oscillator_agent, linear_agent)
from couplednet.relations import quadratic, scalar_separable
from couplednet.simulate import (IntegrateOptions, closed_loop,
                                 default_initial_state, integrate)

needs_numba = pytest.mark.skipif(not _fastpath.HAS_NUMBA,
                                 reason="numba not installed")


def mixed_system():
    """One agent and one controller of every packable kind."""
    g = build_graph(3, [(0, 1), (1, 2), (0, 2)])
    M = np.array([[1.5, 0.3], [-0.2, 1.0]])
    agents = [
        damped_oscillator_agent(M, np.eye(2), psi=quadratic(2.0 * np.eye(2)),
                                anchor=[0.5, -0.2]),
        linear_agent(-2.0 * np.eye(2), np.eye(2), np.eye(2), w=[0.3, 0.1]),
        convex_gradient_agent(quadratic(np.eye(2), [0.2, -0.1])),
    ]
    ctrls = [
        nonlinear_integrator(scalar_separable(paper_psi, 2, PSI_RANGE)),
        reconfigured(linear_synthesis([0.1, -0.3]), [0.2, 0.0], [-0.1, 0.05]),
        nonlinear_integrator(quadratic(0.5 * np.eye(2), [0.05, 0.0])),
    ]
    return closed_loop(g, agents, ctrls)


def test_mixed_system_packs():
    assert mixed_system().packed is not None


@needs_numba
def test_rk45_numba_numpy_twins_agree(monkeypatch):
    system = mixed_system()
    s0 = default_initial_state(system)
    monkeypatch.delenv("COUPLEDNET_FORCE_NUMPY", raising=False)
    jit = integrate(system, s0, 5.0, IntegrateOptions(tol=1e-8))
    assert jit.metadata["fast_path"] is True
    monkeypatch.setenv("COUPLEDNET_FORCE_NUMPY", "1")
    plain = integrate(system, s0, 5.0, IntegrateOptions(tol=1e-8))
    assert plain.metadata["fast_path"] is False
    assert np.array_equal(jit.states, plain.states)
    assert np.array_equal(jit.y, plain.y)
    assert np.array_equal(jit.mu, plain.mu)


@needs_numba
def test_rk4_numba_numpy_twins_agree(monkeypatch):
    system = mixed_system()
    s0 = default_initial_state(system)
    opts = IntegrateOptions(method="rk4", dt=0.01, record_every=0.5)
    monkeypatch.delenv("COUPLEDNET_FORCE_NUMPY", raising=False)
    jit = integrate(system, s0, 3.0, opts)
    monkeypatch.setenv("COUPLEDNET_FORCE_NUMPY", "1")
    plain = integrate(system, s0, 3.0, opts)
    assert np.array_equal(jit.states, plain.states)


def test_packed_matches_generic_path(monkeypatch):
    monkeypatch.setenv("COUPLEDNET_FORCE_NUMPY", "1")
    system = mixed_system()
    generic = dataclasses.replace(system, packed=None)
    s0 = default_initial_state(system)
    fast = integrate(system, s0, 5.0, IntegrateOptions(tol=1e-10))
    slow = integrate(generic, s0, 5.0, IntegrateOptions(tol=1e-10))
    assert np.allclose(fast.states, slow.states, atol=1e-6)
    assert np.allclose(fast.u, slow.u, atol=1e-6)
    assert np.allclose(fast.zeta, slow.zeta, atol=1e-6)
    assert np.allclose(fast.mu, slow.mu, atol=1e-6)


def test_packed_matches_generic_rk4(monkeypatch):
    monkeypatch.setenv("COUPLEDNET_FORCE_NUMPY", "1")
    system = mixed_system()
    generic = dataclasses.replace(system, packed=None)
    s0 = default_initial_state(system)
    opts = IntegrateOptions(method="rk4", dt=0.02, record_every=0.5)
    fast = integrate(system, s0, 3.0, opts)
    slow = integrate(generic, s0, 3.0, opts)
    assert np.allclose(fast.states, slow.states, atol=1e-8)


def two_node(agent0, agent1=None, ctrl=None):
    g = build_graph(2, [(0, 1)])
    agent1 = agent1 if agent1 is not None else linear_agent([[-1.0]], [[1.0]],
                                                            [[1.0]])
    ctrl = ctrl if ctrl is not None else linear_synthesis([0.0])
    return closed_loop(g, [agent0, agent1], [ctrl])


def test_pack_refuses_custom_agent():
    a = custom_agent(1, 1, f=lambda x, u, w: -x + u, h=lambda x, u, w: x)
    assert two_node(a).packed is None


def test_pack_refuses_agent_feedthrough():
    a = linear_agent([[-1.0]], [[1.0]], [[1.0]], T=[[0.5]])
    assert two_node(a).packed is None


def test_pack_refuses_nonquadratic_damping():
    a = damped_oscillator_agent([[1.0]], [[1.0]],
                                psi=scalar_separable(lambda t: t ** 4, 1))
    assert two_node(a).packed is None


def test_pack_refuses_rho_output():
    a = convex_gradient_agent(quadratic(np.eye(1)), rho=[[0.1]])
    assert two_node(a).packed is None


def test_pack_refuses_custom_controller():
    c = custom_controller(1, 1, phi=lambda e, z: e, out=lambda e, z: z)
    system = two_node(linear_agent([[-1.0]], [[1.0]], [[1.0]]), ctrl=c)
    assert system.packed is None


def test_pack_refuses_nonquadratic_potential():
    c = nonlinear_integrator(scalar_separable(lambda t: t ** 4, 1))
    system = two_node(linear_agent([[-1.0]], [[1.0]], [[1.0]]), ctrl=c)
    assert system.packed is None


def test_no_edges_not_packed():
    a = linear_agent([[-1.0]], [[1.0]], [[1.0]])
    assert closed_loop(build_graph(1, []), [a], []).packed is None


def test_generic_fallback_still_integrates(monkeypatch):
    a0 = custom_agent(1, 1, f=lambda x, u, w: -x + u, h=lambda x, u, w: x)
    system = two_node(a0)
    traj = integrate(system, default_initial_state(system), 2.0,
                     IntegrateOptions(tol=1e-8))
    assert traj.metadata["fast_path"] is False
    assert np.isfinite(traj.states).all()


def test_use_numba_flag(monkeypatch):
    monkeypatch.setenv("COUPLEDNET_FORCE_NUMPY", "1")
    assert _fastpath.use_numba() is False
    monkeypatch.delenv("COUPLEDNET_FORCE_NUMPY")
    assert _fastpath.use_numba() is _fastpath.HAS_NUMBA
