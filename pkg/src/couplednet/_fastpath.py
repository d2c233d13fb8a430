"""Packed closed-loop integration kernels.

Networks whose agents are affine ODEs (linear systems, oscillators or
convex-gradient systems with quadratic potentials) and whose edge
controllers are linear-synthesis or integrator types are packed into
flat arrays and integrated by a single kernel. The kernel source is
plain numpy; when numba is importable it is compiled with @njit, and
setting the environment variable COUPLEDNET_FORCE_NUMPY=1 selects the
uncompiled twin instead.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .couplers import ControllerKind, ControllerModel, paper_psi
from .plants import AgentKind, AgentModel
from .relations import FunctionKind, as_quadratic

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


def use_numba() -> bool:
    return HAS_NUMBA and os.environ.get("COUPLEDNET_FORCE_NUMPY", "") != "1"


# controller kind codes inside the kernel
_CTRL_LINEAR = 0
_CTRL_PSI = 1
_CTRL_QUAD = 2


_LOG2 = math.log(2.0)


def _packed_rhs(s, pk):
    (P, A, Bm, Cm, weff, E, ET, kinds, alpha, beta, off, Pq, qq, d) = pk
    xa = s[:P]
    eta = s[P:]
    y = Cm @ xa
    zeta = ET @ y
    m = kinds.shape[0]
    mu = np.empty(m * d)
    deta = np.empty(m * d)
    for e in range(m):
        b0 = e * d
        if kinds[e] == _CTRL_LINEAR:
            for c in range(d):
                i = b0 + c
                deta[i] = -eta[i] + (zeta[i] - alpha[i]) - off[i]
                mu[i] = eta[i] + beta[i]
        elif kinds[e] == _CTRL_PSI:
            for c in range(d):
                i = b0 + c
                deta[i] = zeta[i] - alpha[i]
                xv = eta[i]
                # log((exp(x)+1)/2) via log1p, stable on both tails
                if xv > 0.0:
                    ell = xv + math.log1p(math.exp(-xv)) - _LOG2
                else:
                    ell = math.log1p(math.exp(xv)) - _LOG2
                big = ell * ell
                if xv > 0.0:
                    mu[i] = math.asin(big / (big + 1.0)) + beta[i]
                elif xv < 0.0:
                    mu[i] = math.asin(-big / (big + 1.0)) + beta[i]
                else:
                    mu[i] = beta[i]
        else:
            for c in range(d):
                i = b0 + c
                deta[i] = zeta[i] - alpha[i]
                acc = qq[e, c]
                for c2 in range(d):
                    acc += Pq[e, c, c2] * eta[b0 + c2]
                mu[i] = acc + beta[i]
    u = -(E @ mu)
    out = np.empty(s.shape[0])
    out[:P] = A @ xa + Bm @ u + weff
    out[P:] = deta
    return out


# Dormand-Prince 5(4) tableau
_DP_C = (0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_DP_E = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


def _rk45_loop(rhs, pk, s0, t0, rec_times, rtol, atol, h0):
    """Adaptive integration recording the state at each rec_times entry.

    Returns (out, status): status 0 ok, 1 step underflow, 2 non-finite.
    """
    dim = s0.shape[0]
    nrec = rec_times.shape[0]
    out = np.empty((nrec, dim))
    s = s0.copy()
    t = t0
    idx = 0
    if nrec > 0 and abs(rec_times[0] - t0) <= 1e-12 * (1.0 + abs(t0)):
        out[0] = s
        idx = 1
    h = h0
    while idx < nrec:
        target = rec_times[idx]
        hit = False
        h_use = h
        if t + h_use >= target - 1e-14 * (1.0 + abs(target)):
            h_use = target - t
            hit = True
        if h_use < 1e-14 * (1.0 + abs(t)):
            # degenerate gap: record and move on
            out[idx] = s
            idx += 1
            t = target
            continue

        k1 = rhs(s, pk)
        k2 = rhs(s + h_use * (_DP_A[0][0] * k1), pk)
        k3 = rhs(s + h_use * (_DP_A[1][0] * k1 + _DP_A[1][1] * k2), pk)
        k4 = rhs(s + h_use * (_DP_A[2][0] * k1 + _DP_A[2][1] * k2 + _DP_A[2][2] * k3), pk)
        k5 = rhs(
            s
            + h_use
            * (_DP_A[3][0] * k1 + _DP_A[3][1] * k2 + _DP_A[3][2] * k3 + _DP_A[3][3] * k4),
            pk,
        )
        k6 = rhs(
            s
            + h_use
            * (
                _DP_A[4][0] * k1
                + _DP_A[4][1] * k2
                + _DP_A[4][2] * k3
                + _DP_A[4][3] * k4
                + _DP_A[4][4] * k5
            ),
            pk,
        )
        s5 = s + h_use * (
            _DP_A[5][0] * k1
            + _DP_A[5][2] * k3
            + _DP_A[5][3] * k4
            + _DP_A[5][4] * k5
            + _DP_A[5][5] * k6
        )
        k7 = rhs(s5, pk)
        errv = h_use * (
            _DP_E[0] * k1
            + _DP_E[2] * k3
            + _DP_E[3] * k4
            + _DP_E[4] * k5
            + _DP_E[5] * k6
            + _DP_E[6] * k7
        )
        errn = 0.0
        for j in range(dim):
            sc = atol + rtol * max(abs(s[j]), abs(s5[j]))
            q = errv[j] / sc
            errn += q * q
        errn = math.sqrt(errn / dim)
        if not math.isfinite(errn):
            return out, 2
        if errn <= 1.0:
            t = t + h_use
            s = s5
            if hit:
                out[idx] = s
                idx += 1
        if errn == 0.0:
            factor = 5.0
        else:
            factor = 0.9 * errn ** (-0.2)
            if factor < 0.2:
                factor = 0.2
            elif factor > 5.0:
                factor = 5.0
        h = h_use * factor
        if h < 1e-13 * (1.0 + abs(t)):
            return out, 1
    return out, 0


def _rk4_loop(rhs, pk, s0, t0, rec_times, dt):
    """Fixed-step classical Runge-Kutta, landing exactly on rec_times."""
    dim = s0.shape[0]
    nrec = rec_times.shape[0]
    out = np.empty((nrec, dim))
    s = s0.copy()
    t = t0
    idx = 0
    if nrec > 0 and abs(rec_times[0] - t0) <= 1e-12 * (1.0 + abs(t0)):
        out[0] = s
        idx = 1
    while idx < nrec:
        target = rec_times[idx]
        gap = target - t
        nsub = int(max(1.0, math.ceil(gap / dt - 1e-9)))
        h = gap / nsub
        for _ in range(nsub):
            k1 = rhs(s, pk)
            k2 = rhs(s + 0.5 * h * k1, pk)
            k3 = rhs(s + 0.5 * h * k2, pk)
            k4 = rhs(s + h * k3, pk)
            s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = target
        for j in range(dim):
            if not math.isfinite(s[j]):
                return out, 2
        out[idx] = s
        idx += 1
    return out, 0


if HAS_NUMBA:
    _packed_rhs_jit = njit(cache=False)(_packed_rhs)
    _rk45_loop_jit = njit(cache=False)(_rk45_loop)
    _rk4_loop_jit = njit(cache=False)(_rk4_loop)
else:  # pragma: no cover
    _packed_rhs_jit = _packed_rhs
    _rk45_loop_jit = _rk45_loop
    _rk4_loop_jit = _rk4_loop


# ---------------------------------------------------------------------------
# packing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedSystem:
    """Flat-array closed loop consumed by the kernels."""

    pk: tuple
    agent_dim: int
    ctrl_dim: int
    kinds: np.ndarray
    beta: np.ndarray
    Pq: np.ndarray
    qq: np.ndarray


def _pack_agent(agent: AgentModel):
    """(A, B, C, w) of the affine ODE, or None when not packable."""
    if agent.kind is AgentKind.LINEAR:
        if agent.T is not None and np.any(agent.T != 0.0):
            return None
        return agent.A, agent.B, agent.C, agent.w
    if agent.kind is AgentKind.DAMPED_OSCILLATOR:
        d = agent.io_dim
        damping = np.zeros((d, d))
        shift = np.zeros(d)
        if agent.psi is not None:
            quad = as_quadratic(agent.psi)
            if quad is None:
                return None
            damping, shift = quad[0], quad[1]
        A = np.block([[np.zeros((d, d)), agent.M], [-agent.M.T, -damping]])
        B = np.vstack([np.zeros((d, d)), agent.B])
        C = np.hstack([np.eye(d), np.zeros((d, d))])
        w = np.concatenate([np.zeros(d), agent.w - shift])
        return A, B, C, w
    if agent.kind is AgentKind.CONVEX_GRADIENT:
        if agent.rho is not None:
            return None
        quad = as_quadratic(agent.psi)
        if quad is None:
            return None
        P, q, _ = quad
        return agent.J - P, agent.B, agent.C, agent.w - q
    return None


def _pack_controller(ctrl: ControllerModel, d: int):
    """(kind, alpha, beta, offset, Pq, qq) or None when not packable."""
    alpha = np.zeros(d)
    beta = np.zeros(d)
    while ctrl.kind is ControllerKind.RECONFIGURED:
        alpha = alpha + ctrl.alpha
        beta = beta + ctrl.beta
        ctrl = ctrl.inner
    if ctrl.kind is ControllerKind.LINEAR_SYNTHESIS:
        return _CTRL_LINEAR, alpha, beta, ctrl.offset, np.zeros((d, d)), np.zeros(d)
    if ctrl.kind is ControllerKind.NONLINEAR_INTEGRATOR:
        pot = ctrl.potential
        if pot.kind is FunctionKind.SCALAR_SEPARABLE and pot.phi is paper_psi:
            return _CTRL_PSI, alpha, beta, np.zeros(d), np.zeros((d, d)), np.zeros(d)
        quad = as_quadratic(pot)
        if quad is not None:
            return _CTRL_QUAD, alpha, beta, np.zeros(d), quad[0], quad[1]
    return None


def try_pack(op_lifted: np.ndarray, agents, controllers) -> PackedSystem | None:
    """Pack the closed loop into kernel arrays; None if any piece resists."""
    agents = list(agents)
    controllers = list(controllers)
    d = agents[0].io_dim
    n = len(agents)
    m = len(controllers)
    parts = [_pack_agent(a) for a in agents]
    if any(p is None for p in parts):
        return None
    cparts = [_pack_controller(c, d) for c in controllers]
    if any(c is None for c in cparts):
        return None

    P = sum(a.state_dim for a in agents)
    A = np.zeros((P, P))
    Bm = np.zeros((P, n * d))
    Cm = np.zeros((n * d, P))
    w = np.zeros(P)
    z = np.zeros(n * d)
    ofs = 0
    for i, (agent, (Ai, Bi, Ci, wi)) in enumerate(zip(agents, parts)):
        p = agent.state_dim
        A[ofs : ofs + p, ofs : ofs + p] = Ai
        Bm[ofs : ofs + p, i * d : (i + 1) * d] = Bi
        Cm[i * d : (i + 1) * d, ofs : ofs + p] = Ci
        w[ofs : ofs + p] = wi
        z[i * d : (i + 1) * d] = agent.leader_offset
        ofs += p
    weff = w + Bm @ z

    kinds = np.empty(m, dtype=np.int64)
    alpha = np.zeros(m * d)
    beta = np.zeros(m * d)
    off = np.zeros(m * d)
    Pq = np.zeros((m, d, d))
    qq = np.zeros((m, d))
    for e, (kind, a_e, b_e, o_e, P_e, q_e) in enumerate(cparts):
        kinds[e] = kind
        alpha[e * d : (e + 1) * d] = a_e
        beta[e * d : (e + 1) * d] = b_e
        off[e * d : (e + 1) * d] = o_e
        Pq[e] = P_e
        qq[e] = q_e

    E = np.ascontiguousarray(op_lifted)
    pk = (P, A, Bm, Cm, weff, E, np.ascontiguousarray(E.T), kinds, alpha, beta, off, Pq, qq, d)
    return PackedSystem(pk=pk, agent_dim=P, ctrl_dim=m * d, kinds=kinds, beta=beta, Pq=Pq, qq=qq)


def packed_signals(packed: PackedSystem, states: np.ndarray):
    """(u, y, zeta, mu) arrays for recorded packed states (rows = samples)."""
    (P, A, Bm, Cm, weff, E, ET, kinds, alpha, beta, off, Pq, qq, d) = packed.pk
    xa = states[:, :P]
    eta = states[:, P:]
    y = xa @ Cm.T
    zeta = y @ ET.T
    mu = np.empty_like(eta)
    for e in range(kinds.shape[0]):
        sl = slice(e * d, (e + 1) * d)
        if kinds[e] == _CTRL_LINEAR:
            mu[:, sl] = eta[:, sl] + beta[sl]
        elif kinds[e] == _CTRL_PSI:
            mu[:, sl] = paper_psi(eta[:, sl]) + beta[sl]
        else:
            mu[:, sl] = eta[:, sl] @ Pq[e].T + qq[e] + beta[sl]
    u = -(mu @ E.T)
    return u, y, zeta, mu


def run_rk45(packed_or_rhs, s0, t0, rec_times, rtol, atol, h0, pk=None):
    """Dispatch to the compiled or plain kernel."""
    if isinstance(packed_or_rhs, PackedSystem):
        if use_numba():
            return _rk45_loop_jit(_packed_rhs_jit, packed_or_rhs.pk, s0, t0, rec_times, rtol, atol, h0)
        return _rk45_loop(_packed_rhs, packed_or_rhs.pk, s0, t0, rec_times, rtol, atol, h0)
    return _rk45_loop(packed_or_rhs, pk if pk is not None else (), s0, t0, rec_times, rtol, atol, h0)


def run_rk4(packed_or_rhs, s0, t0, rec_times, dt, pk=None):
    if isinstance(packed_or_rhs, PackedSystem):
        if use_numba():
            return _rk4_loop_jit(_packed_rhs_jit, packed_or_rhs.pk, s0, t0, rec_times, dt)
        return _rk4_loop(_packed_rhs, packed_or_rhs.pk, s0, t0, rec_times, dt)
    return _rk4_loop(packed_or_rhs, pk if pk is not None else (), s0, t0, rec_times, dt)
