"""Edge controller dynamics and their steady-state relations.

Controllers live on edges of the coupling graph, take the relative
output zeta_e as input, and emit the coupling signal mu_e. Three
concrete kinds cover the constructions used by the solvers, plus a
Custom kind for raw callbacks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, UnsupportedKind
from .relations import (
    FunctionKind,
    IntegralFunction,
    VectorRelation,
    affine_relation,
    grad_of,
    indicator_zero,
    integrator_relation,
    quadratic,
    shifted,
    shifted_relation,
)


class ControllerKind(Enum):
    NONLINEAR_INTEGRATOR = "nonlinear_integrator"
    LINEAR_SYNTHESIS = "linear_synthesis"
    RECONFIGURED = "reconfigured"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ControllerModel:
    """A single edge controller.

    Kinds
    -----
    NonlinearIntegrator
        d eta/dt = zeta, mu = grad potential(eta). The potential is a
        declared convex IntegralFunction; the saturating case is a
        scalar-separable potential whose derivative is a bounded
        monotone scalar map applied coordinatewise.
    LinearSynthesis
        d eta/dt = -eta + zeta - offset, mu = eta. The offset is the
        vector xi_e + zeta*_e produced by the synthesis procedure.
    Reconfigured
        wrapper around an inner controller: d eta/dt =
        phi(eta, zeta - alpha), mu = psi(eta, zeta - alpha) + beta.
    Custom
        raw callbacks phi(eta, zeta), out(eta, zeta).
    """

    io_dim: int
    kind: ControllerKind
    potential: Optional[IntegralFunction] = None
    offset: Optional[np.ndarray] = None
    inner: Optional["ControllerModel"] = None
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    phi: Optional[Callable] = None
    out: Optional[Callable] = None
    state_dim: int = 0
    initial_state: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _vec(v, size, what) -> np.ndarray:
    if v is None:
        return np.zeros(size)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise DimensionMismatch(f"{what} must have length {size}, got {v.size}")
    return v


def nonlinear_integrator(potential: IntegralFunction, initial_state=None) -> ControllerModel:
    d = potential.dim
    return ControllerModel(
        io_dim=d,
        kind=ControllerKind.NONLINEAR_INTEGRATOR,
        potential=potential,
        state_dim=d,
        initial_state=_vec(initial_state, d, "initial_state"),
    )


def linear_synthesis(offset, initial_state=None) -> ControllerModel:
    offset = np.asarray(offset, dtype=float).ravel()
    d = offset.size
    return ControllerModel(
        io_dim=d,
        kind=ControllerKind.LINEAR_SYNTHESIS,
        offset=offset,
        state_dim=d,
        initial_state=_vec(initial_state, d, "initial_state"),
    )


def reconfigured(inner: ControllerModel, alpha, beta) -> ControllerModel:
    d = inner.io_dim
    return ControllerModel(
        io_dim=d,
        kind=ControllerKind.RECONFIGURED,
        inner=inner,
        alpha=_vec(alpha, d, "alpha"),
        beta=_vec(beta, d, "beta"),
        state_dim=inner.state_dim,
        initial_state=inner.initial_state,
    )


def custom_controller(io_dim, state_dim, phi, out, initial_state=None) -> ControllerModel:
    return ControllerModel(
        io_dim=io_dim,
        kind=ControllerKind.CUSTOM,
        phi=phi,
        out=out,
        state_dim=state_dim,
        initial_state=_vec(initial_state, state_dim, "initial_state"),
    )


def controller_rhs(c: ControllerModel, eta, zeta) -> np.ndarray:
    """Controller state derivative at state eta and edge input zeta."""
    eta = _vec(eta, c.state_dim, "eta")
    zeta = _vec(zeta, c.io_dim, "zeta")
    if c.kind is ControllerKind.NONLINEAR_INTEGRATOR:
        return zeta.copy()
    if c.kind is ControllerKind.LINEAR_SYNTHESIS:
        return -eta + zeta - c.offset
    if c.kind is ControllerKind.RECONFIGURED:
        return controller_rhs(c.inner, eta, zeta - c.alpha)
    if c.kind is ControllerKind.CUSTOM:
        return np.asarray(c.phi(eta, zeta), dtype=float).ravel()
    raise UnsupportedKind(str(c.kind))


def controller_output(c: ControllerModel, eta, zeta) -> np.ndarray:
    """Coupling signal mu at state eta and edge input zeta."""
    eta = _vec(eta, c.state_dim, "eta")
    zeta = _vec(zeta, c.io_dim, "zeta")
    if c.kind is ControllerKind.NONLINEAR_INTEGRATOR:
        return grad_of(c.potential, eta)
    if c.kind is ControllerKind.LINEAR_SYNTHESIS:
        return eta.copy()
    if c.kind is ControllerKind.RECONFIGURED:
        return controller_output(c.inner, eta, zeta - c.alpha) + c.beta
    if c.kind is ControllerKind.CUSTOM:
        return np.asarray(c.out(eta, zeta), dtype=float).ravel()
    raise UnsupportedKind(str(c.kind))


def _potential_output_interval(potential: IntegralFunction) -> tuple[float, float]:
    """Coordinatewise closure of the range of grad potential, when known."""
    if potential.kind is FunctionKind.SCALAR_SEPARABLE and potential.phi_range is not None:
        return potential.phi_range
    return (-math.inf, math.inf)


def controller_ss_relation(c: ControllerModel) -> VectorRelation:
    """Steady-state relation zeta -> mu of a controller.

    NonlinearIntegrator: steady state forces zeta = 0 with mu anywhere
    in the closure of the range of grad potential. LinearSynthesis:
    mu = zeta - offset. Reconfigured: the inner relation with input
    shifted by alpha and output by beta.
    """
    if c.kind is ControllerKind.NONLINEAR_INTEGRATOR:
        lo, hi = _potential_output_interval(c.potential)
        return integrator_relation(c.io_dim, lo, hi)
    if c.kind is ControllerKind.LINEAR_SYNTHESIS:
        return affine_relation(np.eye(c.io_dim), -c.offset)
    if c.kind is ControllerKind.RECONFIGURED:
        return shifted_relation(
            controller_ss_relation(c.inner), input_offset=c.alpha, output_offset=c.beta
        )
    raise UnsupportedKind("custom controllers carry no derived relation")


def controller_integral_fn(c: ControllerModel) -> IntegralFunction:
    """The convex integral function whose subdifferential extends the relation."""
    if c.kind is ControllerKind.NONLINEAR_INTEGRATOR:
        return indicator_zero(c.io_dim)
    if c.kind is ControllerKind.LINEAR_SYNTHESIS:
        return quadratic(np.eye(c.io_dim), -c.offset)
    if c.kind is ControllerKind.RECONFIGURED:
        return shifted(controller_integral_fn(c.inner), shift=c.alpha, linear=c.beta)
    raise UnsupportedKind("custom controllers carry no derived integral function")


def controller_has_feedthrough(c: ControllerModel) -> bool:
    if c.kind is ControllerKind.RECONFIGURED:
        return controller_has_feedthrough(c.inner)
    return c.kind is ControllerKind.CUSTOM


# ---------------------------------------------------------------------------
# the nonlinearity used by the formation example
# ---------------------------------------------------------------------------


def paper_psi(x):
    """Monotone saturating scalar map arcsin(L(x) sgn(x) / (L(x) + 1)).

    Here L(x) = log((exp(x) + 1) / 2) squared, evaluated through
    logaddexp so large arguments do not overflow. The map is zero at
    zero, strictly increasing, and its range is the open interval
    (PSI_RANGE[0], PSI_RANGE[1]). Arrays are handled coordinatewise.
    """
    x = np.asarray(x, dtype=float)
    ell = np.logaddexp(x, 0.0) - math.log(2.0)
    big_l = ell * ell
    val = np.arcsin(big_l * np.sign(x) / (big_l + 1.0))
    return float(val) if val.ndim == 0 else val


_L_LIMIT = math.log(2.0) ** 2
PSI_RANGE = (-math.asin(_L_LIMIT / (_L_LIMIT + 1.0)), math.pi / 2.0)
