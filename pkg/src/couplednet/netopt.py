"""The dual network optimization pair and steady-state certificates.

A NetworkProblem bundles the incidence operator, the stacked node and
edge relations, and the four integral functions K, K*, Gamma, Gamma*.
Steady states of the closed loop are exactly the points where the
potential problem

    minimize K*(y) + Gamma(E' y)

and the flow problem

    minimize K(-E mu) + Gamma*(mu)

are simultaneously optimal; the solvers here return such points along
with verifiable certificates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .couplers import ControllerModel, controller_integral_fn, controller_ss_relation
from .errors import (
    DimensionMismatch,
    EmptySelection,
    Infeasible,
    InfiniteValue,
    NoConvergence,
    Unbounded,
    UnsupportedKind,
)
from .netgraph import DirectedGraph, IncidenceOperator, incidence
from .plants import AgentModel, ss_relation
from .relations import (
    IntegralFunction,
    RelationKind,
    VectorRelation,
    as_quadratic,
    conjugate_function,
    forward,
    grad_of,
    indicator_offsets,
    inverse,
    pair_residual,
    prox,
    quadratic,
    stacked,
    stacked_relation,
    value,
)

# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkProblem:
    """Assembled network optimization data.

    Attributes
    ----------
    op : IncidenceOperator
        Lifted incidence E = E_base (x) I_d.
    node_relations, edge_relations : tuple of VectorRelation
        Per-node steady-state relations k_i and per-edge relations
        gamma_e.
    node_relation, edge_relation : VectorRelation
        The same, stacked block-wise.
    K, Kstar, Gamma, Gammastar : IntegralFunction
        Node and edge integral functions and their conjugates, summed
        (stacked block-separably) over nodes and edges.
    """

    op: IncidenceOperator
    node_relations: tuple
    edge_relations: tuple
    node_relation: VectorRelation
    edge_relation: VectorRelation
    K: IntegralFunction
    Kstar: IntegralFunction
    Gamma: IntegralFunction
    Gammastar: IntegralFunction

    @property
    def node_size(self) -> int:
        return self.op.node_size

    @property
    def edge_size(self) -> int:
        return self.op.edge_size


def _node_integral_fn(rel: VectorRelation) -> IntegralFunction:
    """K_i with grad K_i = k_i, for affine k_i with symmetric PSD gain."""
    if rel.kind is not RelationKind.AFFINE:
        raise UnsupportedKind(
            "node integral functions need an affine steady-state relation"
        )
    S, v = rel.S, rel.v
    if np.linalg.norm(S - S.T) > 1e-8 * (1.0 + np.linalg.norm(S)):
        raise UnsupportedKind("steady-state gain must be symmetric to integrate")
    return quadratic(0.5 * (S + S.T), v)


def assemble(graph: DirectedGraph, agents, controllers) -> NetworkProblem:
    """Build the NetworkProblem for given agents and edge controllers.

    controllers may be a list with one entry per edge or a single
    ControllerModel broadcast to every edge.
    """
    agents = list(agents)
    if len(agents) != graph.node_count:
        raise DimensionMismatch("one agent per node required")
    d = agents[0].io_dim
    if any(a.io_dim != d for a in agents):
        raise DimensionMismatch("all agents must share io_dim")
    if isinstance(controllers, ControllerModel):
        controllers = [controllers] * graph.edge_count
    controllers = list(controllers)
    if len(controllers) != graph.edge_count:
        raise DimensionMismatch("one controller per edge required")
    if any(c.io_dim != d for c in controllers):
        raise DimensionMismatch("controllers must share the agents' io_dim")

    op = incidence(graph, d)
    node_rels = tuple(ss_relation(a) for a in agents)
    edge_rels = tuple(controller_ss_relation(c) for c in controllers)
    K = stacked([_node_integral_fn(r) for r in node_rels])
    Kstar = conjugate_function(K)
    Gamma = stacked([controller_integral_fn(c) for c in controllers])
    Gammastar = conjugate_function(Gamma)
    return NetworkProblem(
        op=op,
        node_relations=node_rels,
        edge_relations=edge_rels,
        node_relation=stacked_relation(node_rels),
        edge_relation=stacked_relation(edge_rels),
        K=K,
        Kstar=Kstar,
        Gamma=Gamma,
        Gammastar=Gammastar,
    )


def problem_from_relations(op: IncidenceOperator, node_rels, edge_fns) -> NetworkProblem:
    """Assemble directly from node relations and edge integral functions."""
    node_rels = tuple(node_rels)
    edge_fns = list(edge_fns)
    K = stacked([_node_integral_fn(r) for r in node_rels])
    Gamma = stacked(edge_fns)
    from .relations import gradient_relation

    edge_rels = tuple(gradient_relation(f) for f in edge_fns)
    return NetworkProblem(
        op=op,
        node_relations=node_rels,
        edge_relations=edge_rels,
        node_relation=stacked_relation(node_rels),
        edge_relation=stacked_relation(edge_rels),
        K=K,
        Kstar=conjugate_function(K),
        Gamma=Gamma,
        Gammastar=conjugate_function(Gamma),
    )


# ---------------------------------------------------------------------------
# objectives and residuals
# ---------------------------------------------------------------------------


def opp_objective(problem: NetworkProblem, y) -> float:
    y = np.asarray(y, dtype=float).ravel()
    return value(problem.Kstar, y) + value(problem.Gamma, problem.op.lifted.T @ y)


def ofp_objective(problem: NetworkProblem, mu) -> float:
    mu = np.asarray(mu, dtype=float).ravel()
    return value(problem.K, -problem.op.lifted @ mu) + value(problem.Gammastar, mu)


def inclusion_residual(problem: NetworkProblem, y) -> float:
    """Distance of 0 to the set k^-1(y) + E gamma(E' y)."""
    y = np.asarray(y, dtype=float).ravel()
    du = inverse(problem.node_relation, y)
    dmu = forward(problem.edge_relation, problem.op.lifted.T @ y)
    if du.is_empty or dmu.is_empty:
        return math.inf
    return du.minkowski(dmu.linear_image(problem.op.lifted)).distance(np.zeros(problem.node_size))


def flow_residual(problem: NetworkProblem, mu) -> float:
    """Distance of 0 to the set gamma^-1(mu) - E' k(-E mu)."""
    mu = np.asarray(mu, dtype=float).ravel()
    E = problem.op.lifted
    dzeta = inverse(problem.edge_relation, mu)
    dy = forward(problem.node_relation, -E @ mu)
    if dzeta.is_empty or dy.is_empty:
        return math.inf
    neg = dy.linear_image(-E.T)
    return dzeta.minkowski(neg).distance(np.zeros(problem.edge_size))


def duality_gap(problem: NetworkProblem, u, mu, y, zeta) -> float:
    """K(u) + Gamma*(mu) + K*(y) + Gamma(zeta); zero at dual optimal pairs."""
    terms = (
        value(problem.K, u),
        value(problem.Gammastar, mu),
        value(problem.Kstar, y),
        value(problem.Gamma, zeta),
    )
    if not all(map(math.isfinite, terms)):
        raise InfiniteValue("a point lies outside an effective domain")
    return float(sum(terms))


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


@dataclass
class SolveOptions:
    step: Optional[float] = None
    max_iter: int = 50_000
    tol: float = 1e-9


@dataclass
class SolveTrace:
    """Iteration log of a solver run."""

    method: str = ""
    iterations: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def record(self, it: int, obj: float, res: float) -> None:
        self.iterations.append(it)
        self.objectives.append(obj)
        self.residuals.append(res)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "residual"])
            for row in zip(self.iterations, self.objectives, self.residuals):
                writer.writerow(row)


def _lmax(P: np.ndarray) -> float:
    if P.size == 0:
        return 0.0
    return float(np.max(np.linalg.eigvalsh(0.5 * (P + P.T))))


def _quad_descent(H, lin, x0, opts: SolveOptions, obj, trace: SolveTrace):
    """Fixed-step 1/L descent on x'Hx/2 + lin'x from x0.

    Flat directions (null space of H) keep their x0 component; a
    nonzero slope along a flat direction means the objective is
    unbounded below. Returns (x, null_basis).
    """
    H = 0.5 * (H + H.T)
    x = np.asarray(x0, dtype=float).copy()
    if H.size == 0:
        return x, np.zeros((x.size, 0))
    vals, vecs = np.linalg.eigh(H)
    L = float(vals.max(initial=0.0))
    null = vecs[:, vals <= 1e-12 * max(L, 1.0)]
    if null.shape[1]:
        slope = null.T @ lin
        if np.linalg.norm(slope) > max(opts.tol, 1e-10):
            raise Unbounded("flat direction with nonzero slope")
        trace.notes.append("anchored")
    if L <= 1e-14:
        trace.record(0, obj(x), float(np.linalg.norm(lin)))
        return x, null
    step = opts.step if opts.step is not None else 1.0 / L
    stride = max(1, opts.max_iter // 500)
    for it in range(opts.max_iter):
        g = H @ x + lin
        gn = float(np.linalg.norm(g))
        if it % stride == 0:
            trace.record(it, obj(x), gn)
        if gn <= opts.tol:
            trace.record(it, obj(x), gn)
            return x, null
        x = x - step * g
        if not np.all(np.isfinite(x)):
            raise NoConvergence("iterates diverged")
    g = H @ x + lin
    gn = float(np.linalg.norm(g))
    trace.record(opts.max_iter, obj(x), gn)
    if gn > opts.tol:
        raise NoConvergence(f"gradient norm {gn:.3e} above tol {opts.tol:.1e}")
    return x, null


def _subgradient_descent(subgrad, x0, opts: SolveOptions, obj, trace: SolveTrace):
    x = np.asarray(x0, dtype=float).copy()
    best_x, best_obj = x.copy(), obj(x)
    g0 = float(np.linalg.norm(subgrad(x)))
    c = opts.step if opts.step is not None else 1.0 / (1.0 + g0)
    trace.notes.append(f"c={c:.6g}")
    stride = max(1, opts.max_iter // 500)
    for it in range(1, opts.max_iter + 1):
        g = subgrad(x)
        gn = float(np.linalg.norm(g))
        if gn <= opts.tol:
            return x
        x = x - (c / math.sqrt(it)) * g
        ox = obj(x)
        if ox < best_obj:
            best_obj, best_x = ox, x.copy()
        if it % stride == 0:
            trace.record(it, ox, gn)
    return best_x


def _quad_grad(f: IntegralFunction):
    part = as_quadratic(f)
    if part is None:
        return None
    P, q, _ = part
    return P, q


def solve_opp(problem: NetworkProblem, init_y=None, opts: Optional[SolveOptions] = None):
    """Solve the potential problem: minimize K*(y) + Gamma(E' y).

    Returns (y, zeta, trace) with zeta = E' y and the first-order
    residual (distance of 0 to the inclusion) below opts.tol.

    Indicator-type Gamma is handled exactly in the reduced variable
    over the feasible subspace; smooth quadratic parts use fixed-step
    descent at 1/L; anything else falls back to diminishing-step
    subgradient descent with minimum-norm subgradients. When the
    minimizer set is a translate family the iteration's start value
    fixes the free component and the trace notes "anchored".
    """
    opts = opts or SolveOptions()
    E = problem.op.lifted
    nsize = problem.node_size
    y0 = np.zeros(nsize) if init_y is None else np.asarray(init_y, dtype=float).ravel()
    if y0.size != nsize:
        raise DimensionMismatch("init_y has wrong length")
    trace = SolveTrace()

    ind = indicator_offsets(problem.Gamma)
    if ind is not None:
        alpha, beta, const = ind
        # feasible set is E' y = alpha; the linear term of Gamma is
        # constant on it, so only K* drives the reduced problem
        y_p, *_ = np.linalg.lstsq(E.T, alpha, rcond=None)
        if np.linalg.norm(E.T @ y_p - alpha) > 1e-9 * (1.0 + np.linalg.norm(alpha)):
            raise Infeasible("edge offsets are not relative outputs of any y")
        Z = problem.op.agreement_basis()
        t0 = Z.T @ (y0 - y_p)
        quad = _quad_grad(problem.Kstar)
        trace.method = "reduced-gradient"

        def obj_t(t):
            return value(problem.Kstar, y_p + Z @ t)

        if quad is not None:
            P, q = quad
            t, null = _quad_descent(Z.T @ P @ Z, Z.T @ (P @ y_p + q), t0, opts, obj_t, trace)
            if null.shape[1]:
                # pin the first node's coordinates to the start value
                # along the flat directions
                d = problem.op.dim
                rows = (Z @ null)[:d, :]
                target = y0[:d] - (y_p + Z @ t)[:d]
                coef, *_ = np.linalg.lstsq(rows, target, rcond=None)
                t = t + null @ coef
        else:

            def grad_t(t):
                return Z.T @ grad_of(problem.Kstar, y_p + Z @ t)

            t = _subgradient_descent(grad_t, t0, opts, obj_t, trace)
            trace.method = "reduced-subgradient"
        y = y_p + Z @ t
        return y, E.T @ y, trace

    quad_k = _quad_grad(problem.Kstar)
    quad_g = _quad_grad(problem.Gamma)
    if quad_k is not None and quad_g is not None:
        Pk, qk = quad_k
        Pg, qg = quad_g
        H = Pk + E @ Pg @ E.T
        lin = qk + E @ qg
        trace.method = "gradient"
        y, _ = _quad_descent(H, lin, y0, opts, lambda yv: opp_objective(problem, yv), trace)
        return y, E.T @ y, trace

    if quad_g is not None:
        # smooth edge part, nonsmooth node part with a prox
        Pg, qg = quad_g
        H = E @ Pg @ E.T
        L = max(_lmax(H), 1e-12)
        step = opts.step if opts.step is not None else 1.0 / L
        y = y0.copy()
        trace.method = "prox-gradient"
        stride = max(1, opts.max_iter // 500)
        for it in range(opts.max_iter):
            g_smooth = H @ y + E @ qg
            y_next = prox(problem.Kstar, y - step * g_smooth, step)
            move = float(np.linalg.norm(y_next - y)) / step
            if it % stride == 0:
                trace.record(it, opp_objective(problem, y_next), move)
            y = y_next
            if move <= opts.tol:
                return y, E.T @ y, trace
        raise NoConvergence("proximal gradient did not reach tolerance")

    def subgrad_y(yv):
        gk = grad_of(problem.Kstar, yv)
        gg = grad_of(problem.Gamma, E.T @ yv)
        return gk + E @ gg

    trace.method = "subgradient"
    y = _subgradient_descent(subgrad_y, y0, opts, lambda yv: opp_objective(problem, yv), trace)
    res = inclusion_residual(problem, y)
    if not (res <= max(opts.tol, 1e-6) * 10):
        raise NoConvergence(f"inclusion residual {res:.3e} after subgradient descent")
    return y, E.T @ y, trace


def solve_ofp(problem: NetworkProblem, init_mu=None, opts: Optional[SolveOptions] = None):
    """Solve the flow problem: minimize K(-E mu) + Gamma*(mu).

    Returns (u, mu, trace) with u = -E mu. The cycle-space component
    of mu stays at its start value whenever the objective is flat
    along it (noted as "anchored").
    """
    opts = opts or SolveOptions()
    E = problem.op.lifted
    msize = problem.edge_size
    mu0 = np.zeros(msize) if init_mu is None else np.asarray(init_mu, dtype=float).ravel()
    if mu0.size != msize:
        raise DimensionMismatch("init_mu has wrong length")
    trace = SolveTrace()

    quad_k = _quad_grad(problem.K)
    quad_g = _quad_grad(problem.Gammastar)
    if quad_k is not None and quad_g is not None:
        Pk, qk = quad_k
        Pg, qg = quad_g
        H = E.T @ Pk @ E + Pg
        lin = -E.T @ qk + qg
        trace.method = "gradient"
        mu, _ = _quad_descent(H, lin, mu0, opts, lambda m: ofp_objective(problem, m), trace)
        return -E @ mu, mu, trace

    if quad_k is not None:
        Pk, qk = quad_k
        H = E.T @ Pk @ E
        L = max(_lmax(H), 1e-12)
        step = opts.step if opts.step is not None else 1.0 / L
        mu = mu0.copy()
        trace.method = "prox-gradient"
        stride = max(1, opts.max_iter // 500)
        for it in range(opts.max_iter):
            g_smooth = H @ mu - E.T @ qk
            mu_next = prox(problem.Gammastar, mu - step * g_smooth, step)
            move = float(np.linalg.norm(mu_next - mu)) / step
            if it % stride == 0:
                trace.record(it, ofp_objective(problem, mu_next), move)
            mu = mu_next
            if move <= opts.tol:
                return -E @ mu, mu, trace
        raise NoConvergence("proximal gradient did not reach tolerance")

    def subgrad_mu(m):
        gk = grad_of(problem.K, -E @ m)
        gg = grad_of(problem.Gammastar, m)
        return -E.T @ gk + gg

    trace.method = "subgradient"
    mu = _subgradient_descent(subgrad_mu, mu0, opts, lambda m: ofp_objective(problem, m), trace)
    res = flow_residual(problem, mu)
    if not (res <= max(opts.tol, 1e-6) * 10):
        raise NoConvergence(f"flow residual {res:.3e} after subgradient descent")
    return -E @ mu, mu, trace


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteadyStateCertificate:
    """A closed-loop steady-state candidate with its residuals.

    residual_consistency covers zeta = E' y and u = -E mu;
    residual_relations covers (u, y) against the node relation and
    (zeta, mu) against the edge relation; residual_inclusion is the
    distance of 0 to k^-1(y) + E gamma(E' y).
    """

    u: np.ndarray
    y: np.ndarray
    zeta: np.ndarray
    mu: np.ndarray
    residual_consistency: float
    residual_relations: float
    residual_inclusion: float

    def valid(self, tol: float) -> bool:
        return (
            self.residual_consistency <= tol
            and self.residual_relations <= tol
            and self.residual_inclusion <= tol
        )


def _descriptor_parts(desc):
    base = desc.basepoint
    basis = desc.basis if desc.basis is not None else np.zeros((desc.dim, 0))
    return base, basis


def recover_certificate(problem: NetworkProblem, y, zeta, tol: float = 1e-6) -> SteadyStateCertificate:
    """Recover (u, mu) from an OPP solution (y, zeta).

    Selects u from k^-1(y) and mu from gamma(zeta) subject to
    u = -E mu, minimizing ||u||^2 + ||mu||^2 over the consistent
    choices (a constrained least-squares over the descriptor
    subspaces). Raises EmptySelection when no consistent pair exists
    at tol.
    """
    y = np.asarray(y, dtype=float).ravel()
    zeta = np.asarray(zeta, dtype=float).ravel()
    E = problem.op.lifted
    du = inverse(problem.node_relation, y)
    dmu = forward(problem.edge_relation, zeta)
    if du.is_empty or dmu.is_empty:
        raise EmptySelection("a relation has no element at the requested point")
    a, A = _descriptor_parts(du)
    b, B = _descriptor_parts(dmu)
    # constraint: a + A s = -E (b + B r)
    M = np.hstack([A, E @ B]) if A.size or B.size else np.zeros((a.size, 0))
    rhs = -E @ b - a
    if M.shape[1] == 0:
        if np.linalg.norm(rhs) > tol * (1.0 + np.linalg.norm(a)):
            raise EmptySelection("unique selections are inconsistent")
        sr = np.zeros(0)
    else:
        sr, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        if np.linalg.norm(M @ sr - rhs) > tol * (1.0 + np.linalg.norm(rhs)):
            raise EmptySelection("no consistent (u, mu) pair at tolerance")
        # minimize ||u||^2 + ||mu||^2 over the solution family
        u_mat, s_mat, vt = np.linalg.svd(M)
        cutoff = 1e-12 * (s_mat[0] if s_mat.size else 1.0)
        rank = int(np.sum(s_mat > cutoff))
        null = vt[rank:].T
        if null.shape[1]:
            D = np.zeros((a.size + b.size, M.shape[1]))
            D[: a.size, : A.shape[1]] = A
            D[a.size :, A.shape[1] :] = B
            c0 = np.concatenate([a, b]) + D @ sr
            zshift, *_ = np.linalg.lstsq(D @ null, -c0, rcond=None)
            sr = sr + null @ zshift
    s = sr[: A.shape[1]]
    r = sr[A.shape[1] :]
    u = a + (A @ s if A.size else 0.0)
    mu = b + (B @ r if B.size else 0.0)
    res_cons = max(
        float(np.linalg.norm(zeta - E.T @ y)), float(np.linalg.norm(u + E @ mu))
    )
    res_rel = max(
        pair_residual(problem.node_relation, u, y),
        pair_residual(problem.edge_relation, zeta, mu),
    )
    return SteadyStateCertificate(
        u=u,
        y=y,
        zeta=zeta,
        mu=mu,
        residual_consistency=res_cons,
        residual_relations=res_rel,
        residual_inclusion=inclusion_residual(problem, y),
    )


@dataclass(frozen=True)
class VerifyReport:
    valid: bool
    residuals: dict

    def __bool__(self) -> bool:
        return self.valid


def verify_steady_state(problem: NetworkProblem, candidate, tol: float = 1e-6) -> VerifyReport:
    """Check a 4-tuple (u, y, zeta, mu) against all steady-state conditions."""
    u, y, zeta, mu = (np.asarray(v, dtype=float).ravel() for v in candidate)
    E = problem.op.lifted
    residuals = {
        "consistency_zeta": float(np.linalg.norm(zeta - E.T @ y)),
        "consistency_u": float(np.linalg.norm(u + E @ mu)),
        "relation_nodes": pair_residual(problem.node_relation, u, y),
        "relation_edges": pair_residual(problem.edge_relation, zeta, mu),
        "inclusion": inclusion_residual(problem, y),
    }
    return VerifyReport(valid=all(v <= tol for v in residuals.values()), residuals=residuals)
