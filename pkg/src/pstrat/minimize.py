"""Projected gradient descent for the discrete p-energy, and the
Euler-Lagrange residuals used to certify the output.

The descent direction is the exact Euclidean gradient of the (regularized)
discrete energy -- assembled through the adjoint of the central/one-sided
difference stencil -- projected onto the sphere tangent space, with a
renormalization after every step.  Energy is monotone along accepted steps
by construction (backtracking halves the step, up to a budget); boundary
nodes are never touched, so their values stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DiscretizedMap, GridError
from .monitor import EPS_REG, CutoffProfile


class DescentError(RuntimeError):
    """Energy increased beyond the backtracking budget."""


@dataclass(frozen=True)
class DescentSchedule:
    step_size: float = 1e-3     # initial step and regrowth cap
    max_iter: int = 200
    tol: float = 1e-6           # relative energy decrease to declare done
    backtrack_max: int = 20
    growth: float = 1.5

    def __post_init__(self):
        if self.step_size <= 0:
            raise GridError("step size must be > 0")
        if self.tol <= 0:
            raise GridError("tolerance must be > 0")


@dataclass
class MinimizeResult:
    map: DiscretizedMap
    energies: list
    steps: list
    backtracks: list
    iterations: int
    converged: bool
    stop_reason: str


def _difference_adjoint(g: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Adjoint of the np.gradient stencil (central interior, one-sided edges)
    along one axis."""
    gm = np.moveaxis(g, axis, 0)
    n = gm.shape[0]
    if n < 6:
        raise GridError("lattice too small for the adjoint stencil")
    out = np.empty_like(gm)
    out[2:n - 2] = (gm[1:n - 3] - gm[3:n - 1]) / (2 * h)
    out[0] = -gm[0] / h - gm[1] / (2 * h)
    out[1] = gm[0] / h - gm[2] / (2 * h)
    out[n - 2] = gm[n - 3] / (2 * h) - gm[n - 1] / h
    out[n - 1] = gm[n - 2] / (2 * h) + gm[n - 1] / h
    return np.moveaxis(out, 0, axis)


def _raw_energy(values: np.ndarray, h: float, m: int, p: float) -> float:
    s = None
    for j in range(m):
        d = np.gradient(values, h, axis=j, edge_order=1)
        contrib = np.einsum("...n,...n->...", d, d)
        s = contrib if s is None else s + contrib
    return float((s ** (p / 2.0)).sum() * h ** m)


def _energy_and_gradient(values: np.ndarray, h: float, m: int, p: float):
    """True discrete energy plus the Euclidean gradient of its regularized
    version (regularization only enters the p-2 power)."""
    diffs = [np.gradient(values, h, axis=j, edge_order=1) for j in range(m)]
    s = None
    for d in diffs:
        contrib = np.einsum("...n,...n->...", d, d)
        s = contrib if s is None else s + contrib
    energy = float((s ** (p / 2.0)).sum() * h ** m)
    phi_prime = (p / 2.0) * (s + EPS_REG ** 2) ** ((p - 2) / 2.0)
    grad = None
    for j, d in enumerate(diffs):
        term = _difference_adjoint(phi_prime[..., None] * d, h, j)
        grad = term if grad is None else grad + term
    return energy, 2 * h ** m * grad


def minimize(map0: DiscretizedMap, schedule: DescentSchedule) -> MinimizeResult:
    """Descend the p-energy with the boundary nodes held fixed.

    Stops when the relative energy decrease of an accepted step falls below
    ``schedule.tol`` or the iteration cap is reached; raises DescentError if
    a step cannot be made non-increasing within the backtracking budget.
    """
    if not map0.boundary_mask.any():
        raise GridError("minimize needs a nonempty boundary mask")
    m, h, p = map0.m, map0.h, map0.p
    free = ~map0.boundary_mask
    u = map0.values.copy()

    energies = [_raw_energy(u, h, m, p)]
    steps: list = []
    backtracks_log: list = []
    tau = schedule.step_size
    converged = False
    reason = "iteration cap"
    it = 0

    for it in range(1, schedule.max_iter + 1):
        e_cur, grad = _energy_and_gradient(u, h, m, p)
        inner = np.einsum("...n,...n->...", grad, u)
        g_tan = grad - inner[..., None] * u
        g_tan[~free] = 0.0
        if not np.isfinite(g_tan).all():
            raise DescentError(f"non-finite gradient at iteration {it}")

        n_back = 0
        while True:
            trial = u.copy()
            stepped = u[free] - tau * g_tan[free]
            norms = np.linalg.norm(stepped, axis=-1, keepdims=True)
            trial[free] = np.where(norms > 1e-12, stepped / np.where(
                norms > 0, norms, 1.0), u[free])
            e_new = _raw_energy(trial, h, m, p)
            if e_new <= e_cur:
                break
            tau /= 2
            n_back += 1
            if n_back > schedule.backtrack_max:
                raise DescentError(
                    f"energy increase beyond backtracking budget at iteration {it}")

        rel = (e_cur - e_new) / max(e_cur, 1e-300)
        u = trial
        energies.append(e_new)
        steps.append(tau)
        backtracks_log.append(n_back)
        if rel < schedule.tol:
            converged = True
            reason = "relative decrease below tolerance"
            break
        tau = min(tau * schedule.growth, schedule.step_size)

    out = map0.copy_with(u, minimized=True, descent_iterations=it,
                         descent_converged=converged)
    out.check_unit_norm()
    return MinimizeResult(out, energies, steps, backtracks_log, it,
                          converged, reason)


# ---------------------------------------------------------------------------
# Euler-Lagrange residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    """Outer-variation residual fields plus optional inner-variation defects.

    ``lhs`` is div(|grad u|^{p-2} grad u), ``rhs`` the sphere curvature term
    -|grad u|^{p-2} |grad u|^2 u; ``residual`` their difference.  Norms are
    taken over nodes at least ``margin`` from the lattice edge and from every
    singular node.
    """

    residual: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    admissible: np.ndarray
    max_norm: float
    mean_norm: float
    inner_defects: dict = field(default_factory=dict)


def _admissible_mask(mp: DiscretizedMap, margin_cells: float) -> np.ndarray:
    dom = mp.domain
    margin = int(np.ceil(margin_cells - 1e-9))
    mask = np.zeros(dom.shape, dtype=bool)
    core = tuple(slice(margin, dom.side - margin) for _ in range(dom.m))
    mask[core] = True
    if len(mp.singular_nodes):
        pts = dom.node_points().reshape(dom.shape + (dom.m,))
        sing = (mp.singular_nodes - dom.n) * dom.h
        for srow in sing:
            d = np.linalg.norm(pts - srow, axis=-1)
            mask &= d >= margin_cells * dom.h - 1e-12
    return mask


def el_residual(mp: DiscretizedMap, margin_cells: float = 10.0,
                force_general: bool = False) -> ResidualReport:
    """Pointwise outer-variation residual div(w grad u) + w |grad u|^2 u.

    For p = 2 the weight w collapses to 1 and a specialized path is taken
    unless ``force_general`` asks for the generic one (they agree to
    rounding; tested).
    """
    gf = mp.gradient_field()
    if mp.p == 2.0 and not force_general:
        w = None
    else:
        w = (gf.norm_sq + EPS_REG ** 2) ** ((mp.p - 2) / 2.0)
    lhs = None
    for j in range(mp.m):
        flux = gf.grad[..., j, :] if w is None else w[..., None] * gf.grad[..., j, :]
        term = np.gradient(flux, mp.h, axis=j, edge_order=1)
        lhs = term if lhs is None else lhs + term
    curv = gf.norm_sq if w is None else w * gf.norm_sq
    rhs = -curv[..., None] * mp.values
    residual = lhs - rhs
    admissible = _admissible_mask(mp, margin_cells)
    norms = np.linalg.norm(residual, axis=-1)
    sel = norms[admissible]
    max_norm = float(sel.max()) if sel.size else 0.0
    mean_norm = float(sel.mean()) if sel.size else 0.0
    return ResidualReport(residual, lhs, rhs, admissible, max_norm, mean_norm)


# ---------------------------------------------------------------------------
# inner variations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorField:
    """Catalog test field for the inner-variation identity.

    kind "radial_bump":  X(y) = profile(|y - center| / scale) (y - center)
    kind "coord_bump":   X(y) = profile(|y - center| / scale) e_axis
    Both are compactly supported in B(center, t_b scale).
    """

    kind: str
    profile: CutoffProfile
    center: tuple
    scale: float
    axis: int = 0

    def support_radius(self) -> float:
        return self.profile.t_b * self.scale


def stationarity_defect(mp: DiscretizedMap, x_field: VectorField) -> float:
    """Discretized inner-variation integral; vanishes (to quadrature error)
    for stationary maps."""
    center = np.asarray(x_field.center, dtype=float)
    if not mp.domain.contains_ball(center, x_field.support_radius()):
        raise GridError("vector-field support exits the domain")
    slices, coords = mp.domain.ball_slices(center, x_field.support_radius())
    gf = mp.gradient_field()
    grad = gf.grad[slices]
    norm_sq = gf.norm_sq[slices]
    w = (norm_sq + EPS_REG ** 2) ** ((mp.p - 2) / 2.0)

    d2 = sum((c - center[j]) ** 2 for j, c in enumerate(coords))
    d = np.sqrt(d2)
    safe = np.where(d > 0, d, 1.0)
    prof = x_field.profile.value(d / x_field.scale)
    dprof = x_field.profile.derivative(d / x_field.scale) / x_field.scale

    # T_{ik} = p <grad_i u, grad_k u> - |grad u|^2 delta_{ik}
    inner = np.einsum("...in,...kn->...ik", grad, grad)
    m = mp.m
    t_mat = mp.p * inner
    for i in range(m):
        t_mat[..., i, i] -= norm_sq

    total = np.zeros(d.shape)
    if x_field.kind == "radial_bump":
        for i in range(m):
            rel_i = (coords[i] - center[i]) / safe
            for k in range(m):
                rel_k = coords[k] - center[k]
                jac = dprof * rel_i * rel_k
                if i == k:
                    jac = jac + prof
                total += t_mat[..., i, k] * jac
    elif x_field.kind == "coord_bump":
        a = x_field.axis
        for i in range(m):
            rel_i = (coords[i] - center[i]) / safe
            total += t_mat[..., i, a] * dprof * rel_i
    else:
        raise GridError(f"unknown vector field kind {x_field.kind!r}")
    return float((w * total).sum() * mp.h ** mp.m)
