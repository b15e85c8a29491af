"""Jones beta-numbers and the discrete Reifenberg machinery.

Works on finite atomic measures sum_i w_i delta_{x_i}.  The beta number of a
ball is computed two ways: from the eigenvalues of the second-moment matrix
(the production path, with the eigenvalue identity asserted against a second
scaling route), and by direct search over affine planes (the slow oracle used
in tests).  The multiscale beta^2 ds/s integral is discretized on a ratio-5
scale ladder with weight ln 5 per rung; below the minimal pairwise atom
separation every ball holds a single atom and beta vanishes exactly, so the
ladder is truncated there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial import cKDTree

from .spans import AffinePlane

LN5 = float(np.log(5.0))


class MeasureError(ValueError):
    pass


class DisjointnessError(ValueError):
    pass


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

@dataclass
class WeightedPointMeasure:
    """Finite atomic measure: points (n, m) with nonnegative weights (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] != self.weights.shape[0]:
            raise MeasureError("points/weights length mismatch")
        if (self.weights < 0).any():
            raise MeasureError("weights must be >= 0")

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def mass(self) -> float:
        return float(self.weights.sum())

    def restrict(self, center, radius: float) -> "WeightedPointMeasure":
        center = np.asarray(center, dtype=float)
        d = np.linalg.norm(self.points - center, axis=1)
        mask = d <= radius + 1e-12
        return WeightedPointMeasure(self.points[mask], self.weights[mask])

    def min_separation(self) -> float:
        """Minimal pairwise distance between distinct atoms; inf if < 2 atoms."""
        if self.size < 2:
            return np.inf
        tree = cKDTree(self.points)
        d, _ = tree.query(self.points, k=2)
        return float(d[:, 1].min())


@dataclass
class MomentData:
    center_of_mass: np.ndarray
    second_moment: np.ndarray      # unnormalized integral of outer products
    eigenvalues: np.ndarray        # descending
    eigenvectors: np.ndarray       # rows, matching eigenvalues
    mass: float


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-13, max_sweeps: int = 50):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns (eigenvalues descending, eigenvectors as rows).
    """
    a = np.asarray(matrix, dtype=float).copy()
    n = a.shape[0]
    if np.abs(a - a.T).max() > 1e-12 * (1 + np.abs(a).max()):
        raise MeasureError("matrix is not symmetric")
    a = (a + a.T) / 2
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(i + 1, n)))
        if off <= tol * scale:
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                if abs(a[i, j]) <= 1e-300:
                    continue
                tau = (a[j, j] - a[i, i]) / (2 * a[i, j])
                t = np.sign(tau) / (abs(tau) + np.sqrt(1 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1 + t * t)
                s = t * c
                rot = np.eye(n)
                rot[i, i] = rot[j, j] = c
                rot[i, j] = s
                rot[j, i] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], v[:, order].T


def moments(mu: WeightedPointMeasure, center, radius: float) -> MomentData:
    """Center of mass and second-moment matrix of mu restricted to a ball.

    The center of mass is mass-averaged; the second moment is the plain
    (unnormalized) integral of (x - x_cm) outer (x - x_cm).
    """
    sub = mu.restrict(center, radius)
    mass = sub.mass()
    if mass <= 0:
        raise MeasureError("zero mass in ball")
    x_cm = (sub.weights[:, None] * sub.points).sum(axis=0) / mass
    rel = sub.points - x_cm
    q = np.einsum("b,bi,bj->ij", sub.weights, rel, rel)
    eigvals, eigvecs = jacobi_eigh(q)
    eigvals = np.maximum(eigvals, 0.0)
    return MomentData(x_cm, q, eigvals, eigvecs, mass)


# ---------------------------------------------------------------------------
# beta numbers
# ---------------------------------------------------------------------------

@dataclass
class BetaResult:
    beta: float
    beta_sq: float
    plane: AffinePlane | None      # None when the ball carries no mass


def beta_from_moments(mu: WeightedPointMeasure, center, radius: float,
                      k: int) -> BetaResult:
    """beta^k of the ball from the moment eigenvalues.

    Route 1 rescales the ball to B(0,1) with the blow-up measure
    (weights scaled by r^{-k}, distances by 1/r) and sums the trailing
    eigenvalues; route 2 takes the unscaled second moment and applies
    r^{-k} r^{-2} to the eigenvalue tail.  Both are computed and must agree
    to 1e-10; the best plane is the leading eigenframe through the center
    of mass, in original coordinates.
    """
    center = np.asarray(center, dtype=float)
    if not 0 <= k <= mu.m:
        raise MeasureError(f"plane dimension k={k} outside 0..{mu.m}")
    sub = mu.restrict(center, radius)
    if sub.mass() <= 0:
        return BetaResult(0.0, 0.0, None)

    hat = WeightedPointMeasure((sub.points - center) / radius,
                               sub.weights * radius ** (-k))
    md_hat = moments(hat, np.zeros(mu.m), 1.0 + 1e-9)
    beta_sq_1 = float(md_hat.eigenvalues[k:].sum())

    md = moments(sub, center, radius)
    beta_sq_2 = float(md.eigenvalues[k:].sum()) * radius ** (-k) * radius ** (-2)

    if abs(beta_sq_1 - beta_sq_2) > 1e-10 * (1.0 + beta_sq_1):
        raise MeasureError(
            f"beta scaling identity violated: {beta_sq_1!r} vs {beta_sq_2!r}")
    beta_sq = max(beta_sq_1, 0.0)
    plane = AffinePlane(md.center_of_mass, md.eigenvectors[:k])
    return BetaResult(float(np.sqrt(beta_sq)), beta_sq, plane)


def _fit_cost(points: np.ndarray, weights: np.ndarray, frame: np.ndarray,
              x_cm: np.ndarray) -> float:
    """sum_i w_i dist(y_i, x_cm + span(frame))^2 -- base point already optimal
    (the cost is quadratic in the base, minimized through the center of mass)."""
    rel = points - x_cm
    res = rel - (rel @ frame.T) @ frame if frame.size else rel
    return float((weights * np.einsum("bi,bi->b", res, res)).sum())


def _direction_grid(step_deg: float) -> np.ndarray:
    """Quasi-uniform unit vectors in R^3 on a polar grid (hemisphere)."""
    out = [(0.0, 0.0, 1.0)]
    step = np.deg2rad(step_deg)
    n_theta = int(np.ceil(np.pi / 2 / step))
    for it in range(1, n_theta + 1):
        theta = it * np.pi / 2 / n_theta
        circ = 2 * np.pi * np.sin(theta)
        n_phi = max(4, int(np.ceil(circ / step)))
        for ip in range(n_phi):
            phi = 2 * np.pi * ip / n_phi
            out.append((np.sin(theta) * np.cos(phi),
                        np.sin(theta) * np.sin(phi),
                        np.cos(theta)))
    return np.asarray(out)


def _angles_to_dir(angles) -> np.ndarray:
    th, ph = angles
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def beta_bruteforce(mu: WeightedPointMeasure, center, radius: float,
                    k: int) -> float:
    """Direct minimization of the plane-fit defect over affine k-planes.

    Oracle-scale only (m <= 3, at most 200 atoms).  For each orientation on a
    1-degree grid the optimal base point is taken in closed form (the fit is
    quadratic in the base and minimized through the restricted center of
    mass), then the best orientation is polished by Nelder-Mead.
    """
    center = np.asarray(center, dtype=float)
    if mu.m > 3:
        raise MeasureError("brute-force oracle capped at m <= 3")
    sub = mu.restrict(center, radius)
    if sub.size > 200:
        raise MeasureError("brute-force oracle capped at 200 atoms")
    if sub.mass() <= 0:
        return 0.0
    if k >= mu.m:
        return 0.0
    w = sub.weights
    x_cm = (w[:, None] * sub.points).sum(axis=0) / w.sum()
    rel = sub.points - x_cm
    norms_sq = np.einsum("bi,bi->b", rel, rel)

    if k == 0:
        best = float((w * norms_sq).sum())
        return float(np.sqrt(max(best, 0.0) * radius ** (-k) * radius ** (-2)))

    m = mu.m
    if m == 2:
        # single angle; dense half-degree sweep then polish
        ang = np.deg2rad(np.arange(0.0, 180.0, 0.5))
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        proj = rel @ dirs.T                       # (n, n_ang)
        cost = (w * norms_sq).sum() - np.einsum("b,ba->a", w, proj ** 2)

        def f(a):
            d = np.array([np.cos(a[0]), np.sin(a[0])])
            pr = rel @ d
            return (w * norms_sq).sum() - float((w * pr ** 2).sum())

        a0 = ang[int(np.argmin(cost))]
        res = optimize.minimize(f, [a0], method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14})
        best = min(float(cost.min()), float(res.fun))
    else:
        dirs = _direction_grid(1.0)

        if k == 1:
            proj = rel @ dirs.T
            cost = (w * norms_sq).sum() - np.einsum("b,ba->a", w, proj ** 2)

            def f(a):
                d = _angles_to_dir(a)
                pr = rel @ d
                return (w * norms_sq).sum() - float((w * pr ** 2).sum())
        else:  # k == 2: parametrize by the plane normal
            proj = rel @ dirs.T
            cost = np.einsum("b,ba->a", w, proj ** 2)

            def f(a):
                d = _angles_to_dir(a)
                pr = rel @ d
                return float((w * pr ** 2).sum())

        i0 = int(np.argmin(cost))
        d0 = dirs[i0]
        th0 = float(np.arccos(np.clip(d0[2], -1, 1)))
        ph0 = float(np.arctan2(d0[1], d0[0]))
        res = optimize.minimize(f, [th0, ph0], method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14,
                                         "maxiter": 600})
        best = min(float(cost.min()), float(res.fun))

    best = max(best, 0.0)
    return float(np.sqrt(best * radius ** (-k) * radius ** (-2)))


# ---------------------------------------------------------------------------
# ball families
# ---------------------------------------------------------------------------

@dataclass
class BallFamily:
    """Tagged collection of balls: parallel arrays of centers/radii/tags."""

    centers: np.ndarray
    radii: np.ndarray
    tags: list = field(default_factory=list)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.radii = np.asarray(self.radii, dtype=float).ravel()
        if not self.tags:
            self.tags = ["generic"] * len(self.radii)
        if self.centers.shape[0] != len(self.radii) or len(self.tags) != len(self.radii):
            raise MeasureError("ball family arrays disagree in length")

    @property
    def size(self) -> int:
        return len(self.radii)

    def check_disjoint(self, shrink: float = 1.0):
        """Raise DisjointnessError on the first overlapping pair of shrunk
        balls (shrink=0.2 is the fifth-ball check)."""
        for i in range(self.size):
            for j in range(i + 1, self.size):
                gap = np.linalg.norm(self.centers[i] - self.centers[j])
                if gap < shrink * (self.radii[i] + self.radii[j]) - 1e-12:
                    raise DisjointnessError(
                        f"balls {i} and {j} overlap at shrink {shrink}: "
                        f"|c_i-c_j|={gap:.6g} < {shrink*(self.radii[i]+self.radii[j]):.6g}")


def measure_from_balls(family: BallFamily, k: int,
                       disjointness: str = "fifth") -> WeightedPointMeasure:
    """Atomic measure sum r_x^k delta_x over the ball centers.

    ``disjointness`` = "fifth" checks the fifth-balls pairwise, "full" the
    balls themselves, "none" skips the check.
    """
    if disjointness == "fifth":
        family.check_disjoint(0.2)
    elif disjointness == "full":
        family.check_disjoint(1.0)
    elif disjointness != "none":
        raise MeasureError(f"unknown disjointness mode {disjointness!r}")
    if family.size == 0:
        return WeightedPointMeasure(np.zeros((0, 1)), np.zeros(0))
    return WeightedPointMeasure(family.centers, family.radii ** k)


def packing_bound(family: BallFamily, k: int) -> float:
    """sum of r_x^k over the family; callers compare against their budget."""
    return float((family.radii ** k).sum())


# ---------------------------------------------------------------------------
# Reifenberg condition
# ---------------------------------------------------------------------------

@dataclass
class ReifenbergReport:
    entries: list                  # rows (center, tau, value, threshold, ratio)
    worst_ratio: float
    passed: bool
    scales: np.ndarray
    per_atom_integral: np.ndarray  # sum_j beta^2(y, s_j) ln 5 per atom


def _per_atom_beta_table(mu: WeightedPointMeasure, k: int,
                         scales: np.ndarray) -> np.ndarray:
    """beta^2(y, s) for every atom y and ladder scale s, shape (n, len(scales))."""
    n = mu.size
    table = np.zeros((n, len(scales)))
    if n == 0:
        return table
    tree = cKDTree(mu.points)
    for js, s in enumerate(scales):
        groups = tree.query_ball_point(mu.points, s + 1e-12)
        for i, idx in enumerate(groups):
            idx = np.asarray(idx, dtype=np.intp)
            if len(idx) < 2:
                continue   # single atom: any k-plane through it fits exactly
            pts = mu.points[idx]
            w = mu.weights[idx]
            mass = w.sum()
            if mass <= 0:
                continue
            x_cm = (w[:, None] * pts).sum(axis=0) / mass
            rel = pts - x_cm
            q = np.einsum("b,bi,bj->ij", w, rel, rel)
            eigvals, _ = jacobi_eigh(q)
            tail = float(np.maximum(eigvals, 0.0)[k:].sum())
            table[i, js] = tail * s ** (-k) * s ** (-2)
    return table


def reifenberg_check(mu: WeightedPointMeasure, k: int, delta: float,
                     region: tuple, scale_ratio: float = 5.0,
                     scale_floor: float | None = None,
                     max_query_atoms: int = 64) -> ReifenbergReport:
    """Discrete multiscale Dirichlet check of the beta^2 ds/s condition.

    For every ball (w, tau) on the query net the quantity
        sum_{atoms y in B(w,tau)}  w_y * sum_{s_j <= tau} beta^2(y, s_j) ln 5
    is compared against delta * tau^k; the verdict is the worst ratio.  The
    scale ladder runs from the region radius down by ``scale_ratio`` to the
    minimal pairwise atom separation (below which every ball holds a single
    atom and beta vanishes identically).
    """
    center, rbar = region
    center = np.asarray(center, dtype=float)
    if delta <= 0:
        raise MeasureError("delta must be > 0")
    floor = mu.min_separation() if scale_floor is None else scale_floor

    scales = []
    s = float(rbar)
    while s >= floor - 1e-15 and len(scales) < 64:
        scales.append(s)
        s /= scale_ratio
    scales = np.asarray(scales)

    per_atom = np.zeros(mu.size)
    if len(scales):
        table = _per_atom_beta_table(mu, k, scales)
        per_atom = table.sum(axis=1) * LN5
    else:
        table = np.zeros((mu.size, 0))

    if mu.size > max_query_atoms:
        step = int(np.ceil(mu.size / max_query_atoms))
        query_idx = np.arange(0, mu.size, step)
    else:
        query_idx = np.arange(mu.size)
    query_centers = [center] + [mu.points[i] for i in query_idx]

    entries = []
    worst = 0.0
    for tau in scales:
        cum = table[:, scales <= tau + 1e-15].sum(axis=1) * LN5
        for qc in query_centers:
            d = np.linalg.norm(mu.points - qc, axis=1)
            inside = d <= tau + 1e-12
            value = float((mu.weights[inside] * cum[inside]).sum())
            threshold = delta * tau ** k
            ratio = value / threshold
            worst = max(worst, ratio)
            entries.append((qc.copy(), float(tau), value, threshold, ratio))
    return ReifenbergReport(entries, worst, worst < 1.0, scales, per_atom)


# ---------------------------------------------------------------------------
# rectifiability diagnostic
# ---------------------------------------------------------------------------

@dataclass
class RectifiabilityReport:
    high_pinch_fraction: float
    n_high_pinch: int
    n_low_pinch: int
    reifenberg: ReifenbergReport | None
    passed: bool
    beta_integrals: np.ndarray


def rectifiability_diagnostic(points, pinch, delta: float, k: int,
                              delta_r: float, region: tuple | None = None
                              ) -> RectifiabilityReport:
    """Split a detected set by energy pinching, then Reifenberg-audit the
    low-pinch part.

    ``pinch`` holds, per point, the drop theta(y, 5 rbar) - theta(y, r_min)
    measured by the caller.  Points with pinch > delta are set aside (their
    fraction is reported); the rest carry the unit-weight empirical measure
    fed to reifenberg_check at constant delta_r.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pinch = np.asarray(pinch, dtype=float).ravel()
    if len(pinch) != points.shape[0]:
        raise MeasureError("pinch values must align with points")
    high = pinch > delta
    n_high = int(high.sum())
    n_low = int((~high).sum())
    frac = n_high / max(len(pinch), 1)
    low_pts = points[~high]
    if n_low == 0:
        return RectifiabilityReport(frac, n_high, 0, None, True, np.zeros(0))
    if region is None:
        c = low_pts.mean(axis=0)
        r = float(np.linalg.norm(low_pts - c, axis=1).max()) + 1e-9
        region = (c, max(r, 1e-6))
    mu = WeightedPointMeasure(low_pts, np.ones(n_low))
    rep = reifenberg_check(mu, k, delta_r, region)
    return RectifiabilityReport(frac, n_high, n_low, rep, rep.passed,
                                rep.per_atom_integral)
