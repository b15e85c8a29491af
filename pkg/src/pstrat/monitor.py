"""Normalized energy, its monotonicity diagnostics, and stratum predicates.

The weight psi is a C^1 piecewise-cubic profile on [0, t_b]: strictly
decreasing, slope <= -xi on [0, t_a], vanishing to first order at t_b, with
2 < t_a < t_b.  The normalized energy of a ball is

    theta(x, r) = r^{p-m} * sum_nodes psi(|y - x| / r) |grad u(y)|^p h^m,

and the rate identity expresses d(theta)/dr through the radial part of the
gradient; both are midpoint sums over the bounding box of B(x, t_b r).

The transform Psi used by the pinching cross-check is tabulated relative to
t_b (only differences of Psi ever enter; the integral from 0 diverges for
m - p >= 1, so an absolute normalization at 0 would be meaningless).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .grid import DiscretizedMap, GridError
from .jones import jacobi_eigh

#: p-Laplacian weight regularization: |grad u|^{p-2} is evaluated as
#: (|grad u|^2 + EPS_REG^2)^{(p-2)/2}
EPS_REG = 1e-8


class CutoffError(ValueError):
    pass


class MonitorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cutoff profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffProfile:
    """C^1 cutoff: value 1 at 0, slope <= -xi up to t_a, zero from t_b on.

    Piece on [0, t_a]:   1 - xi t - B t^2 (3 t_a - 2t) / t_a^3
    Piece on [t_a, t_b]: cubic Hermite from (knee, -xi) down to (0, 0).
    """

    t_a: float
    t_b: float
    xi: float
    knee: float     # psi(t_a)
    bulk: float     # B coefficient of the first piece

    _psi_tables: dict = field(default_factory=dict, compare=False, repr=False)

    def value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        first = t < self.t_a
        tt = t[first]
        out[first] = 1.0 - self.xi * tt - self.bulk * tt * tt * (
            3 * self.t_a - 2 * tt) / self.t_a ** 3
        mid = (t >= self.t_a) & (t < self.t_b)
        s = (t[mid] - self.t_a) / (self.t_b - self.t_a)
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        out[mid] = self.knee * h00 - self.xi * (self.t_b - self.t_a) * h10
        return out

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        first = t < self.t_a
        tt = t[first]
        out[first] = -self.xi - 6 * self.bulk * tt * (self.t_a - tt) / self.t_a ** 3
        mid = (t >= self.t_a) & (t < self.t_b)
        delta = self.t_b - self.t_a
        s = (t[mid] - self.t_a) / delta
        out[mid] = (self.knee * (6 * s ** 2 - 6 * s)
                    - self.xi * delta * (3 * s ** 2 - 4 * s + 1)) / delta
        return out

    def integral(self) -> float:
        """integral of psi over [0, t_b] (dense trapezoid)."""
        t = np.linspace(0.0, self.t_b, 20001)
        return float(np.trapezoid(self.value(t), t))

    def psi_transform(self, p: float, m: int) -> "PsiTable":
        key = (float(p), int(m))
        if key not in self._psi_tables:
            self._psi_tables[key] = PsiTable(self, p, m)
        return self._psi_tables[key]


class PsiTable:
    """Tabulation of Psi(t) = integral of tau^{p-m} psi'(tau), anchored so
    Psi(t_b) = 0; only differences are meaningful."""

    T_LOW = 1e-6

    def __init__(self, profile: CutoffProfile, p: float, m: int):
        self.profile = profile
        self.q = p - m
        t_b = profile.t_b
        grid = np.unique(np.concatenate([
            np.geomspace(self.T_LOW, t_b, 6000),
            np.linspace(self.T_LOW, t_b, 6000)]))
        integrand = grid ** self.q * profile.derivative(grid)
        # Psi(t) = -int_t^{t_b} integrand; cumulative from the top down
        seg = 0.5 * (integrand[1:] + integrand[:-1]) * np.diff(grid)
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        self.grid = grid
        self.values = tail
        self.slope0 = -profile.xi      # psi'(0), exact for this family

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.interp(np.clip(t, self.T_LOW, None), self.grid, self.values,
                        right=0.0)
        small = t < self.T_LOW
        if np.any(small):
            ts = np.maximum(t[small], 1e-300)
            base = self.values[0]
            if abs(self.q + 1) > 1e-12:
                corr = self.slope0 * (self.T_LOW ** (self.q + 1)
                                      - ts ** (self.q + 1)) / (self.q + 1)
            else:
                corr = self.slope0 * np.log(self.T_LOW / ts)
            out[small] = base - corr
        return out


def make_cutoff(t_a: float = 3.5, t_b: float = 4.0, xi: float = 0.1
                ) -> CutoffProfile:
    """Build and verify a cutoff profile (defaults t_a=3.5, t_b=4, xi=0.1).

    Raises CutoffError naming the violated inequality: the structural
    constraints are 2 < t_a < t_b, xi > 0, and feasibility of the slope
    bound (psi(0) = 1 forces xi t_a < 1 - psi(t_a)).
    """
    if not t_a > 2:
        raise CutoffError(f"t_a must exceed 2 (got t_a={t_a})")
    if not t_b > t_a:
        raise CutoffError(f"t_b must exceed t_a (got t_a={t_a}, t_b={t_b})")
    if not xi > 0:
        raise CutoffError(f"xi must be positive (got xi={xi})")

    delta = t_b - t_a
    hi = 1.0 - xi * t_a          # knee <= hi keeps the first piece admissible
    lo = xi * delta / 2.0        # knee >= lo keeps the tail strictly decreasing
    knee = max(lo, hi / 4.0)
    if not (hi > 0 and knee <= hi):
        raise CutoffError(
            "slope bound unsatisfiable: xi*t_a <= psi(0) - psi(t_a) fails "
            f"(xi*t_a={xi * t_a:.6g}, feasible knee interval "
            f"[{lo:.6g}, {hi:.6g}] empty)")
    profile = CutoffProfile(t_a, t_b, xi, knee, 1.0 - xi * t_a - knee)

    samples = np.linspace(0.0, t_b, 10001)
    d = profile.derivative(samples[:-1])
    if d.max() >= 0:
        raise CutoffError("psi' < 0 on [0, t_b) violated")
    da = profile.derivative(np.linspace(0.0, t_a, 10001))
    if da.max() > -xi + 1e-12:
        raise CutoffError("psi' <= -xi on [0, t_a] violated")
    if abs(float(profile.value(np.array([t_b]))[0])) > 1e-12:
        raise CutoffError("psi(t_b) = 0 violated")
    eps = 1e-7
    for knot in (t_a, t_b - eps):
        jump_v = abs(float(profile.value(np.array([knot - eps]))[0]
                           - profile.value(np.array([knot + eps]))[0]))
        jump_d = abs(float(profile.derivative(np.array([knot - eps]))[0]
                           - profile.derivative(np.array([knot + eps]))[0]))
        if jump_v > 1e-5 or jump_d > 1e-4:
            raise CutoffError("psi is not C^1 at a knot")
    return profile


# ---------------------------------------------------------------------------
# normalized energy
# ---------------------------------------------------------------------------

def _require_admissible(mp: DiscretizedMap, x, r: float, psi: CutoffProfile):
    x = np.asarray(x, dtype=float)
    if not mp.domain.contains_ball(x, psi.t_b * r):
        raise MonitorError(
            f"ball B(x, t_b r) with |x|={np.linalg.norm(x):.4f}, "
            f"t_b r={psi.t_b * r:.4f} exits the domain (R_dom={mp.domain.r_dom})")
    return x


def normalized_energy(mp: DiscretizedMap, x, r: float,
                      psi: CutoffProfile) -> float:
    """theta(x, r): the scale-normalized psi-weighted p-energy at (x, r)."""
    x = _require_admissible(mp, x, r, psi)
    slices, coords = mp.domain.ball_slices(x, psi.t_b * r)
    d = np.sqrt(sum((c - x[j]) ** 2 for j, c in enumerate(coords)))
    w = psi.value(d / r)
    density = mp.gradient_field().density_p[slices]
    return float((w * density).sum() * mp.h ** mp.m * r ** (mp.p - mp.m))


def normalized_energy_field(mp: DiscretizedMap, r: float, psi: CutoffProfile):
    """theta(., r) on every lattice node at once via FFT convolution.

    Returns (field, admissible) where ``admissible`` marks nodes whose
    weight support stays inside the domain; values outside it are garbage.
    """
    if psi.t_b * r > 2 * mp.domain.r_dom:
        raise MonitorError("kernel larger than the domain")
    kk = int(np.floor(psi.t_b * r / mp.h + 1e-12))
    ax = mp.h * np.arange(-kk, kk + 1)
    grids = np.meshgrid(*([ax] * mp.m), indexing="ij")
    dist = np.sqrt(sum(g ** 2 for g in grids))
    kernel = psi.value(dist / r)
    density = mp.gradient_field().density_p
    conv = fftconvolve(density, kernel, mode="same")
    field = conv * mp.h ** mp.m * r ** (mp.p - mp.m)
    pts_norm = np.sqrt(sum(c ** 2 for c in mp.domain.open_coords()))
    admissible = pts_norm + psi.t_b * r <= mp.domain.r_dom + 1e-9
    return field, np.broadcast_to(admissible, mp.domain.shape)


def _radial_part_sq(mp: DiscretizedMap, x, slices, coords):
    """|<grad u, (y-x)/|y-x|>|^2 and |y-x| on a box slice (0 at y = x)."""
    grad = mp.gradient_field().grad[slices]
    d2 = sum((c - x[j]) ** 2 for j, c in enumerate(coords))
    d = np.sqrt(d2)
    radial = np.zeros(grad.shape[:-2] + (grad.shape[-1],))
    safe = np.where(d > 0, d, 1.0)
    for j in range(mp.m):
        radial += grad[..., j, :] * ((coords[j] - x[j]) / safe)[..., None]
    rad_sq = np.einsum("...n,...n->...", radial, radial)
    rad_sq = np.where(d > 0, rad_sq, 0.0)
    return rad_sq, d


def _weight_pm2(mp: DiscretizedMap, slices) -> np.ndarray:
    norm_sq = mp.gradient_field().norm_sq[slices]
    return (norm_sq + EPS_REG ** 2) ** ((mp.p - 2) / 2.0)


def normalized_energy_rate(mp: DiscretizedMap, x, r: float,
                           psi: CutoffProfile) -> float:
    """The closed-form radial-energy expression for d(theta)/dr:

    -p r^{p-m-2} * sum |y-x| psi'(|y-x|/r) |grad u|^{p-2} |radial part|^2 h^m.
    """
    x = _require_admissible(mp, x, r, psi)
    slices, coords = mp.domain.ball_slices(x, psi.t_b * r)
    rad_sq, d = _radial_part_sq(mp, x, slices, coords)
    w = _weight_pm2(mp, slices)
    val = (d * psi.derivative(d / r) * w * rad_sq).sum() * mp.h ** mp.m
    return float(-mp.p * r ** (mp.p - mp.m - 2) * val)


@dataclass
class PinchingResult:
    value: float       # theta(x, r) - theta(x, s)
    psi_form: float    # the Psi-transform evaluation of the same quantity


def pinching(mp: DiscretizedMap, x, r: float, s: float,
             psi: CutoffProfile) -> PinchingResult:
    """theta(x, r) - theta(x, s) for s < r, plus the independent Psi-form
    quadrature of the same difference (cross-check channel)."""
    if not s < r:
        raise MonitorError(f"pinching needs s < r (got s={s}, r={r})")
    x = _require_admissible(mp, x, r, psi)
    _require_admissible(mp, x, s, psi)
    value = (normalized_energy(mp, x, r, psi)
             - normalized_energy(mp, x, s, psi))

    table = psi.psi_transform(mp.p, mp.m)
    slices, coords = mp.domain.ball_slices(x, psi.t_b * r)
    rad_sq, d = _radial_part_sq(mp, x, slices, coords)
    w = _weight_pm2(mp, slices)
    diff = table(d / r) - table(d / s)
    dpow = np.where(d > 0, d, 1.0) ** (mp.m - mp.p)
    integrand = np.where(d > 0, diff * dpow * w * rad_sq, 0.0)
    psi_form = float(mp.p * integrand.sum() * mp.h ** mp.m)
    return PinchingResult(value, psi_form)


def radial_energy_density(mp: DiscretizedMap, x, radius: float) -> float:
    """integral over B(x, radius) of |grad u|^{p-2} |radial part|^2 --
    the rigidity diagnostic (vanishes for maps 0-homogeneous about x)."""
    x = np.asarray(x, dtype=float)
    if not mp.domain.contains_ball(x, radius):
        raise MonitorError("rigidity ball exits the domain")
    slices, coords = mp.domain.ball_slices(x, radius)
    rad_sq, d = _radial_part_sq(mp, x, slices, coords)
    w = _weight_pm2(mp, slices)
    mask = d <= radius + 1e-12
    return float((w * rad_sq)[mask].sum() * mp.h ** mp.m)


# ---------------------------------------------------------------------------
# invariance and strata
# ---------------------------------------------------------------------------

def invariance_defect(mp: DiscretizedMap, x, r: float, k: int):
    """Smallest normalized directional p-energy over k-dimensional frames.

    Seeded by the k bottom eigenvectors of the gradient Gram matrix (exact
    for p = 2), then refined by plane rotations between frame and complement
    directions (angle line searches; stops on a 1e-10 relative stall or 100
    sweeps).  Returns (value, frame rows).
    """
    x = np.asarray(x, dtype=float)
    m = mp.m
    if k == 0:
        return 0.0, np.zeros((0, m))
    if not 1 <= k <= m:
        raise MonitorError(f"k={k} outside 1..{m}")
    if not mp.domain.contains_ball(x, r):
        raise MonitorError("invariance ball exits the domain")
    slices, mask = mp.domain.ball_mask(x, r)
    grad = mp.gradient_field().grad[slices][mask]     # (n, m, N)
    cell = mp.h ** mp.m
    scale = r ** (mp.p - mp.m) * cell
    if grad.shape[0] == 0:
        return 0.0, np.eye(m)[:k]

    gram = np.einsum("bin,bjn->ij", grad, grad)
    _, vecs = jacobi_eigh(gram)          # rows, eigenvalues descending
    basis = vecs[::-1].copy()            # ascending: rows 0..k-1 seed the frame

    proj = np.einsum("bjn,kj->bkn", grad, basis)      # (n, m, N)
    half_p = mp.p / 2.0

    def frame_value(sq_sum):
        return float((sq_sum ** half_p).sum() * scale)

    sq_rows = np.einsum("bkn,bkn->bk", proj, proj)
    s_tot = sq_rows[:, :k].sum(axis=1)
    best = frame_value(s_tot)
    if k == m:
        return best, basis

    angles = np.linspace(-np.pi / 2, np.pi / 2, 19)[:-1]
    for _ in range(100):
        before = best
        for i in range(k):
            for j in range(k, m):
                a = proj[:, i, :]
                b = proj[:, j, :]
                aa = np.einsum("bn,bn->b", a, a)
                bb = np.einsum("bn,bn->b", b, b)
                ab = np.einsum("bn,bn->b", a, b)
                others = s_tot - aa

                def obj(theta):
                    c, s_ = np.cos(theta), np.sin(theta)
                    sq = others + c * c * aa + 2 * c * s_ * ab + s_ * s_ * bb
                    return float((np.maximum(sq, 0.0) ** half_p).sum() * scale)

                vals = [obj(t) for t in angles]
                i0 = int(np.argmin(vals))
                lo = angles[i0] - (angles[1] - angles[0])
                hi = angles[i0] + (angles[1] - angles[0])
                gr = (np.sqrt(5.0) - 1) / 2
                c1, c2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
                f1, f2 = obj(c1), obj(c2)
                for _ in range(50):
                    if f1 < f2:
                        hi, c2, f2 = c2, c1, f1
                        c1 = hi - gr * (hi - lo)
                        f1 = obj(c1)
                    else:
                        lo, c1, f1 = c1, c2, f2
                        c2 = lo + gr * (hi - lo)
                        f2 = obj(c2)
                theta = (lo + hi) / 2
                cand = obj(theta)
                if cand < best - 1e-300:
                    c, s_ = np.cos(theta), np.sin(theta)
                    new_a = c * a + s_ * b
                    new_b = -s_ * a + c * b
                    proj[:, i, :] = new_a
                    proj[:, j, :] = new_b
                    row_i = c * basis[i] + s_ * basis[j]
                    row_j = -s_ * basis[i] + c * basis[j]
                    basis[i], basis[j] = row_i, row_j
                    s_tot = s_tot - aa + np.einsum("bn,bn->b", new_a, new_a)
                    best = cand
        if before - best <= 1e-10 * (1.0 + abs(before)):
            break
    return best, basis[:k]


@dataclass(frozen=True)
class StratumQuery:
    """Stratum membership parameters: dimension k, closeness eta, base scale
    r, and the geometric scale ladder (ratio 5 upward from r)."""

    k: int
    eta: float
    r: float
    ladder: tuple

    def __post_init__(self):
        if self.eta <= 0 or self.r <= 0:
            raise MonitorError("eta and r must be positive")
        if not self.ladder:
            raise MonitorError("empty scale ladder")
        lad = tuple(float(s) for s in self.ladder)
        if lad[0] < self.r - 1e-15 or any(b <= a for a, b in zip(lad, lad[1:])):
            raise MonitorError("ladder must increase from r")
        object.__setattr__(self, "ladder", lad)


def make_ladder(r: float, s_max: float, ratio: float = 5.0) -> tuple:
    out = []
    s = r
    while s <= s_max * (1 + 1e-12):
        out.append(s)
        s *= ratio
    return tuple(out)


def stratum_membership(mp: DiscretizedMap, query: StratumQuery, x) -> bool:
    """x belongs to the stratum iff no (eta, k+1)-invariant direction frame
    exists at any ladder scale."""
    if query.k + 1 > mp.m:
        raise MonitorError(f"membership needs k+1 <= m (k={query.k}, m={mp.m})")
    for s in query.ladder:
        value, _ = invariance_defect(mp, x, s, query.k + 1)
        if value < query.eta:
            return False
    return True


# ---------------------------------------------------------------------------
# pinched sets and detection
# ---------------------------------------------------------------------------

def pinched_indices(theta_fn, points: np.ndarray, x, r: float, e_ceiling: float,
                    delta: float, lam: float):
    """Index form of the pinched sets over an arbitrary theta oracle.

    high: points y in B(x, r) with theta(y, lam r) > E - delta
    low:  points y in B(x, r) with theta(y, r) - theta(y, lam r) < delta
    """
    if not 0 < lam < 1:
        raise MonitorError("lam must lie in (0, 1)")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x = np.asarray(x, dtype=float)
    inside = np.where(np.linalg.norm(points - x, axis=1) <= r + 1e-12)[0]
    high = []
    low = []
    ceil_ok = True
    for i in inside:
        t_small = theta_fn(points[i], lam * r)
        t_big = theta_fn(points[i], r)
        if t_big > e_ceiling + 1e-12:
            ceil_ok = False
        if t_small > e_ceiling - delta:
            high.append(i)
        if t_big - t_small < delta:
            low.append(i)
    high = np.asarray(high, dtype=np.intp)
    low = np.asarray(low, dtype=np.intp)
    if ceil_ok and not np.isin(high, low).all():
        raise MonitorError("pinched-set containment violated: high subset of "
                           "low must hold when theta(., r) <= E on the ball")
    return high, low


def pinched_sets(mp: DiscretizedMap, points, x, r: float, e_ceiling: float,
                 delta: float, lam: float, psi: CutoffProfile):
    """(high, low) pinched subsets of ``points`` inside B(x, r); the
    containment high subset-of low is asserted whenever theta(., r) <= E
    holds on the ball."""
    def oracle(y, s):
        return normalized_energy(mp, y, s, psi)
    return pinched_indices(oracle, points, x, r, e_ceiling, delta, lam)


def detect_singular(mp: DiscretizedMap, eps0: float, r: float,
                    psi: CutoffProfile, query_radius: float | None = None,
                    stride: int = 1) -> np.ndarray:
    """All query-net nodes whose theta(x, r) reaches the detector level eps0.

    The query net is the lattice restricted to |x| <= query_radius, thinned
    by ``stride`` per axis.  Used in the contrapositive of the smallness
    criterion: large normalized energy at scale r flags a candidate
    singular point.
    """
    field, admissible = normalized_energy_field(mp, r, psi)
    if query_radius is None:
        query_radius = mp.domain.r_dom - psi.t_b * r
    dom = mp.domain
    pts_norm = np.sqrt(sum(c ** 2 for c in dom.open_coords()))
    sel = admissible & np.broadcast_to(pts_norm <= query_radius + 1e-12,
                                       dom.shape)
    if stride > 1:
        thin = np.zeros(dom.side, dtype=bool)
        thin[(np.arange(dom.side) - dom.n) % stride == 0] = True
        for j in range(dom.m):
            sh = [1] * dom.m
            sh[j] = dom.side
            sel = sel & thin.reshape(sh)
    hits = np.argwhere(sel & (field >= eps0))
    return (hits - dom.n) * dom.h


def homogeneity_radius_search(mp: DiscretizedMap, y, r: float, eta: float,
                              gamma_bar: float, psi: CutoffProfile
                              ) -> float | None:
    """Dyadic search for a radius r_y in [gamma_bar r, r/2] at which the
    one-octave pinching drops below eta; None when no such radius exists."""
    if not 0 < gamma_bar < 0.5:
        raise MonitorError("gamma_bar must lie in (0, 1/2)")
    r_y = r / 2
    while r_y >= gamma_bar * r - 1e-15:
        if pinching(mp, y, 2 * r_y, r_y, psi).value < eta:
            return r_y
        r_y /= 2
    return None


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass
class EnergyProfile:
    center: np.ndarray
    radii: np.ndarray
    theta: np.ndarray
    dtheta_dr: np.ndarray       # central differences on the radii sequence
    rate: np.ndarray            # the closed-form rate at each radius


def energy_profile(mp: DiscretizedMap, x, radii, psi: CutoffProfile
                   ) -> EnergyProfile:
    x = np.asarray(x, dtype=float)
    radii = np.asarray(sorted(float(r) for r in radii))
    if (np.diff(radii) <= 0).any():
        raise MonitorError("radii must be strictly increasing")
    theta = np.array([normalized_energy(mp, x, r, psi) for r in radii])
    rate = np.array([normalized_energy_rate(mp, x, r, psi) for r in radii])
    dtheta = np.gradient(theta, radii, edge_order=1) if len(radii) > 1 \
        else np.zeros_like(theta)
    return EnergyProfile(x, radii, theta, dtheta, rate)
