"""Multiscale coverings of detected sets driven by a normalized-energy oracle.

The engine acts on a finite point set S with an oracle theta(point, scale).
Radii are powers of rho = 5^-kappa down to a target radius r = rho^jhat.
Construction invariants, all enforced exactly:

  * fifth-ball disjointness across every coexisting ball (a global registry
    arbitrates every placement; conflicts are resolved by absorbing the
    point into the conflicting ball when it geometrically contains it, or by
    shrinking the candidate radius -- both preserve all other invariants);
  * full coverage: every point of S is carried by a ball that contains it;
  * drop balls certify, against the oracle at emission time, that every
    carried point drops below the running energy ceiling at one fifth of the
    ball radius;
  * refinement balls (tag W) never survive: they are recursively re-covered
    until everything is an E ball (radius exactly r) or a D ball.

The high/low pinched subsets that drive the case split are always computed
over the geometric intersection of S with the ball, so later bookkeeping
cannot invalidate a recorded case decision.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .jones import BallFamily
from .monitor import CutoffProfile, normalized_energy, normalized_energy_field, \
    invariance_defect, StratumQuery, stratum_membership
from .spans import AffinePlane, greedy_span

_EPS = 1e-12


class CoveringError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# parameters and oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoveringParams:
    """Scale and pinching constants for the covering constructions.

    rho = 5^-kappa, target radius r = rho^jhat, lam fixed at 1/5.  The
    budget constants (c_fat, c_ball, c_round, c_ii) are configuration
    knobs recorded in the assertion log, not derived quantities.
    """

    kappa: int = 1
    jhat: int = 2
    gamma: float = 0.05
    delta: float = 0.05
    delta0: float = 0.2
    e_ceiling: float = 1.0
    lam_bound: float = 1.0
    eta: float = 1e-3
    k: int = 1
    c_fat: float = 64.0
    c_ball: float = 512.0
    c_round: float = 512.0
    c_ii: float = 80.0

    def __post_init__(self):
        if self.kappa < 1:
            raise CoveringError("kappa must be a positive integer")
        if self.jhat < 1:
            raise CoveringError("jhat must be a positive integer")
        if not 0 < self.delta:
            raise CoveringError("delta must be positive")
        if not 0 < self.gamma:
            raise CoveringError("gamma must be positive")
        if self.e_ceiling > self.lam_bound + _EPS:
            raise CoveringError("energy ceiling exceeds the global bound")

    @property
    def rho(self) -> float:
        return 5.0 ** (-self.kappa)

    @property
    def r_target(self) -> float:
        return self.rho ** self.jhat

    @property
    def lam(self) -> float:
        return 0.2


class MapThetaOracle:
    """theta oracle backed by a discretized map; results are memoized."""

    def __init__(self, mp, psi: CutoffProfile):
        self.map = mp
        self.psi = psi
        self._cache: dict = {}

    def supports(self, point) -> bool:
        return True

    def __call__(self, point, scale: float) -> float:
        key = (tuple(np.asarray(point, dtype=float)), float(scale))
        if key not in self._cache:
            self._cache[key] = normalized_energy(self.map, point, scale, self.psi)
        return self._cache[key]


class SyntheticOracle:
    """Wrap a plain callable (point, scale) -> value as an oracle."""

    def __init__(self, fn, supported=None):
        self.fn = fn
        self.supported = supported

    def supports(self, point) -> bool:
        if self.supported is None:
            return True
        return bool(self.supported(np.asarray(point, dtype=float)))

    def __call__(self, point, scale: float) -> float:
        return float(self.fn(np.asarray(point, dtype=float), float(scale)))


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class Ball:
    index: int
    center: np.ndarray
    radius: float
    tag: str                     # "E", "D", "G", "W", "seed"
    step: int
    parent: int | None
    e_ceiling: float
    plane: AffinePlane | None = None
    carried: list = field(default_factory=list)
    prop4: str = "unchecked"     # "verified" | "failed" | "unverifiable"
    round_index: int = 0
    w_depth: int = 0             # number of W ancestors (refinement depth)
    note: str = ""

    def contains(self, point) -> bool:
        return float(np.linalg.norm(self.center - point)) <= self.radius + _EPS


class CoveringState:
    """All balls ever finalized plus the bookkeeping shared by the stages."""

    def __init__(self, points: np.ndarray, params: CoveringParams, oracle):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.params = params
        self.oracle = oracle
        self.balls: list[Ball] = []
        self.live: set[int] = set()           # indices registered for disjointness
        self.assigned = np.full(self.points.shape[0], -1, dtype=np.int64)
        self.log: list[str] = []
        self.w_created: dict = {}             # w_depth -> sum of r^k ever created
        self._order = np.lexsort(self.points.T[::-1]) if self.points.size else \
            np.zeros(0, dtype=np.intp)

    # -- registry ----------------------------------------------------------

    def new_ball(self, center, radius, tag, step, parent, e_ceiling,
                 plane=None, round_index=0, w_depth=0) -> Ball:
        ball = Ball(len(self.balls), np.asarray(center, dtype=float),
                    float(radius), tag, step, parent, e_ceiling, plane,
                    round_index=round_index, w_depth=w_depth)
        self.balls.append(ball)
        self.live.add(ball.index)
        if tag == "W":
            self.w_created.setdefault(w_depth, 0.0)
            self.w_created[w_depth] += float(radius) ** max(self.params.k, 0)
        return ball

    def retire(self, ball: Ball):
        self.live.discard(ball.index)
        for idx in ball.carried:
            if self.assigned[idx] == ball.index:
                self.assigned[idx] = -1
        ball.carried = []
        ball.tag = "retired"

    def fifth_conflict(self, center, radius: float) -> Ball | None:
        center = np.asarray(center, dtype=float)
        best = None
        for bi in self.live:
            b = self.balls[bi]
            if np.linalg.norm(b.center - center) < (radius + b.radius) / 5.0 - _EPS:
                if best is None or b.index < best.index:
                    best = b
        return best

    def assign(self, idx: int, ball: Ball):
        ball.carried.append(int(idx))
        self.assigned[idx] = ball.index

    # -- views -------------------------------------------------------------

    def family(self, tags=None) -> BallFamily:
        sel = [b for b in self.balls if b.index in self.live
               and (tags is None or b.tag in tags)]
        if not sel:
            return BallFamily(np.zeros((0, self.points.shape[1])), np.zeros(0), [])
        return BallFamily(np.array([b.center for b in sel]),
                          np.array([b.radius for b in sel]),
                          [b.tag for b in sel])

    def live_balls(self, tags=None) -> list:
        return [b for b in self.balls if b.index in self.live
                and (tags is None or b.tag in tags)]

    def sum_rk(self, k: int, tags=None) -> float:
        return float(sum(b.radius ** k for b in self.live_balls(tags)))

    def check_coverage(self):
        for idx in range(self.points.shape[0]):
            bi = int(self.assigned[idx])
            if bi < 0 or bi not in self.live:
                raise CoveringError(f"point {idx} left uncovered")
            if not self.balls[bi].contains(self.points[idx]):
                raise CoveringError(f"point {idx} assigned to a ball that "
                                    f"does not contain it")

    def check_fifth_disjoint(self):
        self.family().check_disjoint(0.2)

    def to_dict(self) -> dict:
        rows = []
        for b in self.balls:
            if b.index not in self.live:
                continue
            rows.append({
                "index": b.index,
                "center": [float(c) for c in b.center],
                "radius": b.radius,
                "tag": b.tag,
                "step": b.step,
                "parent": b.parent,
                "round": b.round_index,
                "carried": sorted(int(i) for i in b.carried),
                "prop4": b.prop4,
            })
        return {"balls": rows, "log": list(self.log)}


# ---------------------------------------------------------------------------
# placement
# ---------------------------------------------------------------------------

def _geometric_inside(state: CoveringState, center, radius: float) -> np.ndarray:
    d = np.linalg.norm(state.points - np.asarray(center, dtype=float), axis=1)
    return np.where(d <= radius + _EPS)[0]


def _high_pinch_indices(state: CoveringState, center, radius: float,
                        e_ceiling: float) -> np.ndarray:
    """Geometric high-pinch subset: theta(y, lam rho radius) > E - delta."""
    p = state.params
    scale = p.lam * p.rho * radius
    idx = _geometric_inside(state, center, radius)
    out = [i for i in idx
           if state.oracle(state.points[i], scale) > e_ceiling - p.delta]
    return np.asarray(out, dtype=np.intp)


def _drop_ok(state: CoveringState, idx: int, radius: float,
             e_ceiling: float) -> bool:
    p = state.params
    val = state.oracle(state.points[idx], radius / 5.0)
    return val <= e_ceiling - p.delta + 1e-15


def _absorb_allowed(state: CoveringState, ball: Ball, idx: int) -> bool:
    if ball.tag == "D":
        return _drop_ok(state, idx, ball.radius, ball.e_ceiling)
    return True


def _place_cover(state: CoveringState, indices, radius: float, want_tag: str,
                 parent: Ball | None, step: int, e_ceiling: float,
                 plane: AffinePlane | None = None, round_index: int = 0,
                 w_depth: int = 0, work_queue: deque | None = None) -> list:
    """Cover the listed points with fifth-disjoint balls of the given radius.

    Centers sit on the plane projection when a plane is supplied and close
    enough, else at the points themselves.  Conflicts with registered balls
    are resolved by absorption (when the conflicting ball contains the point
    and accepts it) or by shrinking the candidate radius by rho, never going
    below the target radius; at the target radius the candidate is an E
    ball.  Returns the newly created balls.
    """
    p = state.params
    new_balls: list = []
    pool = [int(i) for i in indices]
    pool_set = set(pool)
    order = [int(i) for i in state._order if int(i) in pool_set]

    for idx in order:
        if state.assigned[idx] >= 0:
            continue
        y = state.points[idx]
        rad = float(radius)
        guard = 0
        while True:
            guard += 1
            if guard > 64:
                raise CoveringError("placement failed to terminate (logic bug)")
            tag = want_tag if rad > p.r_target * (1 + 1e-9) else "E"
            center = y
            if plane is not None and abs(rad - radius) < _EPS * max(radius, 1):
                proj = plane.project(y)[0]
                if np.linalg.norm(proj - y) <= 0.6 * rad:
                    center = proj
            conflict = state.fifth_conflict(center, rad)
            if conflict is None:
                ball = state.new_ball(center, rad, tag, step,
                                      None if parent is None else parent.index,
                                      e_ceiling, round_index=round_index,
                                      w_depth=w_depth)
                for j in order:
                    if state.assigned[j] >= 0:
                        continue
                    if np.linalg.norm(state.points[j] - center) <= rad + _EPS:
                        if tag == "D" and not _drop_ok(state, j, rad, e_ceiling):
                            continue
                        state.assign(j, ball)
                if state.assigned[idx] < 0:
                    # point missed its own ball (drop-ineligible): center on it
                    if tag == "D":
                        raise CoveringError(
                            f"energy drop fails for point {idx} in a drop ball "
                            f"at radius {rad:.6g} (ceiling {e_ceiling:.6g})")
                    state.assign(idx, ball)
                new_balls.append(ball)
                if work_queue is not None and tag in ("W", "seed"):
                    work_queue.append(ball.index)
                break
            if conflict.contains(y) and _absorb_allowed(state, conflict, idx):
                state.assign(idx, conflict)
                break
            if conflict.contains(y) and conflict.tag == "D":
                # containing drop ball rejects the point: re-open it for
                # refinement so every invariant stays intact
                conflict.tag = "W"
                state.assign(idx, conflict)
                state.log.append(f"ball {conflict.index} reopened as W: "
                                 f"point {idx} fails its drop condition")
                if work_queue is not None:
                    work_queue.append(conflict.index)
                break
            if rad <= p.r_target * (1 + 1e-9):
                raise CoveringError("unresolvable conflict at the target "
                                    "radius (logic bug)")
            rad *= p.rho   # shrunk candidates sit on their point (plane gate
            #                below only fires at the nominal radius)
    return new_balls


# ---------------------------------------------------------------------------
# first covering
# ---------------------------------------------------------------------------

def _radius_exponent(params: CoveringParams, radius: float) -> int:
    e = round(np.log(radius) / np.log(params.rho))
    if abs(params.rho ** e - radius) > 1e-9 * radius:
        raise CoveringError(f"radius {radius} is not a power of rho")
    return int(e)


def _check_prop4(state: CoveringState, ball: Ball):
    """Record whether theta(center, r/5) > E - gamma holds at the center."""
    p = state.params
    supports = getattr(state.oracle, "supports", None)
    if supports is not None and not supports(ball.center):
        ball.prop4 = "unverifiable"
        return
    try:
        val = state.oracle(ball.center, ball.radius / 5.0)
    except Exception:
        ball.prop4 = "unverifiable"
        return
    ball.prop4 = "verified" if val > ball.e_ceiling - p.gamma else "failed"
    if ball.prop4 == "failed":
        state.log.append(f"ball {ball.index}: center pinching floor "
                         f"theta > E - gamma not met ({val:.6g})")


def _refine_first(state: CoveringState, root: Ball, e_ceiling: float,
                  g_sink: list, round_index: int = 0):
    """Run the case-A/case-B recursion below ``root``.

    Case A balls become G (they keep the partial span as their plane);
    case B re-covers with radius-rho children until the target radius, where
    everything is E.  Newly produced G-ball indices are appended to g_sink.
    """
    p = state.params
    queue: deque = deque([root.index])
    while queue:
        ball = state.balls[queue.popleft()]
        if ball.index not in state.live:
            continue
        if ball.radius <= p.r_target * (1 + 1e-9):
            ball.tag = "E"
            continue
        high = _high_pinch_indices(state, ball.center, ball.radius, e_ceiling)
        rho_eff = p.rho * ball.radius / 5.0
        chosen, plane = greedy_span(state.points[high], rho_eff, p.k)
        if plane is not None and len(chosen) == p.k + 1:
            # case B: the high-pinch set spans a k-plane effectively
            if len(high):
                far = np.sum(plane.distance(state.points[high]) > rho_eff + 1e-9)
                if far:
                    state.log.append(
                        f"ball {ball.index}: {int(far)} high-pinch points "
                        f"outside the case-B plane fattening")
            carried = list(ball.carried)
            state.retire(ball)
            children = _place_cover(state, carried, p.rho * ball.radius,
                                    "seed", ball, ball.step + 1, e_ceiling,
                                    plane=plane, round_index=round_index,
                                    w_depth=ball.w_depth)
            for ch in children:
                _check_prop4(state, ch)
                if ch.tag != "E":
                    queue.append(ch.index)
        else:
            # case A: the high-pinch set hugs a lower-dimensional plane
            v_plane = plane if plane is not None else AffinePlane(
                ball.center, np.zeros((0, state.points.shape[1])))
            if len(high):
                bad = np.sum(v_plane.distance(state.points[high]) > rho_eff + 1e-9)
                if bad:
                    raise CoveringError("case-A fattening containment "
                                        "violated (greedy span logic bug)")
            ball.tag = "G"
            ball.plane = v_plane
            g_sink.append(ball.index)


def first_covering(points, oracle, params: CoveringParams,
                   root_center=None, root_radius: float = 1.0
                   ) -> CoveringState:
    """Build the first-stage covering of the point set rooted at one ball.

    The returned state holds G balls (pinch-concentrated near a recorded
    plane of dimension < k) and E balls (target radius), pairwise
    fifth-disjoint and jointly covering the set.
    """
    state = CoveringState(points, params, oracle)
    if state.points.shape[0] == 0:
        raise CoveringError("first covering needs a nonempty point set")
    m = state.points.shape[1]
    center = np.zeros(m) if root_center is None else np.asarray(root_center, float)
    _radius_exponent(params, root_radius)

    root = state.new_ball(center, root_radius, "seed", 0, None,
                          params.e_ceiling)
    inside = _geometric_inside(state, center, root_radius)
    if len(inside) != state.points.shape[0]:
        raise CoveringError("point set not contained in the root ball")
    for idx in inside:
        state.assign(int(idx), root)

    g_sink: list = []
    _refine_first(state, root, params.e_ceiling, g_sink)
    state.check_coverage()
    state.check_fifth_disjoint()
    return state


# ---------------------------------------------------------------------------
# second covering
# ---------------------------------------------------------------------------

def _process_g_queue(state: CoveringState, g_indices: list, e_ceiling: float,
                     round_index: int = 0):
    """Second-stage refinement: dissolve every G ball into W (near the
    pinched plane), D (uniform energy drop), and E (target radius) balls,
    recursing on W until none remain."""
    p = state.params
    queue: deque = deque(g_indices)
    while queue:
        ball = state.balls[queue.popleft()]
        if ball.index not in state.live:
            continue
        if ball.tag == "W":
            # re-run the first stage inside, then requeue its G output
            carried = list(ball.carried)
            exp = _radius_exponent(p, ball.radius)
            if ball.radius <= p.r_target * (1 + 1e-9):
                raise CoveringError("W ball at the target radius")
            state.retire(ball)
            sub_root = state.new_ball(ball.center, ball.radius, "seed",
                                      exp, ball.parent, e_ceiling,
                                      round_index=round_index,
                                      w_depth=ball.w_depth)
            for idx in carried:
                if state.assigned[idx] < 0:
                    state.assign(idx, sub_root)
            sub_g: list = []
            _refine_first(state, sub_root, e_ceiling, sub_g,
                          round_index=round_index)
            queue.extend(sub_g)
            continue

        # G ball
        rho_r = p.rho * ball.radius
        carried = list(ball.carried)
        plane = ball.plane
        high = _high_pinch_indices(state, ball.center, ball.radius, e_ceiling)
        state.retire(ball)
        if rho_r <= p.r_target * (1 + 1e-9):
            balls = _place_cover(state, carried, p.r_target, "E", ball,
                                 ball.step + 1, e_ceiling,
                                 round_index=round_index, w_depth=ball.w_depth)
            if len(balls) > p.c_ball:
                state.log.append(f"ball {ball.index}: E-cover count "
                                 f"{len(balls)} exceeds c_ball={p.c_ball}")
            continue

        if len(high) and len(carried):
            d_to_high = np.min(np.linalg.norm(
                state.points[np.asarray(carried)][:, None, :]
                - state.points[high][None, :, :], axis=2), axis=1)
            near = [c for c, d in zip(carried, d_to_high)
                    if d <= rho_r / 5.0 + _EPS]
        else:
            near = []
        w_balls = _place_cover(state, near, rho_r, "W", ball, ball.step + 1,
                               e_ceiling, plane=plane, round_index=round_index,
                               w_depth=ball.w_depth + 1, work_queue=queue)
        budget = p.c_fat * p.rho ** (-(p.k - 1))
        if len(w_balls) > budget:
            state.log.append(f"ball {ball.index}: W-cover count {len(w_balls)} "
                             f"exceeds c_fat rho^-(k-1) = {budget:.3g}")

        remaining = [i for i in carried if state.assigned[i] < 0]
        d_balls = _place_cover(state, remaining, rho_r, "D", ball,
                               ball.step + 1, e_ceiling,
                               round_index=round_index, w_depth=ball.w_depth)
        if len(d_balls) > p.c_ball:
            state.log.append(f"ball {ball.index}: D-cover count exceeds "
                             f"c_ball={p.c_ball}")


def second_covering(points, oracle, params: CoveringParams,
                    first_state: CoveringState) -> CoveringState:
    """Refine a first covering until every ball is E (target radius) or D
    (uniform energy drop); W balls are transient and must all dissolve.

    The first-stage state is extended in place and returned.
    """
    state = first_state
    g_indices = [b.index for b in state.live_balls(("G",))]
    _process_g_queue(state, g_indices, params.e_ceiling)
    if state.live_balls(("W", "seed", "G")):
        raise CoveringError("refinement left non-final balls alive")
    state.check_coverage()
    state.check_fifth_disjoint()
    e_sum = state.sum_rk(params.k, ("E",))
    d_sum = state.sum_rk(params.k, ("D",))
    state.log.append(f"sum r^k: E={e_sum:.6g} D={d_sum:.6g} "
                     f"(series budget c_ii={params.c_ii})")
    for depth in sorted(state.w_created):
        created = state.w_created[depth]
        cap = params.c_ii * (params.c_fat * params.rho) ** depth
        flag = "" if created <= cap else "  EXCEEDED"
        state.log.append(f"W generation {depth}: sum r^k created "
                         f"{created:.6g} vs budget {cap:.6g}{flag}")
    return state


# ---------------------------------------------------------------------------
# stratum covering and Minkowski table
# ---------------------------------------------------------------------------

def detect_stratum_sample(mp, query: StratumQuery, psi: CutoffProfile,
                          stride: int = 2, query_radius: float = 1.0
                          ) -> np.ndarray:
    """Lattice sample of the stratum: a cheap normalized-energy prefilter
    (a directional defect can never exceed theta / psi(1)) followed by the
    exact membership test on the survivors."""
    dom = mp.domain
    floor = query.eta * float(psi.value(np.array([1.0]))[0])
    sel = None
    for s in query.ladder:
        fld, adm = normalized_energy_field(mp, s, psi)
        ok = adm & (fld >= floor)
        sel = ok if sel is None else (sel & ok)
    pts_norm = np.sqrt(sum(c ** 2 for c in dom.open_coords()))
    sel = sel & np.broadcast_to(pts_norm <= query_radius + _EPS, dom.shape)
    if stride > 1:
        thin = np.zeros(dom.side, dtype=bool)
        thin[(np.arange(dom.side) - dom.n) % stride == 0] = True
        for j in range(dom.m):
            sh = [1] * dom.m
            sh[j] = dom.side
            sel = sel & thin.reshape(sh)
    candidates = (np.argwhere(sel) - dom.n) * dom.h
    members = [pt for pt in candidates if stratum_membership(mp, query, pt)]
    if not members:
        return np.zeros((0, dom.m))
    return np.asarray(members)


def stratum_covering(mp, query: StratumQuery, params: CoveringParams,
                     psi: CutoffProfile, sample: np.ndarray | None = None,
                     stride: int = 2):
    """Cover the detected stratum sample by the energy-drop induction.

    Round i re-covers every D ball with a rho-shrunk net and re-runs the
    two-stage construction inside at ceiling Lambda - i delta; the rounds
    stop when no D balls remain (bounded initial energy forces termination).
    Returns (state, final BallFamily, sum of r^k).
    """
    if sample is None:
        sample = detect_stratum_sample(mp, query, psi, stride=stride)
    oracle = MapThetaOracle(mp, psi)
    state = CoveringState(sample, params, oracle)
    m = state.points.shape[1] if state.points.size else mp.m
    if state.points.shape[0] == 0:
        return state, BallFamily(np.zeros((0, m)), np.zeros(0), []), 0.0

    if params.k == 0:
        # dimension-zero stratum: a plain separated net at the target radius
        balls = _place_cover(state, list(range(state.points.shape[0])),
                             params.r_target, "E", None, 0, params.lam_bound)
        state.check_coverage()
        state.check_fifth_disjoint()
        fam = state.family()
        return state, fam, float(sum(b.radius ** params.k for b in balls))

    root = state.new_ball(np.zeros(m), 1.0, "D", 0, None, params.lam_bound)
    for idx in range(state.points.shape[0]):
        state.assign(idx, root)
        if not _drop_ok(state, idx, 1.0, params.lam_bound):
            state.log.append(f"point {idx}: theta(., 1/5) exceeds the global "
                             f"bound Lambda - delta")

    cap = int(np.ceil(params.lam_bound / params.delta)) + 1
    rounds = 0
    while True:
        d_balls = state.live_balls(("D",))
        if not d_balls:
            break
        rounds += 1
        if rounds > cap:
            raise CoveringError(f"round cap {cap} exceeded: oracle "
                                f"inconsistent with the energy induction")
        ceiling = params.lam_bound - rounds * params.delta
        for b0 in sorted(d_balls, key=lambda b: b.index):
            carried = list(b0.carried)
            state.retire(b0)
            if b0.radius <= params.r_target * (1 + 1e-9):
                kept = state.new_ball(b0.center, b0.radius, "E", b0.step,
                                      b0.parent, b0.e_ceiling,
                                      round_index=rounds)
                for idx in carried:
                    if state.assigned[idx] < 0:
                        state.assign(idx, kept)
                continue
            seeds = _place_cover(state, carried, params.rho * b0.radius,
                                 "seed", b0, b0.step + 1, ceiling,
                                 round_index=rounds)
            if len(seeds) > params.c_round:
                state.log.append(f"round {rounds}: shrink cover of ball "
                                 f"{b0.index} used {len(seeds)} balls")
            for sb in seeds:
                if sb.tag == "E":
                    continue
                g_sink: list = []
                _refine_first(state, sb, ceiling, g_sink, round_index=rounds)
                _process_g_queue(state, g_sink, ceiling, round_index=rounds)
        total = state.sum_rk(params.k)
        bound = params.c_ii ** rounds
        state.log.append(f"round {rounds}: sum r^k = {total:.6g} "
                         f"(induction budget {bound:.6g})")
        if total > bound:
            raise CoveringError(f"round {rounds}: sum r^k {total:.6g} exceeds "
                                f"the induction budget {bound:.6g}")

    if state.live_balls(("W", "seed", "G", "D")):
        raise CoveringError("stratum covering terminated with non-final balls")
    state.check_coverage()
    state.check_fifth_disjoint()
    fam = state.family()
    return state, fam, state.sum_rk(params.k)


def minkowski_estimate(points, k: int, radii, m: int, h_count: float,
                       clip_radius: float = 1.0) -> list:
    """Volume of the r-fattening of the set inside the unit ball, normalized
    by r^{m-k}: rows (r, volume, ratio).

    Volume is counted on an independent lattice of spacing ``h_count``
    (cells within distance r of the set, times h^m); radii below 2 h_count
    are rejected as unresolvable.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    radii = [float(r) for r in radii]
    for r in radii:
        if r < 2 * h_count - _EPS:
            raise CoveringError(f"radius {r} below the 2h resolution floor")
    n = int(np.ceil(clip_radius / h_count))
    ax = h_count * np.arange(-n, n + 1)
    grids = np.meshgrid(*([ax] * m), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    nodes = nodes[np.linalg.norm(nodes, axis=1) <= clip_radius + _EPS]
    rows = []
    if points.shape[0] == 0:
        return [(r, 0.0, 0.0) for r in radii]
    tree = cKDTree(points)
    dist, _ = tree.query(nodes, k=1)
    cell = h_count ** m
    for r in radii:
        vol = float(np.count_nonzero(dist <= r + _EPS) * cell)
        rows.append((r, vol, vol / r ** (m - k)))
    return rows
