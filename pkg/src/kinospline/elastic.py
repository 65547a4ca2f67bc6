"""Elastic tube refinement of a searched control point placement.

The free placement is wrapped in a tube of overlapping clearance balls,
each pushed away from its nearest obstacle by binary search, then the
control points are re-optimized inside the tube by a convex QCQP with the
boundary tuples pinned. Safety of the resulting spline is enforced by an
iterative shrinking loop: when a span exits the tube, one extra control
point constrained to the lens of two consecutive balls is inserted and the
problem is re-solved, at most k times per ball gap (k^2 per span).
"""

from dataclasses import dataclass, field

import numpy as np

from . import qcqp
from .splines import SplineDef, blending_tables, check_feasible, eval_span_many, span_cost
from .world import ConfigSpace, VoxelWorld
from .kernels import collision_scan


@dataclass(frozen=True)
class InflationContract:
    """The two inflation levels and the geometry they must satisfy.

    The gap between the search inflation and the tube inflation guarantees
    that consecutive clearance balls overlap; the tube inflation alone
    keeps straight segments between ball centers inside free space.
    """

    delta_bk: float
    delta_elas: float
    h_max: float
    cell_sizes: tuple

    def validate(self) -> None:
        min_c = min(self.cell_sizes)
        if not self.delta_bk - self.delta_elas > self.h_max / 2.0 - min_c:
            raise ValueError("inflation gap too small for tube connectivity")
        if not self.delta_elas >= (np.sqrt(2.0) - 1.0) / 2.0 * self.h_max:
            raise ValueError("tube inflation below the straight-segment bound")

    @staticmethod
    def default(cell_sizes, cert_delta: float = 0.0,
                body_radius: float = 0.0) -> "InflationContract":
        """Contract sized from the grid geometry and a deviation certificate.

        The tube level sits at the straight-segment bound plus a quarter
        cell (collisions the center-based clearances miss are caught by
        the verification loop). The search level carries half a cell
        diagonal plus the certified spline deviation scaled to a Euclidean
        bound across axes, which keeps searched trajectories clear of raw
        obstacles; the connectivity gap is enforced on top.
        """
        cs = tuple(float(c) for c in cell_sizes)
        h_max = float(np.linalg.norm(cs))
        min_c = min(cs)
        delta_elas = (np.sqrt(2.0) - 1.0) / 2.0 * h_max + 0.25 * min_c \
            + body_radius
        gap = max(h_max / 2.0 - min_c, 0.0)
        delta_bk = max(delta_elas + gap,
                       0.5 * h_max + np.sqrt(3.0) * cert_delta + body_radius) \
            + 0.02 * min_c
        return InflationContract(delta_bk, delta_elas, h_max, cs)


@dataclass(frozen=True)
class EoParams:
    """Tube expansion knobs; thresholds default from the map resolution."""

    d_thres: float
    d_infl_tol: float
    d_infl_max: float = 5.0
    d_infl_min: float = 0.0

    @staticmethod
    def default(cell_sizes) -> "EoParams":
        res = float(min(cell_sizes))
        return EoParams(d_thres=0.25 * res, d_infl_tol=res)


@dataclass(frozen=True, eq=False)
class ElasticTube:
    centers: np.ndarray
    radii: np.ndarray
    supports: np.ndarray

    def well_connected(self, slack: float = 0.0) -> bool:
        gaps = np.linalg.norm(np.diff(self.centers, axis=0), axis=1)
        return bool(np.all(gaps <= self.radii[:-1] + self.radii[1:] + slack))

    def contains(self, point) -> bool:
        d = np.linalg.norm(self.centers - np.asarray(point), axis=1)
        return bool(np.any(d <= self.radii))


def tube_expansion(points, cs: ConfigSpace, params: EoParams) -> ElasticTube:
    """Push each clearance ball away from its nearest obstacle.

    Binary search on the push distance, accepting d while the grown ball
    still contains the original one within d_thres; the ball at the final
    accepted distance is re-queried so its radius is a true clearance.
    """
    points = np.asarray(points, dtype=float)
    centers = np.empty_like(points)
    radii = np.empty(points.shape[0])
    supports = np.empty_like(points)
    world = cs.world
    for i, p in enumerate(points):
        n0, r0 = cs.nn_search(p)
        if r0 <= 0.0:
            raise ValueError(f"tube center {p.tolist()} has no clearance")
        nhat = p - n0
        nn = np.linalg.norm(nhat)
        if nn < 1e-12:
            centers[i] = p
            radii[i] = r0
            supports[i] = n0
            continue
        nhat /= nn
        lo = params.d_infl_min
        hi = params.d_infl_max
        while hi - lo > params.d_infl_tol:
            d = 0.5 * (lo + hi)
            cand = p + d * nhat
            if not world.point_in_bounds(cand):
                hi = d
                continue
            _, r = cs.nn_search(cand)
            if abs(r - d - r0) > params.d_thres:
                hi = d
            else:
                lo = d
        q = p + lo * nhat
        nq, rq = cs.nn_search(q)
        centers[i] = q
        radii[i] = rq
        supports[i] = nq
    return ElasticTube(centers=centers, radii=radii, supports=supports)


def assemble_qcqp(balls_per_point, init_points, start_pins, goal_pins,
                  l: int, dt: float, bounds) -> qcqp.QcqpProblem:
    """QCQP over the free points of [start pins, free run, goal pins].

    Objective: summed span control cost of order l (the time term is fixed
    by the placement and drops out). Constraints: the given balls per free
    point, plus derivative-span rows for velocity and acceleration per
    span and axis (sufficient feasibility condition).
    """
    start_pins = np.asarray(start_pins, dtype=float)
    goal_pins = np.asarray(goal_pins, dtype=float)
    init_points = np.asarray(init_points, dtype=float).reshape(-1, 3)
    k = start_pins.shape[0] - 1
    if goal_pins.shape[0] != k + 1:
        raise ValueError("boundary pins must both have k+1 points")
    nf = init_points.shape[0]
    if len(balls_per_point) != nf:
        raise ValueError("need one ball list per free point")
    seq = np.vstack([start_pins, init_points, goal_pins])
    npts = seq.shape[0]
    nspan = npts - k
    tab = blending_tables(k)
    cm = tab.cost_mat(l) * dt ** (1 - 2 * l)

    hseq = np.zeros((npts, npts))
    for j in range(nspan):
        hseq[j:j + k + 1, j:j + k + 1] += cm
    free = np.arange(k + 1, k + 1 + nf)
    fixed = np.concatenate([np.arange(0, k + 1), np.arange(k + 1 + nf, npts)])
    hff = hseq[np.ix_(free, free)]
    hfp = hseq[np.ix_(free, fixed)] @ seq[fixed]

    n = 3 * nf
    H = np.zeros((n, n))
    g = np.zeros(n)
    for a in range(3):
        H[a::3, a::3] = 2.0 * hff
        g[a::3] = 2.0 * hfp[:, a]
    hpp = hseq[np.ix_(fixed, fixed)]
    const = float(np.einsum("ia,ij,ja->", seq[fixed], hpp, seq[fixed]))

    balls = []
    for i, lst in enumerate(balls_per_point):
        for center, radius in lst:
            balls.append(qcqp.BallConstraint(i, np.asarray(center, dtype=float),
                                             float(radius)))

    rows = []
    los = []
    his = []
    blo = {1: np.asarray(bounds.v_min, dtype=float),
           2: np.asarray(bounds.a_min, dtype=float)}
    bhi = {1: np.asarray(bounds.v_max, dtype=float),
           2: np.asarray(bounds.a_max, dtype=float)}
    free_col = {int(p): 3 * i for i, p in enumerate(free)}
    for order in (1, 2):
        S = tab.bound_transform(order, dt)
        for j in range(nspan):
            idx = np.arange(j, j + k + 1)
            free_mask = (idx >= k + 1) & (idx < k + 1 + nf)
            if not free_mask.any():
                continue
            for r in range(k + 1):
                coef = S[r]
                fixed_part = coef[~free_mask] @ seq[idx[~free_mask]]
                for a in range(3):
                    row = np.zeros(n)
                    for c, pt in zip(coef[free_mask], idx[free_mask]):
                        row[free_col[int(pt)] + a] = c
                    rows.append(row)
                    los.append(blo[order][a] - fixed_part[a])
                    his.append(bhi[order][a] - fixed_part[a])

    A = np.array(rows) if rows else None
    lo = np.array(los) if rows else None
    hi = np.array(his) if rows else None
    meta = {"order": l, "dt": dt, "free_points": nf}
    return qcqp.QcqpProblem(H=H, g=g, balls=tuple(balls), A=A, lo=lo, hi=hi,
                            const=const, meta=meta)


def _span_samples(P, dt: float, step: float) -> np.ndarray:
    """Span positions sampled densely enough that arc steps stay under step."""
    n = 16
    while True:
        us = np.linspace(0.0, 1.0, n + 1)
        pts = eval_span_many(P, us, 0, dt)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if seg.max(initial=0.0) <= step or n >= 4096:
            return pts
        n *= 2


def verify_safety(points, k: int, dt: float, ball_map, tube_balls,
                  raw_world: VoxelWorld) -> list:
    """Spans of the sequence that cannot be certified obstacle-free.

    A span whose control points all sit inside one tube ball is safe by the
    convex hull property. Anything else is densely sampled (arc step of a
    quarter cell) against the raw occupancy; spans that hit return in the
    report.
    """
    points = np.asarray(points, dtype=float)
    nspan = points.shape[0] - k
    step = float(min(raw_world.cell_sizes)) / 4.0
    dims = raw_world.dims
    occ_flat = np.ascontiguousarray(raw_world.occ.reshape(-1).astype(np.uint8))
    bad = []
    centers, radii = tube_balls
    for j in range(nspan):
        P = points[j:j + k + 1]
        ball_ids = sorted({b for i in range(j, j + k + 1) for b in ball_map.get(i, ())})
        safe = False
        for b in ball_ids:
            if np.all(np.linalg.norm(P - centers[b], axis=1) <= radii[b]):
                safe = True
                break
        if safe:
            continue
        pts = _span_samples(P, dt, step)
        if collision_scan(pts, occ_flat, dims, raw_world.origin,
                          raw_world.cell_sizes) >= 0:
            bad.append(j)
    return bad


@dataclass(frozen=True, eq=False)
class RefineResult:
    status: str
    points: np.ndarray = None
    spline: SplineDef = None
    tube: ElasticTube = None
    cost: float = np.inf
    initial_cost: float = np.inf
    inserted: int = 0
    iterations: int = 0
    solve_time: float = 0.0
    expand_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "safe"


def refine(free_points, start_pins, goal_pins, cs_elas: ConfigSpace,
           raw_world: VoxelWorld, contract: InflationContract,
           bounds, l: int, dt: float, params: EoParams = None,
           solver_tol: float = 1e-6, solver_max_iter: int = 20000) -> RefineResult:
    """Tube expansion, QCQP solve and the shrinking-insertion loop.

    Returns status safe with the refined spline, or infeasible when the
    solver certifies an empty feasible set or a colliding span has no ball
    gap left to split (each gap accepts at most k insertions, so a span
    absorbs at most k^2 before the loop gives up).
    """
    import time as _time

    contract.validate()
    if params is None:
        params = EoParams.default(cs_elas.world.cell_sizes)
    start_pins = np.asarray(start_pins, dtype=float)
    goal_pins = np.asarray(goal_pins, dtype=float)
    free_points = np.asarray(free_points, dtype=float).reshape(-1, 3)
    k = start_pins.shape[0] - 1

    t0 = _time.perf_counter()
    tube = tube_expansion(free_points, cs_elas, params)
    expand_time = _time.perf_counter() - t0

    initial_seq = np.vstack([start_pins, free_points, goal_pins])
    initial_cost = _seq_cost(initial_seq, k, l, dt)

    # mutable problem state: per free point, its ball ids and origin gap
    centers = [tube.centers[i] for i in range(free_points.shape[0])]
    radii = [float(tube.radii[i]) for i in range(free_points.shape[0])]
    point_balls = [[i] for i in range(free_points.shape[0])]
    init_pts = [free_points[i] for i in range(free_points.shape[0])]
    gap_of_point = list(range(free_points.shape[0]))
    gap_inserts = {}

    inserted = 0
    iterations = 0
    solve_time = 0.0
    warm = None
    while True:
        iterations += 1
        balls_per_point = [[(centers[b], radii[b]) for b in bl] for bl in point_balls]
        problem = assemble_qcqp(balls_per_point, np.asarray(init_pts), start_pins,
                                goal_pins, l, dt, bounds)
        if warm is None:
            warm = np.asarray(init_pts, dtype=float).reshape(-1)
        t0 = _time.perf_counter()
        sol = qcqp.solve(problem, tol=solver_tol, x0=warm,
                         max_iter=solver_max_iter)
        solve_time += _time.perf_counter() - t0
        if sol.status != "optimal":
            # only a converged solve certifies the derivative-bound rows
            return RefineResult(status="infeasible", inserted=inserted,
                                iterations=iterations, solve_time=solve_time,
                                expand_time=expand_time, initial_cost=initial_cost)
        new_free = sol.x.reshape(-1, 3)
        seq = np.vstack([start_pins, new_free, goal_pins])
        ball_map = {k + 1 + i: tuple(bl) for i, bl in enumerate(point_balls)}
        bad = verify_safety(seq, k, dt, ball_map,
                            (np.asarray(centers), np.asarray(radii)), raw_world)
        if not bad:
            # the derivative-bound rows cover every span touching a free
            # point; spans made purely of pins still need the exact check
            for j in range(seq.shape[0] - k):
                if not check_feasible(seq[j:j + k + 1], bounds, dt):
                    return RefineResult(status="infeasible", inserted=inserted,
                                        iterations=iterations,
                                        solve_time=solve_time,
                                        expand_time=expand_time,
                                        initial_cost=initial_cost)
            cost = _seq_cost(seq, k, l, dt)
            spline = SplineDef(k=k, dt=dt, points=seq)
            return RefineResult(status="safe", points=seq, spline=spline,
                                tube=ElasticTube(np.asarray(centers),
                                                 np.asarray(radii),
                                                 tube.supports),
                                cost=cost, initial_cost=initial_cost,
                                inserted=inserted, iterations=iterations,
                                solve_time=solve_time, expand_time=expand_time)
        site = _insertion_site(bad[0], k, point_balls, centers, radii,
                               new_free, gap_of_point, gap_inserts)
        if site is None:
            return RefineResult(status="infeasible", inserted=inserted,
                                iterations=iterations, solve_time=solve_time,
                                expand_time=expand_time, initial_cost=initial_cost)
        pos, ball_a, ball_b, gap = site
        lens_point = _lens_center(centers[ball_a], radii[ball_a],
                                  centers[ball_b], radii[ball_b])
        init_pts.insert(pos + 1, lens_point)
        point_balls.insert(pos + 1, [ball_a, ball_b])
        gap_of_point.insert(pos + 1, gap)
        gap_inserts[gap] = gap_inserts.get(gap, 0) + 1
        inserted += 1
        warm = None


def refine_adaptive(free_points, start_pins, goal_pins, cs_elas, raw_world,
                    contract, bounds, l, dt, params=None, solver_tol=1e-6,
                    solver_max_iter=20000,
                    slow_factors=(1, 2, 4)) -> RefineResult:
    """refine() with knot-count fallbacks for short or abrupt placements.

    The derivative-bound rows are conservative for one-cell-per-knot
    profiles near rest, so a placement that cannot be certified gets its
    cells repeated (same route, more knots) and a bare seam-to-goal hop
    gets one synthesized midpoint. Returns the first certified result, or
    the last failure.
    """
    free_points = np.asarray(free_points, dtype=float).reshape(-1, 3)
    start_pins = np.asarray(start_pins, dtype=float)
    goal_pins = np.asarray(goal_pins, dtype=float)
    if free_points.shape[0] == 0 \
            and not np.allclose(start_pins[-1], goal_pins[0]):
        free_points = 0.5 * (start_pins[-1] + goal_pins[0])[None, :]
    res = None
    for slow in slow_factors:
        if slow > 2 and free_points.shape[0] > 24:
            break  # quadrupling a long placement buys nothing but solve time
        pts = np.repeat(free_points, slow, axis=0) if slow > 1 else free_points
        res = refine(pts, start_pins, goal_pins, cs_elas, raw_world, contract,
                     bounds, l, dt, params=params, solver_tol=solver_tol,
                     solver_max_iter=solver_max_iter)
        if res.ok:
            break
    return res


def _seq_cost(seq, k, l, dt) -> float:
    return float(sum(span_cost(seq[j:j + k + 1], l, dt)
                     for j in range(seq.shape[0] - k)))


def _insertion_site(bad_span, k, point_balls, centers, radii, free_pts,
                    gap_of_point, gap_inserts):
    """Pick the free-point gap to split inside the colliding span.

    Candidates are consecutive free points whose ball sets allow an
    overlapping pair and whose originating gap still has insertion budget
    (k per gap). Among candidates the pair with the widest spacing relative
    to its ball overlap wins (the largest hull excursion risk).
    """
    nf = len(point_balls)
    lo = max(bad_span - (k + 1), 0)
    hi = min(bad_span, nf - 1)
    best = None
    best_score = -np.inf
    for i in range(lo, hi):
        gap = gap_of_point[i]
        if gap_inserts.get(gap, 0) >= k:
            continue
        pair = _overlapping_pair(point_balls[i], point_balls[i + 1],
                                 centers, radii)
        if pair is None:
            continue
        a, b = pair
        spacing = float(np.linalg.norm(free_pts[i + 1] - free_pts[i]))
        overlap = radii[a] + radii[b] - float(np.linalg.norm(centers[b] - centers[a]))
        score = spacing - overlap
        if score > best_score:
            best_score = score
            best = (i, a, b, gap)
    return best


def _overlapping_pair(balls_a, balls_b, centers, radii):
    best = None
    best_overlap = 0.0
    for a in balls_a:
        for b in balls_b:
            if a == b:
                continue
            ov = radii[a] + radii[b] - float(np.linalg.norm(centers[b] - centers[a]))
            if ov > best_overlap:
                best_overlap = ov
                best = (a, b)
    return best


def _lens_center(ca, ra, cb, rb) -> np.ndarray:
    """Center of the intersection disc of two overlapping balls."""
    d = np.linalg.norm(cb - ca)
    if d < 1e-12:
        return np.asarray(ca, dtype=float).copy()
    t = 0.5 + (ra * ra - rb * rb) / (2.0 * d * d)
    t = min(max(t, 0.0), 1.0)
    return ca + t * (cb - ca)
