"""Independent reference implementations used as test oracles."""

import heapq
from itertools import product

import numpy as np
from numpy.polynomial.legendre import leggauss

from kinospline import kernels
from kinospline.splines import blending_tables, eval_span_many
from kinospline.search import cell_code


def quadrature_span_cost(P, l, dt, nodes=24):
    """Gauss-Legendre integral of the squared l-th derivative over a span.

    The integrand is a polynomial of degree <= 2k, so enough nodes make
    the quadrature exact up to roundoff.
    """
    x, w = leggauss(nodes)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    vals = eval_span_many(P, u, l, dt)
    return float(dt * np.sum(wu * np.sum(vals * vals, axis=1)))


def sampled_extrema(P, l, dt, n=200001):
    """Dense-sampling (min, max) per axis of the l-th derivative."""
    us = np.linspace(0.0, 1.0, n)
    vals = eval_span_many(P, us, l, dt)
    return np.column_stack([vals.min(axis=0), vals.max(axis=0)])


def brute_force_distance_field(world):
    """Exact nearest-obstacle-center distances by full scan."""
    occ_pts = world.cell_center(world.occupied_cells())
    idx = np.indices(tuple(world.dims)).reshape(3, -1).T
    centers = world.cell_center(idx)
    out = np.empty(centers.shape[0])
    for i, c in enumerate(centers):
        out[i] = np.sqrt(((occ_pts - c) ** 2).sum(axis=1)).min()
    return out.reshape(tuple(world.dims))


def brute_force_nn(cs, point):
    """Nearest inflated-occupied center or boundary plane by full scan."""
    w = cs.world
    occ_pts = w.cell_center(np.argwhere(cs.occ_inflated))
    best = np.inf
    if occ_pts.size:
        best = float(np.sqrt(((occ_pts - point) ** 2).sum(axis=1)).min())
    lo = w.origin
    hi = lo + w.extent
    for ax in range(3):
        best = min(best, point[ax] - lo[ax], hi[ax] - point[ax])
    return best


def _scan27(positions, last_cell, cs, bounds, dt, lam, l, tab):
    mask = np.empty(27, dtype=np.uint8)
    costs = np.empty(27)
    cells = np.empty((27, 3), dtype=np.int64)
    codes = np.empty(27, dtype=np.int64)
    dims = cs.world.dims
    kernels.successor_scan(
        positions, np.asarray(last_cell, dtype=np.int64), cs.occ_flat, dims,
        np.zeros(3, dtype=np.int64), np.asarray(dims) - 1,
        cs.world.origin, cs.world.cell_sizes, tab.M, tab.cost_mat(l),
        dt, lam, dt ** (1 - 2 * l),
        np.asarray(bounds.v_min, float), np.asarray(bounds.v_max, float),
        np.asarray(bounds.a_min, float), np.asarray(bounds.a_max, float),
        mask, costs, cells, codes)
    return mask, costs, cells


def build_tuple_graph(start_cells, cs, bounds, dt, lam, l):
    """Explicit feasibility-filtered tuple graph reachable from the start.

    Nodes are tuples of cell-code tuples; edges carry the node cost of the
    successor (the shared cost primitive, so costs match the planner bit
    for bit while the graph search itself stays independent).
    """
    world = cs.world
    dims = world.dims
    k1 = start_cells.shape[0]
    tab = blending_tables(k1 - 1)

    def code_of(cells):
        return tuple(int(c) for c in cell_code(cells, dims))

    def decode(codes):
        arr = np.empty((k1, 3), dtype=np.int64)
        nyz = int(dims[1]) * int(dims[2])
        for i, c in enumerate(codes):
            arr[i, 0], rem = divmod(c, nyz)
            arr[i, 1], arr[i, 2] = divmod(rem, int(dims[2]))
        return arr

    start = code_of(start_cells)
    graph = {}
    stack = [start]
    while stack:
        node = stack.pop()
        if node in graph:
            continue
        cells = decode(node)
        pos = world.cell_center(cells)
        mask, costs, ncells = _scan27(pos, cells[-1], cs, bounds, dt, lam, l,
                                      tab)
        succs = []
        for i in range(27):
            if mask[i]:
                child = node[1:] + (int(cell_code(ncells[i], dims)),)
                succs.append((child, float(costs[i])))
                if child not in graph:
                    stack.append(child)
        graph[node] = succs
    return graph, start


def aggregated_dijkstra(graph, start, start_cost, goal_codes, d):
    """Textbook Dijkstra over aggregated keys with representative tuples.

    Keys are the last d codes; each key stores the representative tuple of
    its best-known cost (ties broken toward the lexicographically smallest
    tuple), successors come from the representative via the prebuilt
    graph. Returns (cost to the goal key, expansions) or (None, n).
    """
    goal_key = goal_codes[-d:]
    best = {start[-d:]: (start_cost, start)}
    closed = set()
    heap = [(start_cost, start[-d:])]
    expanded = 0
    while heap:
        g, key = heapq.heappop(heap)
        if key in closed or g > best[key][0]:
            continue
        closed.add(key)
        if key == goal_key:
            return g, expanded
        expanded += 1
        rep = best[key][1]
        for child, cost in graph[rep]:
            ck = child[-d:]
            ng = g + cost
            cur = best.get(ck)
            if cur is None or ng < cur[0]:
                best[ck] = (ng, child)
                heapq.heappush(heap, (ng, ck))
            elif ck not in closed and ng == cur[0] and child < cur[1]:
                best[ck] = (ng, child)
    return None, expanded


def projected_gradient(prob, iters=200000, dykstra=40, tol=1e-12):
    """Long-run projected gradient with Dykstra projections onto the balls."""
    L = float(np.linalg.eigvalsh(prob.H)[-1])
    x = np.zeros(prob.n)
    for _ in range(iters):
        y = x - (prob.H @ x + prob.g) / L
        mem = [np.zeros(3) for _ in prob.balls]
        for _ in range(dykstra):
            for j, b in enumerate(prob.balls):
                sl = slice(3 * b.point, 3 * b.point + 3)
                v = y[sl] + mem[j]
                dvec = v - b.center
                nrm = np.linalg.norm(dvec)
                proj = b.center + dvec * (b.radius / nrm) if nrm > b.radius else v
                mem[j] = v - proj
                y[sl] = proj
        if np.linalg.norm(y - x) < tol * (1.0 + np.linalg.norm(x)):
            return y
        x = y
    return x


def all_axis_patterns(k):
    return list(product((-1, 0, 1), repeat=k))
