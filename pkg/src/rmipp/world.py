"""Discretized 2D grid environments.

A mission world is a 4-connected directed grid graph with per-edge traversal
costs, partitioned into vertical areas (along the direction of motion) and,
within each area, horizontal subareas where robots can rendezvous. Planning
inflates traversed edge costs in place to discourage redundant exploration.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np


class DisconnectedError(RuntimeError):
    """Target not reachable from the source under the current edge set."""


@dataclass
class Path:
    nodes: list[int]
    cost: float

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.nodes[:-1], self.nodes[1:]))


@dataclass
class GridWorld:
    """4-connected grid over ``width x height`` cells.

    Location ids are row-major: ``id = y * width + x``. Edges exist exactly
    between orthogonally adjacent cells, in both directions, with strictly
    positive costs.
    """

    width: int
    height: int
    cost: dict[tuple[int, int], float]
    start_ids: list[int] | None = None
    goal_ids: list[int] | None = None
    areas: list[list[int]] = field(default_factory=list)
    subareas: list[list[list[int]]] = field(default_factory=list)

    @property
    def n_locations(self) -> int:
        return self.width * self.height

    def loc_id(self, x: int, y: int) -> int:
        return y * self.width + x

    def coord(self, loc: int) -> tuple[int, int]:
        return loc % self.width, loc // self.width

    def coords_array(self) -> np.ndarray:
        """(N, 2) float array of cell centers, indexed by location id."""
        xs = np.arange(self.n_locations) % self.width
        ys = np.arange(self.n_locations) // self.width
        return np.column_stack([xs, ys]).astype(float)

    def neighbors(self, loc: int) -> list[int]:
        x, y = self.coord(loc)
        out = []
        if x > 0:
            out.append(loc - 1)
        if x < self.width - 1:
            out.append(loc + 1)
        if y > 0:
            out.append(loc - self.width)
        if y < self.height - 1:
            out.append(loc + self.width)
        return out


def build_grid(width: int, height: int, base_cost: float = 1.0) -> GridWorld:
    """Uniform-cost 4-connected grid; every directed edge costs ``base_cost``."""
    if width < 1 or height < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {width}x{height}")
    if base_cost <= 0:
        raise ValueError(f"base_cost must be positive, got {base_cost}")
    cost: dict[tuple[int, int], float] = {}
    world = GridWorld(width, height, cost)
    for loc in range(width * height):
        for nbr in world.neighbors(loc):
            cost[(loc, nbr)] = base_cost
    return world


def _chunk_sizes(total: int, k: int) -> list[int]:
    # Near-equal split; the first (total mod k) chunks carry one extra cell,
    # so a 25-wide grid splits 9/8/8 for k=3.
    base, rem = divmod(total, k)
    return [base + 1] * rem + [base] * (k - rem)


def partition(world: GridWorld, m: int, f: int) -> GridWorld:
    """Split the grid into ``m`` vertical areas of ``f`` horizontal subareas each.

    Areas are column bands ordered left to right (the natural direction of
    motion); subareas are row bands within an area ordered top to bottom.
    Mutates ``world.areas``/``world.subareas`` and returns the world.
    """
    if m < 1 or f < 1:
        raise ValueError(f"m and f must be >= 1, got m={m} f={f}")
    if m > world.width:
        raise ValueError(f"cannot split width {world.width} into {m} areas")
    if f > world.height:
        raise ValueError(f"cannot split height {world.height} into {f} subareas")

    col_sizes = _chunk_sizes(world.width, m)
    row_sizes = _chunk_sizes(world.height, f)
    areas: list[list[int]] = []
    subareas: list[list[list[int]]] = []
    x0 = 0
    for w in col_sizes:
        cols = range(x0, x0 + w)
        area = [world.loc_id(x, y) for y in range(world.height) for x in cols]
        subs = []
        y0 = 0
        for h in row_sizes:
            subs.append([world.loc_id(x, y) for y in range(y0, y0 + h) for x in cols])
            y0 += h
        areas.append(area)
        subareas.append(subs)
        x0 += w
    world.areas = areas
    world.subareas = subareas
    return world


def dijkstra(world: GridWorld, source: int, reverse: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Single-source shortest distances and predecessors under current costs.

    With ``reverse=True`` edge costs are read against edge direction, so
    ``dist[v]`` is the cost of the cheapest v -> source path. Ties between
    equal-cost predecessors break toward the smallest predecessor id, which
    keeps extracted paths reproducible.
    """
    n = world.n_locations
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=int)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in world.neighbors(u):
            c = world.cost.get((v, u) if reverse else (u, v))
            if c is None:  # edge pruned (tests); intact grids have all edges
                continue
            nd = d + c
            if nd < dist[v] or (nd == dist[v] and not done[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def shortest_path(world: GridWorld, s: int, t: int) -> Path:
    """Minimal-cost path s -> t under current edge costs (Dijkstra)."""
    n = world.n_locations
    if not (0 <= s < n and 0 <= t < n):
        raise ValueError(f"invalid endpoints ({s}, {t}) for {n} locations")
    if s == t:
        return Path([s], 0.0)
    dist, pred = dijkstra(world, s)
    if not np.isfinite(dist[t]):
        raise DisconnectedError(f"no path from {s} to {t}")
    nodes = [t]
    while nodes[-1] != s:
        nodes.append(int(pred[nodes[-1]]))
    nodes.reverse()
    return Path(nodes, float(dist[t]))


def inflate_traversed(world: GridWorld, path: Path, alpha: float) -> GridWorld:
    """Multiply the cost of every edge along ``path`` by ``alpha``.

    Both edge directions are inflated so the corridor is discouraged either
    way. Mutates the world and returns it.
    """
    if alpha <= 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    for a, b in path.edges():
        world.cost[(a, b)] *= alpha
        world.cost[(b, a)] *= alpha
    return world
