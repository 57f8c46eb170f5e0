"""Probabilistic communication graphs and resilience certification.

Robot-to-robot communication succeeds edge-by-edge with a probability read
from a precomputed location-pair field. Deterministic realizations sample
each directed edge independently; (r,s)-robustness of a realization is
checked exhaustively over disjoint node-subset pairs; the probability of
resilience is the chance that a realization is (r,s)-robust, evaluated by
exact enumeration of edge subsets or by Monte Carlo estimation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

ROBUSTNESS_NODE_CAP = 10


class GraphTooLargeError(ValueError):
    """Instance exceeds the exact-computation cap."""


@dataclass(frozen=True)
class CommDescriptor:
    """How a communication field was synthesized (kept for provenance).

    ``p_max`` caps pairwise success probability (baseline packet loss
    anywhere in the environment); self-communication stays certain.
    """

    model: str
    rho: float
    beta: float = 1.0
    zones: tuple = ()
    seed: int = 0
    p_max: float = 1.0


@dataclass(frozen=True, eq=False)
class CommField:
    """Pairwise communication probabilities over all grid locations."""

    prob: np.ndarray
    generator: CommDescriptor


@dataclass(frozen=True, eq=False)
class ProbGraph:
    """Probabilistic digraph induced by robot positions on a CommField."""

    n: int
    positions: tuple[int, ...]
    edge_prob: np.ndarray


@dataclass(frozen=True, eq=False)
class DetGraph:
    """One deterministic realization; adjacency[i, j] is the edge i -> j."""

    n: int
    adjacency: np.ndarray

    def in_masks(self) -> list[int]:
        """Bitmask of in-neighbors per node: bit j of mask i means j -> i."""
        out = []
        for i in range(self.n):
            mask = 0
            for j in range(self.n):
                if self.adjacency[j, i]:
                    mask |= 1 << j
            out.append(mask)
        return out


COMM_MODELS = ("distance-decay", "distance-decay-with-interference-zones")


def synth_comm_field(grid, desc: CommDescriptor) -> CommField:
    """Synthesize pairwise communication probabilities over grid locations.

    Distance decay: p_ij = exp(-d(i,j)^2 / (2 rho^2)). Interference zones
    multiply p_ij by beta whenever either endpoint lies inside a zone
    rectangle (x0, y0, x1, y1), inclusive. Self-communication is certain.
    """
    if desc.model not in COMM_MODELS:
        raise ValueError(f"unknown communication model {desc.model!r}")
    if desc.rho <= 0:
        raise ValueError("rho must be positive")
    if not (0.0 < desc.p_max <= 1.0):
        raise ValueError("p_max must lie in (0, 1]")
    coords = grid.coords_array()
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    prob = desc.p_max * np.exp(-d2 / (2.0 * desc.rho**2))
    if desc.model == "distance-decay-with-interference-zones":
        # beta = 0 models a dead zone with no communication at all.
        if not (0.0 <= desc.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")
        in_zone = np.zeros(coords.shape[0], dtype=bool)
        for x0, y0, x1, y1 in desc.zones:
            in_zone |= (
                (coords[:, 0] >= x0) & (coords[:, 0] <= x1)
                & (coords[:, 1] >= y0) & (coords[:, 1] <= y1)
            )
        touched = in_zone[:, None] | in_zone[None, :]
        prob = np.where(touched, desc.beta * prob, prob)
    np.fill_diagonal(prob, 1.0)
    return CommField(prob, desc)


def build_prob_graph(field: CommField, positions) -> ProbGraph:
    pos = [int(p) for p in positions]
    n_loc = field.prob.shape[0]
    if any(p < 0 or p >= n_loc for p in pos):
        raise ValueError("robot position outside the field")
    edge_prob = field.prob[np.ix_(pos, pos)].copy()
    return ProbGraph(len(pos), tuple(pos), edge_prob)


def sample_realization(pg: ProbGraph, rng: np.random.Generator) -> DetGraph:
    """Sample each directed edge independently with its probability.

    A full n x n uniform draw is consumed every call so that realizations
    with the same generator state are coupled monotonically in edge
    probability.
    """
    u = rng.random((pg.n, pg.n))
    adj = u < pg.edge_prob
    np.fill_diagonal(adj, False)
    return DetGraph(pg.n, adj)


@lru_cache(maxsize=None)
def _pair_table(n: int):
    """Subset member indices and unordered disjoint subset pairs for n nodes."""
    full = (1 << n) - 1
    members = [np.array([], dtype=int)] * (full + 1)
    sizes = np.zeros(full + 1, dtype=np.int64)
    for mask in range(1, full + 1):
        mem = [i for i in range(n) if mask >> i & 1]
        members[mask] = np.array(mem, dtype=int)
        sizes[mask] = len(mem)
    pairs = []
    for m1 in range(1, full + 1):
        rest = full & ~m1
        m2 = rest
        while m2:
            if m2 > m1:
                pairs.append((m1, m2))
            m2 = (m2 - 1) & rest
    return members, sizes, pairs


def is_rs_robust(g: DetGraph, r: int, s: int) -> bool:
    """Exhaustive (r,s)-robustness check.

    For every pair of nonempty disjoint subsets S1, S2, with X_S the nodes
    of S having at least r in-neighbors outside S, require |X_S1| = |S1| or
    |X_S2| = |S2| or |X_S1| + |X_S2| >= s. Exact, capped at 10 nodes.
    """
    n = g.n
    if n > ROBUSTNESS_NODE_CAP:
        raise GraphTooLargeError(f"n={n} exceeds exact cap {ROBUSTNESS_NODE_CAP}")
    if r < 1 or s < 1 or s > n:
        raise ValueError(f"require 1 <= r and 1 <= s <= n, got r={r} s={s}")
    in_masks = g.in_masks()
    full = (1 << n) - 1
    members, sizes, pairs = _pair_table(n)
    xcount = [-1] * (full + 1)

    def x_of(mask: int) -> int:
        c = xcount[mask]
        if c < 0:
            outside = full & ~mask
            c = sum(1 for i in members[mask] if (in_masks[i] & outside).bit_count() >= r)
            xcount[mask] = c
        return c

    for m1, m2 in pairs:
        x1 = x_of(m1)
        x2 = x_of(m2)
        if x1 == sizes[m1] or x2 == sizes[m2] or x1 + x2 >= s:
            continue
        return False
    return True


def _batch_rs_robust(in_masks: np.ndarray, n: int, r: int, s: int) -> np.ndarray:
    """Vectorized robustness over R realizations given (R, n) in-neighbor masks."""
    members, sizes, pairs = _pair_table(n)
    full = (1 << n) - 1
    pc = np.array([bin(v).count("1") for v in range(1 << n)], dtype=np.uint8)
    reals = in_masks.shape[0]
    xc = np.zeros((reals, full + 1), dtype=np.int16)
    for mask in range(1, full + 1):
        outside = full & ~mask
        cols = in_masks[:, members[mask]] & outside
        xc[:, mask] = (pc[cols] >= r).sum(axis=1)
    robust = np.ones(reals, dtype=bool)
    for m1, m2 in pairs:
        ok = (xc[:, m1] == sizes[m1]) | (xc[:, m2] == sizes[m2]) \
            | (xc[:, m1] + xc[:, m2] >= s)
        robust &= ok
        if not robust.any():
            break
    return robust


def _uncertain_edges(pg: ProbGraph):
    """Split directed edges into certain in-masks and (u, v, p) uncertain triples."""
    base = np.zeros(pg.n, dtype=np.int64)
    uncertain = []
    for u in range(pg.n):
        for v in range(pg.n):
            if u == v:
                continue
            p = float(pg.edge_prob[u, v])
            if p >= 1.0:
                base[v] |= 1 << u
            elif p > 0.0:
                uncertain.append((u, v, p))
    return base, uncertain


def _masks_from_bits(base: np.ndarray, uncertain, bits: np.ndarray) -> np.ndarray:
    masks = np.tile(base, (bits.shape[0], 1))
    for e, (u, v, _) in enumerate(uncertain):
        masks[:, v] |= bits[:, e].astype(np.int64) << u
    return masks


EXACT_EDGE_CAP = 20


@dataclass(frozen=True)
class PrResult:
    value: float
    std_error: float
    method: str


def prob_resilience(
    pg: ProbGraph,
    r: int,
    s: int,
    method: str = "exact",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> PrResult:
    """Probability that a realization of ``pg`` is (r,s)-robust.

    ``exact`` enumerates all subsets of the edges with probability strictly
    inside (0, 1), weighting each realization by its product probability;
    it refuses instances with more than 20 such edges. ``monte_carlo``
    returns the unbiased frequency estimate over ``samples`` realizations
    with its binomial standard error.
    """
    base, uncertain = _uncertain_edges(pg)
    k = len(uncertain)
    if method == "exact":
        if k > EXACT_EDGE_CAP:
            raise GraphTooLargeError(
                f"{k} uncertain edges exceed the exact cap {EXACT_EDGE_CAP}"
            )
        codes = np.arange(1 << k, dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(k)) & 1).astype(np.uint8)
        masks = _masks_from_bits(base, uncertain, bits)
        robust = _batch_rs_robust(masks, pg.n, r, s)
        if k == 0:
            return PrResult(float(robust[0]), 0.0, "exact")
        p = np.array([p for _, _, p in uncertain])
        logw = bits @ np.log(p) + (1 - bits) @ np.log1p(-p)
        value = float(np.exp(logw) @ robust)
        return PrResult(value, 0.0, "exact")

    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if rng is None:
        raise ValueError("monte_carlo requires an rng")
    p = np.array([p for _, _, p in uncertain])
    bits = (rng.random((samples, k)) < p).astype(np.uint8)
    if 0 < k <= 16:
        # Realizations repeat heavily at small edge counts; evaluate each
        # distinct realization once and weight by its frequency.
        pows = (1 << np.arange(k)).astype(np.int64)
        codes = bits.astype(np.int64) @ pows
        uniq, counts = np.unique(codes, return_counts=True)
        ubits = ((uniq[:, None] >> np.arange(k)) & 1).astype(np.uint8)
        robust = _batch_rs_robust(_masks_from_bits(base, uncertain, ubits), pg.n, r, s)
        hits = int(counts @ robust)
    else:
        robust = _batch_rs_robust(_masks_from_bits(base, uncertain, bits), pg.n, r, s)
        hits = int(robust.sum())
    value = hits / samples
    stderr = float(np.sqrt(value * (1.0 - value) / samples))
    return PrResult(value, stderr, "monte_carlo")


@dataclass(frozen=True)
class MeetingSelection:
    subarea_index: int
    mean_pr: float
    positions: tuple[int, ...]
    per_subarea: tuple


def select_meeting_subarea(
    area_subareas,
    field: CommField,
    n: int,
    r: int,
    s: int,
    placements: int = 10,
    rng: np.random.Generator | None = None,
    pr_samples: int = 2000,
) -> MeetingSelection:
    """Pick the subarea with the highest expected probability of resilience.

    Each viable subarea is scored with the mean P_r over ``placements``
    random distinct n-robot placements inside it; ties break toward the
    lowest subarea index. Returns the winning index, its score, and the
    single placement that scored best inside it (used as the rendezvous
    assignment). Subareas smaller than n robots are skipped.
    """
    if placements < 1:
        raise ValueError("placements must be >= 1")
    if rng is None:
        raise ValueError("select_meeting_subarea requires an rng")
    per_subarea = []
    best_idx, best_mean, best_positions = -1, -np.inf, None
    for idx, sub in enumerate(area_subareas):
        if len(sub) < n:
            per_subarea.append(None)
            continue
        sub_arr = np.asarray(sub, dtype=int)
        prs = []
        top_pr, top_pos = -np.inf, None
        for _ in range(placements):
            pos = rng.choice(sub_arr, size=n, replace=False)
            pg = build_prob_graph(field, pos)
            k = len(_uncertain_edges(pg)[1])
            if k <= 12:
                pr = prob_resilience(pg, r, s, method="exact").value
            else:
                pr = prob_resilience(
                    pg, r, s, method="monte_carlo", samples=pr_samples, rng=rng
                ).value
            prs.append(pr)
            if pr > top_pr:
                top_pr, top_pos = pr, tuple(int(x) for x in pos)
        mean_pr = float(np.mean(prs))
        per_subarea.append(mean_pr)
        if mean_pr > best_mean:
            best_idx, best_mean, best_positions = idx, mean_pr, top_pos
    if best_idx < 0:
        raise ValueError(f"no subarea can host {n} robots")
    return MeetingSelection(best_idx, best_mean, best_positions, tuple(per_subarea))
