"""Linear and W-MSR consensus over sampled communication rounds.

Robots agree on GP hyperparameter vectors by iterating local updates over
per-round realizations of the probabilistic communication graph. The W-MSR
update trims up to F extreme neighbor values on each side of a robot's own
state before averaging, which tolerates up to F misbehaving robots on
sufficiently robust graphs; plain linear averaging does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resilience import DetGraph, ProbGraph, is_rs_robust, sample_realization

WELL_BEHAVED = "well_behaved"
MALICIOUS_CONSTANT = "malicious_constant"


@dataclass(frozen=True, eq=False)
class ConsensusState:
    """Per-robot state vectors plus behavior labels and the attack budget F."""

    values: np.ndarray
    behaviors: tuple[str, ...]
    F: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_2d(np.asarray(self.values, float)))
        if self.values.shape[0] != len(self.behaviors):
            raise ValueError("one behavior label per robot required")
        if self.F < 0:
            raise ValueError("F must be >= 0")

    def well_behaved_mask(self) -> np.ndarray:
        return np.array([b == WELL_BEHAVED for b in self.behaviors])


@dataclass
class RoundLog:
    rounds: int
    realized: list[DetGraph]
    converged: bool


def linear_step(own: float, neighbor_values, weights) -> float:
    """Weighted average of own state and in-neighbor states.

    ``weights[0]`` is the self-weight; the rest align with
    ``neighbor_values``. Weights must be strictly positive and sum to one.
    """
    vals = np.concatenate([[own], np.asarray(neighbor_values, float)])
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != vals.shape[0]:
        raise ValueError("need one weight for self plus one per neighbor")
    if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be strictly positive and sum to 1")
    return float(w @ vals)


def wmsr_step(own: float, neighbor_values, F: int) -> float:
    """W-MSR update: trim up to F values strictly above and below own, average rest.

    If fewer than F neighbor values lie strictly above (below) own, all of
    them are removed; values equal to own always survive. Own state plus
    the survivors are averaged with equal weights.
    """
    if F < 0:
        raise ValueError("F must be >= 0")
    vals = sorted(float(v) for v in neighbor_values)
    above = [v for v in vals if v > own]
    below = [v for v in vals if v < own]
    equal = [v for v in vals if v == own]
    if above:
        above = above[: max(0, len(above) - F)]
    if below:
        below = below[min(F, len(below)):]
    survivors = [own] + equal + above + below
    return float(np.mean(survivors))


def run_meeting_consensus(
    state: ConsensusState,
    pg: ProbGraph,
    mode: str,
    eps: float,
    max_rounds: int,
    rng: np.random.Generator,
) -> tuple[ConsensusState, RoundLog]:
    """Iterate consensus rounds over sampled graph realizations.

    Each round samples one realization; well-behaved robots update every
    vector component from their in-neighbors (equal weights for ``linear``,
    trimmed mean for ``wmsr``), malicious robots hold their values constant.
    Stops once the per-component spread across well-behaved robots drops
    below ``eps`` or after ``max_rounds`` rounds.
    """
    if mode not in ("linear", "wmsr"):
        raise ValueError(f"unknown consensus mode {mode!r}")
    if eps <= 0 or max_rounds < 1:
        raise ValueError("need eps > 0 and max_rounds >= 1")
    values = state.values.copy()
    n, dim = values.shape
    if pg.n != n:
        raise ValueError("graph size does not match robot count")
    good = state.well_behaved_mask()
    realized: list[DetGraph] = []
    converged = False
    rounds = 0
    for _ in range(max_rounds):
        g = sample_realization(pg, rng)
        realized.append(g)
        rounds += 1
        new = values.copy()
        for i in range(n):
            if not good[i]:
                continue
            nbrs = np.nonzero(g.adjacency[:, i])[0]
            for c in range(dim):
                if mode == "wmsr":
                    new[i, c] = wmsr_step(values[i, c], values[nbrs, c], state.F)
                else:
                    w = np.full(len(nbrs) + 1, 1.0 / (len(nbrs) + 1))
                    new[i, c] = linear_step(values[i, c], values[nbrs, c], w)
        values = new
        if good.any():
            spread = values[good].max(axis=0) - values[good].min(axis=0)
        else:
            spread = np.zeros(dim)
        if (spread < eps).all():
            converged = True
            break
    out = ConsensusState(values, state.behaviors, state.F)
    return out, RoundLog(rounds, realized, converged)


def count_retransmissions(
    pg: ProbGraph,
    r: int,
    s: int,
    max_rounds: int,
    rng: np.random.Generator,
) -> int:
    """Rounds until the union of sampled realizations is (r,s)-robust.

    Returns the first 1-based round index whose accumulated edge union
    satisfies robustness, or ``max_rounds`` if it never does.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    union = np.zeros((pg.n, pg.n), dtype=bool)
    for t in range(1, max_rounds + 1):
        union |= sample_realization(pg, rng).adjacency
        if is_rs_robust(DetGraph(pg.n, union), r, s):
            return t
    return max_rounds
