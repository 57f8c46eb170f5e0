"""Gaussian-process machinery for scalar fields on grid worlds.

Zero-mean GPs with a squared-exponential covariance over grid cell centers:

    k(u, v) = s^2 * exp(-|u - v|^2 / (2 * l^2))

with signal amplitude ``s`` and length scale ``l``. Observation noise is
absorbed into a jitter term added to the diagonal of evidence covariance
blocks (default ``1e-6 * s^2``), which doubles as the numerical floor for
entropy and information-gain computations.

Entropies are in nats and computed from log-determinants of symmetric
factorizations. The conditional forms add the jitter to the conditioning
block only, so the Gaussian chain rule holds to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

LOG_2PI_E = math.log(2.0 * math.pi) + 1.0

#: Default hyperparameter box for fitting: ((s_lo, s_hi), (l_lo, l_hi)).
DEFAULT_FIT_BOUNDS = ((0.1, 10.0), (0.5, 20.0))

#: Relative jitter added to evidence covariance diagonals.
JITTER_SCALE = 1e-6


class DegenerateCovarianceError(RuntimeError):
    """Covariance block is not positive definite even after jitter."""


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential kernel hyperparameters.

    ``signal_variance`` is the amplitude s (the kernel evaluates to s^2 at
    zero distance); ``length_scale`` is l in grid-distance units.
    """

    signal_variance: float
    length_scale: float

    def __post_init__(self):
        if self.signal_variance <= 0 or self.length_scale <= 0:
            raise ValueError(
                f"hyperparameters must be positive, got s={self.signal_variance} "
                f"l={self.length_scale}"
            )

    def default_jitter(self) -> float:
        return JITTER_SCALE * self.signal_variance**2


def kernel_eval(k: Kernel, u, v) -> float:
    """k(u, v) for two coordinate pairs; Euclidean distance on the grid."""
    du = float(u[0]) - float(v[0])
    dv = float(u[1]) - float(v[1])
    d2 = du * du + dv * dv
    return k.signal_variance**2 * math.exp(-d2 / (2.0 * k.length_scale**2))


def kernel_matrix(k: Kernel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Covariance block between coordinate arrays ``a`` (m,2) and ``b`` (n,2)."""
    d2 = cdist(a, b, metric="sqeuclidean")
    return k.signal_variance**2 * np.exp(-d2 / (2.0 * k.length_scale**2))


@dataclass(frozen=True, eq=False)
class GpModel:
    """Immutable GP over a fixed set of grid locations.

    ``coords`` holds the (N, 2) cell centers for every location id; evidence
    is the ordered pair (``sensed`` ids, ``observations`` values).
    """

    kernel: Kernel
    coords: np.ndarray
    sensed: tuple[int, ...] = ()
    observations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jitter: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "sensed", tuple(int(i) for i in self.sensed))
        object.__setattr__(
            self, "observations", np.asarray(self.observations, dtype=float)
        )
        if len(self.sensed) != len(set(self.sensed)):
            raise ValueError("duplicate location ids in evidence")
        if len(self.sensed) != self.observations.shape[0]:
            raise ValueError(
                f"{len(self.sensed)} sensed ids vs "
                f"{self.observations.shape[0]} observations"
            )
        if self.jitter is None:
            object.__setattr__(self, "jitter", self.kernel.default_jitter())
        if self.jitter <= 0:
            raise ValueError("jitter must be positive")

    @property
    def n_locations(self) -> int:
        return self.coords.shape[0]

    def with_kernel(self, kernel: Kernel) -> "GpModel":
        return GpModel(kernel, self.coords, self.sensed, self.observations)

    def with_evidence(self, sensed, observations) -> "GpModel":
        return GpModel(self.kernel, self.coords, tuple(sensed), observations, self.jitter)


def _evidence_chol(gp: GpModel, ids: np.ndarray):
    """Cholesky of K(ids, ids) + jitter*I, or raise DegenerateCovarianceError."""
    pts = gp.coords[ids]
    k = kernel_matrix(gp.kernel, pts, pts)
    k[np.diag_indices_from(k)] += gp.jitter
    try:
        return cho_factor(k, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError(f"evidence block of size {len(ids)}") from exc


def posterior(gp: GpModel, targets) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at ``targets`` given the model's evidence.

    Zero prior mean; variance of an unseen target equals k(y, y) and shrinks
    toward zero (at the jitter scale) for observed targets.
    """
    targets = np.asarray(list(targets), dtype=int)
    if targets.size == 0:
        raise ValueError("targets must be nonempty")
    if targets.min() < 0 or targets.max() >= gp.n_locations:
        raise ValueError("target id out of range")
    prior_var = np.full(targets.size, gp.kernel.signal_variance**2)
    if not gp.sensed:
        return np.zeros(targets.size), prior_var
    ev = np.asarray(gp.sensed, dtype=int)
    chol = _evidence_chol(gp, ev)
    cross = kernel_matrix(gp.kernel, gp.coords[targets], gp.coords[ev])
    sol = cho_solve(chol, cross.T)
    mean = cross @ cho_solve(chol, gp.observations)
    var = prior_var - np.einsum("ij,ji->i", cross, sol)
    return mean, var


def entropy(gp: GpModel, subset, given=()) -> float:
    """Differential entropy (nats) of ``subset`` under the GP prior.

    Conditioning stacks the model's evidence with any extra ``given`` ids.
    The jittered covariance of the subset gives 0.5*ln((2*pi*e)^|B| det C).
    Empty subsets carry zero entropy.
    """
    ids = np.asarray(sorted(set(int(i) for i in subset)), dtype=int)
    if ids.size == 0:
        return 0.0
    if ids.min() < 0 or ids.max() >= gp.n_locations:
        raise ValueError("subset id out of range")
    cond = sorted(set(gp.sensed) | set(int(i) for i in given))
    pts = gp.coords[ids]
    cov = kernel_matrix(gp.kernel, pts, pts)
    if cond:
        cv = np.asarray(cond, dtype=int)
        chol = _evidence_chol(gp, cv)
        cross = kernel_matrix(gp.kernel, pts, gp.coords[cv])
        cov -= cross @ cho_solve(chol, cross.T)
    cov[np.diag_indices_from(cov)] += gp.jitter
    try:
        lo = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError(
            f"degenerate covariance for subset of size {ids.size}"
        ) from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(lo))))
    return 0.5 * (ids.size * LOG_2PI_E + logdet)


def mutual_information(gp: GpModel, placed) -> float:
    """Entropy reduction of unplaced locations from sensing ``placed``.

    MI(A) = EN(L - A) - EN((L - A) | A), both terms conditioned on the
    model's evidence. Zero for an empty A and for A covering the grid.
    """
    placed = set(int(i) for i in placed)
    if placed and (min(placed) < 0 or max(placed) >= gp.n_locations):
        raise ValueError("placed id out of range")
    rest = [i for i in range(gp.n_locations) if i not in placed]
    if not placed or not rest:
        return 0.0
    return entropy(gp, rest) - entropy(gp, rest, given=placed)


def mi_gain_map(gp: GpModel, placed, candidates) -> np.ndarray:
    """Greedy mutual-information gain for each candidate sensing location.

    The gain of candidate y against placements A is

        0.5 * ln( var(y | A) / var(y | L - A - {y}) )

    with both conditionals including the model evidence and the jitter
    floor. The argmax over candidates matches the argmax of
    ``mutual_information(A + {y}) - mutual_information(A)``. Candidates
    whose complement-conditioned variance falls below the jitter floor are
    fully determined and score zero.
    """
    cand = np.asarray(list(candidates), dtype=int)
    if cand.size == 0:
        return np.zeros(0)
    placed = set(int(i) for i in placed)
    if placed & set(cand.tolist()):
        raise ValueError("candidate already placed")
    j = gp.jitter
    s2 = gp.kernel.signal_variance**2

    # Numerator: variance given placed + evidence.
    num_cond = sorted(placed | set(gp.sensed))
    if num_cond:
        cv = np.asarray(num_cond, dtype=int)
        chol = _evidence_chol(gp, cv)
        cross = kernel_matrix(gp.kernel, gp.coords[cand], gp.coords[cv])
        num = s2 + j - np.einsum("ij,ji->i", cross, cho_solve(chol, cross.T))
    else:
        num = np.full(cand.size, s2 + j)

    # Denominator: variance given everything except placed and the candidate
    # itself. One factorization of the complement block serves all
    # candidates: the jittered conditional variance of coordinate c within
    # block W is 1 / [(K_WW + jitter*I)^{-1}]_cc.
    w = sorted((set(range(gp.n_locations)) - placed) | set(gp.sensed))
    w_index = {loc: i for i, loc in enumerate(w)}
    wv = np.asarray(w, dtype=int)
    chol_w = _evidence_chol(gp, wv)
    pos = np.asarray([w_index[int(c)] for c in cand], dtype=int)
    unit = np.zeros((len(w), cand.size))
    unit[pos, np.arange(cand.size)] = 1.0
    inv_diag = cho_solve(chol_w, unit)[pos, np.arange(cand.size)]
    den = 1.0 / inv_diag

    gains = 0.5 * np.log(num / den)
    gains[(den - j) < j] = 0.0
    return gains


def mi_gain(gp: GpModel, placed, candidate: int) -> float:
    """Greedy MI gain of a single candidate; see ``mi_gain_map``."""
    return float(mi_gain_map(gp, placed, [int(candidate)])[0])


def log_marginal_likelihood(
    points: np.ndarray, values: np.ndarray, log_params: np.ndarray
) -> tuple[float, np.ndarray]:
    """Zero-mean LML of observations and its gradient in (ln s, ln l).

    The covariance is s^2 * (E + 1e-6 I) with E the unit-amplitude
    squared-exponential matrix, matching the model's jitter convention.
    Returns (-inf, zeros) when the covariance fails to factorize.
    """
    points = np.asarray(points, dtype=float)
    z = np.asarray(values, dtype=float)
    log_s, log_l = float(log_params[0]), float(log_params[1])
    m = z.shape[0]
    d2 = cdist(points, points, metric="sqeuclidean")
    s2 = math.exp(2.0 * log_s)
    ell2 = math.exp(2.0 * log_l)
    e = np.exp(-d2 / (2.0 * ell2))
    k = s2 * (e + JITTER_SCALE * np.eye(m))
    try:
        chol = cho_factor(k, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros(2)
    alpha = cho_solve(chol, z)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    lml = -0.5 * float(z @ alpha) - 0.5 * logdet - 0.5 * m * math.log(2.0 * math.pi)
    # d k / d ln s = 2 k, so that term reduces to z' alpha - m.
    g_s = float(z @ alpha) - m
    dk_l = s2 * e * (d2 / ell2)
    k_inv_dk = cho_solve(chol, dk_l)
    g_l = 0.5 * (float(alpha @ dk_l @ alpha) - float(np.trace(k_inv_dk)))
    return lml, np.array([g_s, g_l])


@dataclass(frozen=True)
class FitResult:
    kernel: Kernel
    degenerate: bool
    log_marginal: float


# Fixed pairing of length-scale levels to amplitude levels for the
# log-space Latin-grid multi-starts.
_LATIN_PERM = (5, 2, 7, 0, 3, 6, 1, 4)


def fit_hyperparams(
    points, values, init: Kernel | None = None, bounds=DEFAULT_FIT_BOUNDS
) -> FitResult:
    """Maximize the log marginal likelihood over (s, l) within ``bounds``.

    Gradient ascent (L-BFGS-B on the negated objective) over log-parameters
    from the init point plus 8 starts on a log-space Latin grid. If no start
    improves on the init likelihood the init kernel is returned with the
    ``degenerate`` flag set.
    """
    points = np.asarray(points, dtype=float)
    z = np.asarray(values, dtype=float)
    if points.shape[0] != z.shape[0]:
        raise ValueError("points and values length mismatch")
    if points.shape[0] < 2:
        raise ValueError("need at least 2 measurements")
    if np.unique(points, axis=0).shape[0] != points.shape[0]:
        raise ValueError("measurements must be at distinct locations")
    (s_lo, s_hi), (l_lo, l_hi) = bounds
    if s_lo <= 0 or l_lo <= 0 or s_lo >= s_hi or l_lo >= l_hi:
        raise ValueError(f"invalid bounds {bounds}")
    if init is None:
        init = Kernel(math.sqrt(s_lo * s_hi), math.sqrt(l_lo * l_hi))

    log_box = np.log([[s_lo, s_hi], [l_lo, l_hi]])
    x_init = np.clip(np.log([init.signal_variance, init.length_scale]),
                     log_box[:, 0], log_box[:, 1])
    lml_init, _ = log_marginal_likelihood(points, z, x_init)

    starts = [x_init]
    for i, pi in enumerate(_LATIN_PERM):
        fs = (i + 0.5) / len(_LATIN_PERM)
        fl = (pi + 0.5) / len(_LATIN_PERM)
        starts.append(np.array([
            log_box[0, 0] + fs * (log_box[0, 1] - log_box[0, 0]),
            log_box[1, 0] + fl * (log_box[1, 1] - log_box[1, 0]),
        ]))

    def neg(x):
        lml, grad = log_marginal_likelihood(points, z, x)
        if not np.isfinite(lml):
            return np.inf, np.zeros(2)
        return -lml, -grad

    best_x, best_lml = x_init, lml_init
    for x0 in starts:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B",
                       bounds=list(map(tuple, log_box)),
                       options={"maxiter": 200, "ftol": 1e-9})
        if np.isfinite(res.fun) and -res.fun > best_lml:
            best_x, best_lml = res.x, -res.fun

    if best_lml <= lml_init + 1e-9:
        return FitResult(init, True, lml_init)

    def snap(value, lo, hi):
        # Bound-pinned optima come back a few ulps inside the box.
        value = float(np.clip(value, lo, hi))
        for bound in (lo, hi):
            if abs(value - bound) <= 1e-9 * bound:
                return bound
        return value

    s, ell = np.exp(best_x)
    return FitResult(
        Kernel(snap(s, s_lo, s_hi), snap(ell, l_lo, l_hi)), False, float(best_lml)
    )


@dataclass(frozen=True, eq=False)
class EnvField:
    """One ground-truth realization of the environment process."""

    values: np.ndarray
    generator_kernel: Kernel
    seed: int


def sample_environment(kernel: Kernel, grid, seed: int) -> EnvField:
    """Draw one zero-mean GP sample over every grid location.

    Deterministic in (kernel, grid shape, seed). On a failed factorization
    the jitter is raised 100x and retried once before giving up.
    """
    coords = grid.coords_array()
    if coords.shape[0] < 1:
        raise ValueError("grid has no locations")
    k = kernel_matrix(kernel, coords, coords)
    jitter = kernel.default_jitter()
    lo = None
    for scale in (1.0, 100.0):
        try:
            lo = np.linalg.cholesky(k + scale * jitter * np.eye(coords.shape[0]))
            break
        except np.linalg.LinAlgError:
            continue
    if lo is None:
        raise DegenerateCovarianceError("environment prior failed to factorize")
    rng = np.random.default_rng(seed)
    values = lo @ rng.standard_normal(coords.shape[0])
    return EnvField(values, kernel, int(seed))
