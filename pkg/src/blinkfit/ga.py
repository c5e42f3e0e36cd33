"""Unsupervised genetic algorithm over K-means++ clusterings.

Individuals are random subsets of a dwell histogram's (duration,
occurrences) pairs.  Each generation the two live individuals are
clustered (K-means++ seeding, Lloyd refinement), scored by mean silhouette
minus an elitism penalty, and either yield a lifetime estimate from the
tightest cluster of the winner or breed the next pair by clone exchange
and mutation.  Accepted estimates accumulate until their rolling window
stabilizes; an exhausted iteration budget instead returns a weighted blend
of the estimate log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dwell import DwellHistogram, mean_dwell
from .errors import DegenerateClusterError, InsufficientDataError, NoEstimateError
from .estimate import RateEstimate

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class GaConfig:
    """Full hyperparameter set of the genetic algorithm.

    tau_range is the user-mandated strict bound on the lifetime (seconds);
    everything else has conventional defaults.  blend_weights weight the
    (final, mean, mode, median) of the estimate log when the iteration
    budget runs out before the rolling estimate stabilizes.
    """

    tau_range: tuple[float, float]
    k_init: int = 3
    silhouette_threshold: float = 0.6
    subset_fraction: float = 0.7
    mutation_rate: float = 0.05
    elitism_penalty_weight: float = 0.5
    rolling_window: int = 10
    stability_rel_tol: float = 0.02
    max_iterations: int = 500
    blend_weights: tuple[float, float, float, float] = (0.4, 0.2, 0.2, 0.2)
    k_patience: int = 20
    k_max: int = 8
    reassignment_tol: float = 0.0
    movement_tol: float = 1e-9
    kmeans_max_iter: int = 50

    def __post_init__(self):
        lo, hi = self.tau_range
        if not 0 < lo < hi:
            raise ValueError("tau_range must satisfy 0 < lo < hi")
        if self.k_init < 2:
            raise ValueError("k_init must be at least 2")
        if not 0 < self.silhouette_threshold < 1:
            raise ValueError("silhouette_threshold must lie in (0, 1)")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must lie in (0, 1]")
        if not 0 <= self.mutation_rate <= 1:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.elitism_penalty_weight < 0:
            raise ValueError("elitism_penalty_weight must be non-negative")
        if self.rolling_window < 2:
            raise ValueError("rolling_window must be at least 2")
        if min(self.blend_weights) < 0 or not math.isclose(sum(self.blend_weights), 1.0):
            raise ValueError("blend_weights must be non-negative and sum to 1")

    def to_json(self, path) -> None:
        payload = {
            "tau_range_s": list(self.tau_range),
            "k_init": self.k_init,
            "silhouette_threshold": self.silhouette_threshold,
            "subset_fraction": self.subset_fraction,
            "mutation_rate": self.mutation_rate,
            "elitism_penalty_weight": self.elitism_penalty_weight,
            "rolling_window": self.rolling_window,
            "stability_rel_tol": self.stability_rel_tol,
            "max_iterations": self.max_iterations,
            "blend_weights": list(self.blend_weights),
            "k_patience": self.k_patience,
            "k_max": self.k_max,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "GaConfig":
        payload = json.loads(Path(path).read_text())
        return cls(
            tau_range=tuple(payload["tau_range_s"]),
            k_init=payload.get("k_init", 3),
            silhouette_threshold=payload.get("silhouette_threshold", 0.6),
            subset_fraction=payload.get("subset_fraction", 0.7),
            mutation_rate=payload.get("mutation_rate", 0.05),
            elitism_penalty_weight=payload.get("elitism_penalty_weight", 0.5),
            rolling_window=payload.get("rolling_window", 10),
            stability_rel_tol=payload.get("stability_rel_tol", 0.02),
            max_iterations=payload.get("max_iterations", 500),
            blend_weights=tuple(payload.get("blend_weights", (0.4, 0.2, 0.2, 0.2))),
            k_patience=payload.get("k_patience", 20),
            k_max=payload.get("k_max", 8),
        )


@dataclass(eq=False)
class Individual:
    """A subset of histogram pairs, kept sorted by duration."""

    points: np.ndarray  # (m, 2) integer (duration_index, occurrences) rows

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=int)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be an (m, 2) array")
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        self.points = pts[order]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(eq=False)
class Clustering:
    """K-means output: centroids, assignment and the final potential."""

    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    potential: float
    phi_history: list[float] = field(default_factory=list)
    points: np.ndarray | None = None

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)


@dataclass(eq=False)
class SilhouetteReport:
    per_point: np.ndarray
    mean_score: float


def heuristic_estimate(hist: DwellHistogram, tau_range: tuple[float, float]) -> float:
    """Seed lifetime from cheap histogram summaries.

    Median of three candidates: the mean dwell, the longest observed dwell
    scaled by ln(1 + total occurrences) (extreme-value correction), and the
    duration of the most frequent bin (shortest on ties), clamped to the
    user range.
    """
    if len(hist) == 0 or hist.total <= 0:
        raise ValueError("histogram is empty")
    c1 = mean_dwell(hist)
    longest = float(hist.durations[-1])
    c2 = longest / math.log(1.0 + hist.total)
    best = np.flatnonzero(hist.occurrences == hist.occurrences.max())[0]
    c3 = float(hist.durations[best])
    lo, hi = tau_range
    return float(min(max(np.median([c1, c2, c3]), lo), hi))


def spawn_individual(
    hist: DwellHistogram, subset_fraction: float, rng: np.random.Generator
) -> Individual:
    """Sample ceil(fraction * |pairs|) distinct pairs from the histogram."""
    m = len(hist)
    if m == 0:
        raise InsufficientDataError("cannot spawn an individual from an empty histogram")
    size = int(math.ceil(subset_fraction * m))
    idx = rng.choice(m, size=size, replace=False)
    return Individual(hist.pairs()[np.sort(idx)])


def kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted centroid seeding.

    The first centroid is uniform; each next one is drawn with probability
    proportional to the squared distance to the nearest chosen centroid.
    When every remaining distance is zero (all points identical) the draw
    falls back to uniform.
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    if m < k:
        raise ValueError(f"need at least {k} points, got {m}")
    centroids = np.empty((k, pts.shape[1]))
    centroids[0] = pts[rng.integers(m)]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(m)
        else:
            idx = rng.choice(m, p=d2 / total)
        centroids[j] = pts[idx]
        d2 = np.minimum(d2, ((pts - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _assign(pts, centroids):
    d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(pts.shape[0]), labels].sum()


def kmeans_cluster(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    *,
    reassignment_tol: float = 0.0,
    movement_tol: float = 1e-9,
    max_iter: int = 50,
    n_init: int = 1,
) -> Clustering:
    """Lloyd iterations from a K-means++ seed, minimizing the potential.

    Stops once the fraction of reassigned points and the largest centroid
    displacement both fall within tolerance (or at the iteration cap).
    Empty clusters are repaired by seizing the point currently farthest
    from its own centroid.  With n_init > 1 the best of several seeded runs
    (lowest potential) is returned.
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    if m < k or k < 1:
        raise ValueError(f"need at least {k} points for {k} clusters, got {m}")

    best = None
    for _ in range(max(n_init, 1)):
        centroids = kmeanspp_init(pts, k, rng)
        labels, phi = _assign(pts, centroids)
        history = [phi]
        for _ in range(max_iter):
            new_centroids = centroids.copy()
            for j in range(k):
                mask = labels == j
                if mask.any():
                    new_centroids[j] = pts[mask].mean(axis=0)
            # repair empty clusters before the next assignment; each seizes
            # a distinct point (the one farthest from its own centroid)
            dist_own = ((pts - new_centroids[labels]) ** 2).sum(axis=1)
            for j in range(k):
                if not (labels == j).any():
                    farthest = int(dist_own.argmax())
                    new_centroids[j] = pts[farthest]
                    labels[farthest] = j
                    dist_own[farthest] = -1.0
            new_labels, phi_new = _assign(pts, new_centroids)
            moved = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
            reassigned = float((new_labels != labels).mean())
            centroids, labels = new_centroids, new_labels
            history.append(phi_new)
            if reassigned <= reassignment_tol and moved <= movement_tol:
                break
        # duplicate points can leave assignment ties that starve a cluster
        # for good; a final seize pass guarantees every cluster is occupied
        if len(np.unique(labels)) < k:
            dist_own = ((pts - centroids[labels]) ** 2).sum(axis=1)
            for j in range(k):
                if not (labels == j).any():
                    farthest = int(dist_own.argmax())
                    centroids[j] = pts[farthest]
                    labels[farthest] = j
                    dist_own[farthest] = -1.0
            history.append(float(((pts - centroids[labels]) ** 2).sum()))
        result = Clustering(
            k=k,
            centroids=centroids,
            assignment=labels.copy(),
            potential=float(history[-1]),
            phi_history=[float(p) for p in history],
            points=pts,
        )
        if best is None or result.potential < best.potential:
            best = result
    return best


def silhouette(clustering: Clustering) -> SilhouetteReport:
    """Per-point silhouette values for a clustering with k >= 2.

    s(i) compares the mean distance to the point's own cluster a(i) with
    the smallest mean distance to another cluster b(i); points in singleton
    clusters score 0.
    """
    if clustering.k < 2:
        raise ValueError("silhouette needs at least two clusters")
    pts = clustering.points
    labels = clustering.assignment
    m = pts.shape[0]
    k = clustering.k
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    onehot = np.zeros((m, k))
    onehot[np.arange(m), labels] = 1.0
    sizes = onehot.sum(axis=0)
    if sizes.min() == 0:
        raise ValueError("every cluster must be non-empty")
    # mean distance from every point to every cluster (self included)
    mean_to = dist @ onehot / sizes
    own_size = sizes[labels]
    # a(i): own-cluster mean excluding the zero self-distance
    with np.errstate(invalid="ignore", divide="ignore"):
        a = mean_to[np.arange(m), labels] * own_size / np.maximum(own_size - 1, 1)
    other = np.where(onehot.astype(bool), np.inf, mean_to)
    b = other.min(axis=1)
    scores = np.zeros(m)
    singleton = own_size == 1
    regular = ~singleton
    with np.errstate(invalid="ignore", divide="ignore"):
        s_low = 1.0 - a / b
        s_high = b / a - 1.0
    scores[regular & (a < b)] = s_low[regular & (a < b)]
    scores[regular & (a > b)] = s_high[regular & (a > b)]
    return SilhouetteReport(per_point=scores, mean_score=float(scores.mean()))


def crossover_clone_exchange(
    individual: Individual, rng: np.random.Generator
) -> tuple[Individual, Individual]:
    """Clone the individual twice and swap a random half of the slots.

    The multiset union of the children always equals that of the two
    clones; no new points are invented here (that is mutation's job).
    """
    m = len(individual)
    a = individual.points.copy()
    b = individual.points.copy()
    n_swap = m // 2
    if n_swap >= 1:
        slots = rng.choice(m, size=n_swap, replace=False)
        a[slots], b[slots] = b[slots].copy(), a[slots].copy()
    return Individual(a), Individual(b)


def mutate(
    individual: Individual,
    hist: DwellHistogram,
    mutation_rate: float,
    rng: np.random.Generator,
) -> Individual:
    """Replace each point, with probability mutation_rate, by an unused pair.

    Replacements are drawn uniformly from the histogram pairs not already
    present in the individual; when none remain the point is kept.
    """
    pts = individual.points.copy()
    present = {tuple(row) for row in pts}
    pool = [tuple(row) for row in hist.pairs() if tuple(row) not in present]
    flags = rng.random(len(pts)) < mutation_rate
    for slot in np.flatnonzero(flags):
        if not pool:
            break
        j = int(rng.integers(len(pool)))
        pts[slot] = pool.pop(j)
    return Individual(pts)


def extract_tau(points: np.ndarray, bin_width: float) -> float:
    """Convert a winning cluster to a lifetime.

    With M the cluster's occurrence-weighted median point (lower median),
    D_M its duration, C_M its count and C_max the count of the cluster's
    longest-duration point:

        tau = D_M / (ln 2 * |ln C_max - ln C_M|)

    The ln 2 converts the median of an exponential decay to its mean; the
    absolute value keeps tau positive on decaying histograms where the
    longest point carries the lowest count.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("cluster must contain at least two (duration, count) points")
    if np.any(pts[:, 1] <= 0):
        raise ValueError("occurrence counts must be positive")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    if np.unique(pts[:, 0]).size < 2:
        raise ValueError("cluster must span at least two distinct durations")
    cum = np.cumsum(pts[:, 1])
    median_idx = int(np.searchsorted(cum, cum[-1] / 2.0))
    d_m = pts[median_idx, 0] * bin_width
    c_m = pts[median_idx, 1]
    # max-duration point; ties broken towards the higher count (sort order)
    c_max = pts[-1, 1]
    if c_max == c_m:
        raise DegenerateClusterError(
            "median and maximum-duration counts coincide; decay rate undefined"
        )
    return float(d_m / (_LN2 * abs(math.log(c_max) - math.log(c_m))))


def _normalize(points: np.ndarray) -> np.ndarray:
    """Min-max scale both axes to [0, 1] over the individual."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    span[span == 0.0] = 1.0
    return (pts - lo) / span


def _cluster_tightness(clustering: Clustering) -> np.ndarray:
    """Mean member distance to centroid, per cluster."""
    out = np.empty(clustering.k)
    for j in range(clustering.k):
        members = clustering.members(j)
        d = np.sqrt(
            ((clustering.points[members] - clustering.centroids[j]) ** 2).sum(axis=1)
        )
        out[j] = d.mean() if members.size else np.inf
    return out


def _candidate_tau(individual: Individual, clustering: Clustering, bin_width: float):
    """Extract a lifetime from the tightest extractable cluster.

    Clusters are tried in order of increasing mean intra-cluster distance
    (lowest index on ties); degenerate clusters fall through to the next.
    Returns (tau, cluster_index) or (None, None).
    """
    tightness = _cluster_tightness(clustering)
    for j in np.argsort(tightness, kind="stable"):
        members = clustering.members(int(j))
        if members.size < 2:
            continue
        try:
            return extract_tau(individual.points[members], bin_width), int(j)
        except (DegenerateClusterError, ValueError):
            continue
    return None, None


def _blend(estimates: list[float], weights, bin_width: float) -> float:
    last = estimates[-1]
    mean = float(np.mean(estimates))
    median = float(np.median(estimates))
    rounded = np.rint(np.asarray(estimates) / bin_width).astype(int)
    values, counts = np.unique(rounded, return_counts=True)
    mode = float(values[counts.argmax()] * bin_width)
    w_final, w_mean, w_mode, w_median = weights
    return w_final * last + w_mean * mean + w_mode * mode + w_median * median


def run_ga(hist: DwellHistogram, config: GaConfig, rng=None) -> RateEstimate:
    """Evolve histogram subsets until the lifetime estimate stabilizes.

    Exactly two individuals are alive at any time.  Each generation both
    are clustered and scored by mean silhouette minus an elitism penalty
    proportional to the relative distance between the individual's
    candidate lifetime and the rolling mean of previous estimates (the
    heuristic seed anchors the penalty before the first acceptance).  A
    winner above the silhouette threshold contributes the lifetime of its
    tightest cluster to the estimate log and the population is respawned;
    otherwise the winner is cloned, the clones exchange points and both
    mutants form the next generation.  After every k_patience consecutive
    sub-threshold generations the cluster count steps through
    [2, min(k_max, subset size)].  Returns the rolling median once the last
    rolling_window accepted estimates agree to stability_rel_tol, or the
    blended estimate log at the iteration cap.  The result is always
    clamped to tau_range.
    """
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    m = len(hist)
    subset_size = int(math.ceil(config.subset_fraction * m))
    if m < 2 or subset_size < 2:
        raise InsufficientDataError(
            f"histogram with {m} pairs is too small to spawn individuals"
        )
    lo, hi = config.tau_range
    # The heuristic seeds the estimate log: it anchors the elitism penalty
    # from the first generation and keeps the blend defined when clusters
    # are too count-degenerate to extract from (scarce-data regime).
    tau0 = heuristic_estimate(hist, config.tau_range)
    anchor = [tau0]
    estimates: list[float] = [tau0]
    log_rows: list[tuple[int, float, float, int]] = []

    k = max(2, min(config.k_init, config.k_max, subset_size))
    streak = 0
    individuals = [
        spawn_individual(hist, config.subset_fraction, generator) for _ in range(2)
    ]
    termination = "max_iterations"
    tau_final = None
    std_err = 0.0

    for iteration in range(config.max_iterations):
        scored = []
        for ind in individuals:
            clustering = kmeans_cluster(
                _normalize(ind.points),
                k,
                generator,
                reassignment_tol=config.reassignment_tol,
                movement_tol=config.movement_tol,
                max_iter=config.kmeans_max_iter,
            )
            sil = silhouette(clustering).mean_score
            tau_c, _ = _candidate_tau(ind, clustering, hist.bin_width)
            if tau_c is None:
                # no usable cluster: worst-case penalty keeps such solutions
                # from outcompeting extractable ones
                score = sil - config.elitism_penalty_weight
            else:
                ref = float(np.mean(anchor[-config.rolling_window :]))
                score = sil - config.elitism_penalty_weight * abs(tau_c - ref) / ref
            scored.append((score, sil, tau_c, ind))
        top = max(range(2), key=lambda i: scored[i][0])
        score, sil, tau_c, winner = scored[top]

        if score > config.silhouette_threshold and tau_c is not None:
            estimates.append(tau_c)
            anchor.append(tau_c)
            log_rows.append((iteration, tau_c, sil, k))
            streak = 0
            if len(estimates) >= config.rolling_window:
                window = np.asarray(estimates[-config.rolling_window :])
                med = float(np.median(window))
                if med > 0 and (window.max() - window.min()) / med <= config.stability_rel_tol:
                    tau_final = med
                    std_err = float(window.std(ddof=1) / math.sqrt(window.size))
                    termination = "stability"
                    break
            individuals = [
                spawn_individual(hist, config.subset_fraction, generator) for _ in range(2)
            ]
        else:
            streak += 1
            child_a, child_b = crossover_clone_exchange(winner, generator)
            individuals = [
                mutate(child_a, hist, config.mutation_rate, generator),
                mutate(child_b, hist, config.mutation_rate, generator),
            ]
            if streak >= config.k_patience:
                # cycle the cluster count through [2, min(k_max, subset size)]
                k_hi = max(2, min(config.k_max, subset_size))
                k = k + 1 if k < k_hi else 2
                streak = 0

    if tau_final is None:
        if not np.all(np.isfinite(estimates)):
            raise NoEstimateError("estimate log is not finite")
        tau_final = _blend(estimates, config.blend_weights, hist.bin_width)
        if len(estimates) >= 2:
            std_err = float(np.std(estimates, ddof=1) / math.sqrt(len(estimates)))

    clamped = float(min(max(tau_final, lo), hi))
    return RateEstimate(
        tau_hat=clamped,
        std_err=std_err,
        method="ga",
        converged=True,
        diagnostics={
            "termination": termination,
            "iterations": log_rows[-1][0] + 1 if log_rows else config.max_iterations,
            "accepted": len(estimates) - 1,  # excludes the heuristic seed
            "k_final": k,
            "heuristic": tau0,
            "estimate_log": log_rows,
        },
    )


def write_estimate_log(est: RateEstimate, path) -> None:
    """Dump a GA estimate log as CSV (iteration,tau_s,silhouette,k)."""
    rows = est.diagnostics.get("estimate_log", [])
    path = Path(path)
    with path.open("w") as fh:
        fh.write("iteration,tau_s,silhouette,k\n")
        for iteration, tau, sil, k in rows:
            fh.write(f"{iteration},{repr(float(tau))},{repr(float(sil))},{k}\n")
