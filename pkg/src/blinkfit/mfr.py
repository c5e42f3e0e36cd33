"""Supervised multi-feature regression for dwell lifetimes.

A dwell histogram is flattened into a dense occurrence vector
[1, x_1, ..., x_n] and a ridge-regularized linear model maps it straight
to a lifetime.  Models are trained on simulated corpora whose labels are
known exactly, one model per state and per trace duration (raw occurrence
counts scale with trace length, so a model is only calibrated for the
duration it was trained on).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dwell import DwellHistogram, binarize, dwell_histogram
from .emitter import (
    DEFAULT_MEAN_OFF_COUNTS,
    DEFAULT_MEAN_ON_COUNTS,
    EmitterModel,
    generate_trace,
)
from .errors import EmptyHistogramError, RankDeficientError
from .estimate import RateEstimate

# With 20 training sets and hundreds of features the least-squares system
# is wildly underdetermined.  Heavy ridge puts scarce-data predictions in
# the corpus-prior regime (weights collapse towards the label mean) while
# long traces, whose count features are orders of magnitude larger, still
# reach the data-tracking regime.  Calibrated on the default corpus.
DEFAULT_RIDGE_LAMBDA = 3000.0
DEFAULT_TRAINING_SETS = 20
# Default label range for training corpora, in seconds: spans the ms-scale
# decade typical of blinking statistics.
DEFAULT_TAU_RANGE = (3e-3, 45e-3)


@dataclass(eq=False)
class FeatureVector:
    """Dense occurrence features with a leading bias slot."""

    values: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return self.values.size - 1


@dataclass(eq=False)
class TrainingSet:
    """Labeled (features, lifetime) pairs sharing one feature count."""

    features: list[FeatureVector]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float)
        if len(self.features) != self.labels.size:
            raise ValueError("features and labels must have equal length")
        if self.labels.size and np.any(self.labels <= 0):
            raise ValueError("labels must be positive lifetimes")
        sizes = {fv.n for fv in self.features}
        if len(sizes) > 1:
            raise ValueError("all feature vectors must share the same n")

    @property
    def N(self) -> int:
        return self.labels.size

    @property
    def n(self) -> int:
        return self.features[0].n

    def matrix(self) -> np.ndarray:
        return np.vstack([fv.values for fv in self.features])


@dataclass
class MfrModel:
    """Trained weight vector plus the protocol it is calibrated for."""

    weights: np.ndarray
    n: int
    bin_width: float
    trained_duration: float
    ridge_lambda: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.size != self.n + 1:
            raise ValueError("weight length must be n + 1")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    def save(self, path) -> None:
        payload = {
            "n": self.n,
            "bin_width_s": self.bin_width,
            "trained_duration_s": self.trained_duration,
            "ridge_lambda": self.ridge_lambda,
            "weights": self.weights.tolist(),
        }
        Path(path).write_text(json.dumps(payload) + "\n")

    @classmethod
    def load(cls, path) -> "MfrModel":
        payload = json.loads(Path(path).read_text())
        return cls(
            weights=np.asarray(payload["weights"]),
            n=payload["n"],
            bin_width=payload["bin_width_s"],
            trained_duration=payload["trained_duration_s"],
            ridge_lambda=payload["ridge_lambda"],
        )


def default_feature_count(tau_hi: float, bin_width: float) -> int:
    """Feature count covering dwells up to ten times the longest lifetime."""
    return int(math.ceil(10.0 * tau_hi / bin_width))


def featurize(hist: DwellHistogram, n: int) -> FeatureVector:
    """Zero-padded dense occurrence vector [1, x_1, ..., x_n].

    Occurrences at duration indices beyond n are dropped and the truncation
    flag is set.
    """
    if n < 1:
        raise ValueError("feature count must be positive")
    values = np.zeros(n + 1)
    values[0] = 1.0
    keep = hist.indices <= n
    values[hist.indices[keep]] = hist.occurrences[keep]
    return FeatureVector(values, truncated=bool(np.any(~keep)))


def train(corpus: TrainingSet, ridge_lambda: float = DEFAULT_RIDGE_LAMBDA) -> MfrModel:
    """Solve the regularized least-squares weights in closed form.

    Minimizes sum_i (w.x_i - tau_i)^2 + ridge_lambda * ||w_1..n||^2 (the
    bias weight is unpenalized) via the normal equations.  With
    ridge_lambda = 0 the system is singular whenever N < n + 1, which is
    reported as RankDeficientError.
    """
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    if corpus.N < 1:
        raise ValueError("training corpus is empty")
    n = corpus.n
    if ridge_lambda == 0.0 and corpus.N < n + 1:
        raise RankDeficientError(
            f"{corpus.N} training sets cannot determine {n + 1} weights without ridge"
        )
    X = corpus.matrix()
    y = corpus.labels
    reg = np.full(n + 1, ridge_lambda)
    reg[0] = 0.0  # bias unpenalized
    A = X.T @ X + np.diag(reg)
    try:
        weights = cho_solve(cho_factor(A), X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("normal equations are singular") from exc
    # calibration metadata (bin width, duration) is attached by train_model
    return MfrModel(
        weights=weights,
        n=n,
        bin_width=0.0,
        trained_duration=0.0,
        ridge_lambda=ridge_lambda,
    )


def predict(model: MfrModel, features: FeatureVector) -> float:
    """Dot product of weights and features; negative outputs only warn."""
    if features.n != model.n:
        raise ValueError(
            f"feature count {features.n} does not match model feature count {model.n}"
        )
    tau = float(model.weights @ features.values)
    if tau < 0:
        warnings.warn("regression predicted a negative lifetime", stacklevel=2)
    return tau


def estimate(
    model: MfrModel, hist: DwellHistogram, trace_duration: float | None = None
) -> RateEstimate:
    """Featurize a histogram and predict its lifetime with the model.

    Warns when the trace duration differs from the duration the model was
    trained on (raw counts scale with trace length).
    """
    if trace_duration is not None and model.trained_duration > 0:
        if not math.isclose(trace_duration, model.trained_duration, rel_tol=1e-6):
            warnings.warn(
                f"model was trained on {model.trained_duration} s traces but the "
                f"trace is {trace_duration} s; prediction may be miscalibrated",
                stacklevel=2,
            )
    fv = featurize(hist, model.n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tau = predict(model, fv)
    converged = bool(np.isfinite(tau) and tau > 0)
    return RateEstimate(
        tau_hat=tau,
        std_err=0.0,
        method="mfr",
        converged=converged,
        diagnostics={"truncated": fv.truncated},
    )


def _log_stratified(lo: float, hi: float, N: int, rng: np.random.Generator) -> np.ndarray:
    """Log-uniform draws, one per equal slice of the log range."""
    ratio = hi / lo
    return lo * ratio ** ((np.arange(N) + rng.random(N)) / N)


def generate_training_corpus(
    tau_range: tuple[float, float],
    N: int,
    trace_duration: float,
    *,
    bin_width: float,
    photon_noise: str | None = "poisson",
    rng=None,
    n: int | None = None,
    mean_on_counts: float = DEFAULT_MEAN_ON_COUNTS,
    mean_off_counts: float = DEFAULT_MEAN_OFF_COUNTS,
) -> tuple[TrainingSet, TrainingSet]:
    """Simulate N labeled traces and featurize them, per state.

    Both lifetimes of each training emitter are drawn log-uniformly from
    tau_range (one stratified draw per log-decade slice, so a small corpus
    still covers the range evenly); the on-corpus labels each trace with
    its tau_on and the off-corpus with its tau_off.  Each trace gets an
    independent seed derived from rng, so the corpus is deterministic and
    order-independent.
    """
    lo, hi = tau_range
    if not 0 < lo < hi:
        raise ValueError("tau_range must satisfy 0 < lo < hi")
    if N < 1:
        raise ValueError("need at least one training set")
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if n is None:
        n = default_feature_count(hi, bin_width)

    labels_on = generator.permutation(_log_stratified(lo, hi, N, generator))
    labels_off = generator.permutation(_log_stratified(lo, hi, N, generator))
    child_seeds = generator.integers(0, 2**63 - 1, size=N)
    threshold = 0.5 * (mean_on_counts + mean_off_counts)

    feats_on, feats_off = [], []
    empty = FeatureVector(np.concatenate([[1.0], np.zeros(n)]))
    for i in range(N):
        model = EmitterModel(tau_on=labels_on[i], tau_off=labels_off[i])
        trace = generate_trace(
            model,
            trace_duration,
            bin_width,
            photon_noise,
            rng=int(child_seeds[i]),
            mean_on_counts=mean_on_counts,
            mean_off_counts=mean_off_counts,
        )
        try:
            hist_on, hist_off = dwell_histogram(binarize(trace, threshold))
            feats_on.append(featurize(hist_on, n))
            feats_off.append(featurize(hist_off, n))
        except EmptyHistogramError:
            # too few transitions in this draw; keep the all-zero features
            feats_on.append(empty)
            feats_off.append(empty)
    return (
        TrainingSet(feats_on, labels_on),
        TrainingSet(feats_off, labels_off),
    )


def train_model(
    corpus: TrainingSet,
    *,
    bin_width: float,
    trained_duration: float,
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA,
) -> MfrModel:
    """train() plus the calibration metadata a stored model needs."""
    model = train(corpus, ridge_lambda)
    model.bin_width = bin_width
    model.trained_duration = trained_duration
    return model
