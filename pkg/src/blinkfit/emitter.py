"""Synthetic two-state blinking emitter simulation.

An emitter alternates between an on state (fast excitation/radiative
cycling, high photocounts) and an off state (carrier trapped, low
photocounts).  Dwell times in each state are drawn from per-state
distributions (exponential by default, optionally an inverse power law),
the resulting occupancy is discretized onto fixed-width time bins, and
per-bin photocounts are emitted with optional Poisson shot noise.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# k_I and k_r should exceed every trap rate by at least this factor for the
# steady-state intensity expression to hold; violations only warn.
RATE_SEPARATION = 10.0

DEFAULT_MEAN_ON_COUNTS = 100.0
DEFAULT_MEAN_OFF_COUNTS = 10.0

EXPONENTIAL = "exponential"
POWER_LAW = "power_law"


@dataclass(frozen=True)
class DwellDistribution:
    """Shape of the per-state dwell-time law.

    kind "exponential" uses the mean lifetimes stored on the emitter model;
    kind "power_law" draws Pareto variates with exponent m_on/m_off above a
    hard lower cutoff tau_min (required for normalizability).
    """

    kind: str = EXPONENTIAL
    m_on: float | None = None
    m_off: float | None = None
    tau_min: float | None = None

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, POWER_LAW):
            raise ValueError(f"unknown dwell distribution kind {self.kind!r}")
        if self.kind == POWER_LAW:
            if self.m_on is None or self.m_off is None or self.tau_min is None:
                raise ValueError("power-law dwell distribution needs m_on, m_off and tau_min")
            if self.m_on <= 1.0 or self.m_off <= 1.0:
                raise ValueError("power-law exponents must exceed 1")
            if self.tau_min <= 0.0:
                raise ValueError("tau_min must be positive")


@dataclass(frozen=True)
class TrapChannel:
    """One non-radiative recombination pathway.

    k_j is the trap rate while the channel is active; gamma_plus/gamma_minus
    are the passive-to-active and active-to-passive switching rates.
    """

    k_j: float
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0
    active: bool = True

    def __post_init__(self):
        if self.k_j < 0 or self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ValueError("trap channel rates must be non-negative")


@dataclass(frozen=True)
class EmitterModel:
    """Physical parameters of a blinking emitter.

    tau_on/tau_off are the mean state lifetimes in seconds; k_I, k_r and the
    trap rates only enter the steady-state intensity expression (the
    two-state benchmark path samples dwell times directly from
    tau_on/tau_off).
    """

    tau_on: float
    tau_off: float
    k_I: float = 1e8
    k_r: float = 1e7
    k_0: float = 0.0
    channels: tuple[TrapChannel, ...] = ()
    dwell_dist: DwellDistribution = field(default_factory=DwellDistribution)

    def __post_init__(self):
        if self.tau_on <= 0 or self.tau_off <= 0:
            raise ValueError("tau_on and tau_off must be positive")
        if self.k_I <= 0 or self.k_r <= 0:
            raise ValueError("k_I and k_r must be positive")
        if self.k_0 < 0:
            raise ValueError("k_0 must be non-negative")
        object.__setattr__(self, "channels", tuple(self.channels))
        rates = [self.k_0] + [c.k_j for c in self.channels]
        k_max = max(rates)
        if k_max > 0 and min(self.k_I, self.k_r) < RATE_SEPARATION * k_max:
            warnings.warn(
                "excitation/radiative rates are not much faster than the trap rates; "
                "the steady-state intensity expression may not hold",
                stacklevel=2,
            )


@dataclass(eq=False)
class BlinkTrace:
    """Binned photocount time series.

    counts holds one value per bin: integer Poisson draws when photon noise
    is on, otherwise the exact expected counts (fractional in bins that
    straddle a state transition).  hidden_states marks the majority state of
    each bin and truth carries the generating (tau_on, tau_off).
    """

    bin_width: float
    counts: np.ndarray
    mean_on_counts: float = DEFAULT_MEAN_ON_COUNTS
    mean_off_counts: float = DEFAULT_MEAN_OFF_COUNTS
    truth: tuple[float, float] | None = None
    seed: int | None = None
    hidden_states: np.ndarray | None = None

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.size < 1:
            raise ValueError("trace must contain at least one bin")
        if not self.mean_on_counts > self.mean_off_counts:
            raise ValueError("mean_on_counts must exceed mean_off_counts")

    def __len__(self) -> int:
        return self.counts.size

    @property
    def duration(self) -> float:
        return self.counts.size * self.bin_width

    @property
    def times(self) -> np.ndarray:
        """Start time of each bin in seconds."""
        return np.arange(self.counts.size) * self.bin_width


def total_trap_rate(channels, k_0: float) -> float:
    """Total non-radiative rate: k_0 plus every active channel's k_j.

    The background term k_0 is always active, independent of the channels.
    """
    return k_0 + sum(c.k_j for c in channels if c.active)


def intensity(k_I: float, k_r: float, k_t: float) -> float:
    """Steady-state photoluminescence fraction k_I / (k_I + k_r + k_t)."""
    denom = k_I + k_r + k_t
    if denom <= 0:
        raise ValueError("k_I + k_r + k_t must be positive")
    return k_I / denom


def survival_prob(tau: float, t: float) -> float:
    """Probability of still being in the same state after elapsed time t."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if t < 0:
        raise ValueError("elapsed time must be non-negative")
    return math.exp(-t / tau)


def switching_prob(tau: float, t: float) -> float:
    """Probability of having left the state after elapsed time t."""
    return 1.0 - survival_prob(tau, t)


def sample_dwell(state: str, model: EmitterModel, rng: np.random.Generator) -> float:
    """Draw one dwell duration (seconds) for the given state ("on"/"off").

    Each call is independent: a state change starts a fresh process that
    remembers nothing about previous visits.
    """
    if state not in ("on", "off"):
        raise ValueError("state must be 'on' or 'off'")
    dist = model.dwell_dist
    if dist.kind == EXPONENTIAL:
        tau = model.tau_on if state == "on" else model.tau_off
        return float(rng.exponential(tau))
    m = dist.m_on if state == "on" else dist.m_off
    # Pareto inverse CDF with hard cutoff: F(t) = 1 - (t/tau_min)^(1-m).
    u = rng.random()
    return float(dist.tau_min * (1.0 - u) ** (-1.0 / (m - 1.0)))


def _as_rng(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng) if rng is not None else None
    return np.random.default_rng(seed), seed


def generate_trace(
    model: EmitterModel,
    duration: float,
    bin_width: float,
    photon_noise: str | None = "poisson",
    rng=None,
    *,
    mean_on_counts: float = DEFAULT_MEAN_ON_COUNTS,
    mean_off_counts: float = DEFAULT_MEAN_OFF_COUNTS,
) -> BlinkTrace:
    """Simulate a blinking time trace.

    The initial state is drawn from the stationary occupancy
    tau_on/(tau_on+tau_off); on/off dwells then alternate until the
    requested duration is covered.  A bin fully inside one state gets that
    state's mean count level; a bin straddling a transition gets the
    time-weighted mixture, and its hidden state is the state occupying the
    majority of the bin.  With photon_noise="poisson", counts are Poisson
    draws around the expected level; with None they are the expectation
    itself.  Deterministic for a given integer seed.

    Parameters
    ----------
    model : EmitterModel
    duration : float
        Requested trace length in seconds (>= bin_width).
    bin_width : float
        Bin width in seconds.
    photon_noise : "poisson" or None
    rng : int seed or numpy Generator
    """
    if bin_width <= 0 or duration <= 0:
        raise ValueError("duration and bin_width must be positive")
    if duration < bin_width:
        raise ValueError("duration must cover at least one bin")
    if photon_noise not in (None, "none", "poisson"):
        raise ValueError("photon_noise must be None or 'poisson'")
    if not mean_on_counts > mean_off_counts:
        raise ValueError("mean_on_counts must exceed mean_off_counts")

    generator, seed = _as_rng(rng)
    n_bins = int(round(duration / bin_width))
    total = n_bins * bin_width

    p_on = model.tau_on / (model.tau_on + model.tau_off)
    on = bool(generator.random() < p_on)

    on_time = np.zeros(n_bins)
    t = 0.0
    while t < total:
        d = sample_dwell("on" if on else "off", model, generator)
        if on:
            _add_interval(on_time, t, min(t + d, total), bin_width, n_bins)
        t += d
        on = not on

    on_frac = np.clip(on_time / bin_width, 0.0, 1.0)
    expected = mean_off_counts + (mean_on_counts - mean_off_counts) * on_frac
    if photon_noise == "poisson":
        counts = generator.poisson(expected).astype(float)
    else:
        counts = expected

    return BlinkTrace(
        bin_width=bin_width,
        counts=counts,
        mean_on_counts=mean_on_counts,
        mean_off_counts=mean_off_counts,
        truth=(model.tau_on, model.tau_off),
        seed=seed,
        hidden_states=on_frac > 0.5,
    )


def _add_interval(on_time, a, b, bin_width, n_bins):
    """Accumulate the overlap of [a, b) with each bin into on_time."""
    if b <= a:
        return
    i0 = min(int(a / bin_width), n_bins - 1)
    i1 = min(int(np.ceil(b / bin_width)) - 1, n_bins - 1)
    if i1 <= i0:
        on_time[i0] += b - a
        return
    on_time[i0] += (i0 + 1) * bin_width - a
    on_time[i1] += b - i1 * bin_width
    if i1 > i0 + 1:
        on_time[i0 + 1 : i1] += bin_width


def simulate_channel_activity(
    model: EmitterModel, duration: float, dt: float, rng=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evolve the trap channels' on/off activity and the resulting intensity.

    Each channel flips passive->active with rate gamma_plus and back with
    rate gamma_minus (independent telegraph processes, sampled on a dt
    grid).  Returns (times, total_trap_rate_series, intensity_series).
    This drives the generalized intensity expression only; the two-state
    benchmark path samples dwell times directly.
    """
    if duration <= 0 or dt <= 0 or duration < dt:
        raise ValueError("duration and dt must be positive with duration >= dt")
    generator, _ = _as_rng(rng)
    n = int(round(duration / dt))
    times = np.arange(n) * dt
    active = np.array([c.active for c in model.channels], dtype=bool)
    rates = np.array([c.k_j for c in model.channels])
    p_up = np.array([1.0 - math.exp(-c.gamma_plus * dt) for c in model.channels])
    p_down = np.array([1.0 - math.exp(-c.gamma_minus * dt) for c in model.channels])
    k_t = np.empty(n)
    for i in range(n):
        k_t[i] = model.k_0 + rates[active].sum()
        if active.size:
            flip_up = generator.random(active.size) < p_up
            flip_down = generator.random(active.size) < p_down
            active = np.where(active, ~flip_down, flip_up)
    lum = model.k_I / (model.k_I + model.k_r + k_t)
    return times, k_t, lum


def write_trace(trace: BlinkTrace, path) -> None:
    """Write a trace as CSV (t_s,counts) plus a JSON metadata sidecar."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t_s,counts\n")
        bw = trace.bin_width
        for i, c in enumerate(trace.counts):
            c = float(c)
            value = repr(int(c)) if c.is_integer() else repr(c)
            fh.write(f"{repr(i * bw)},{value}\n")
    meta = {
        "bin_width_s": trace.bin_width,
        "mean_on_counts": trace.mean_on_counts,
        "mean_off_counts": trace.mean_off_counts,
        "tau_on_s": trace.truth[0] if trace.truth else None,
        "tau_off_s": trace.truth[1] if trace.truth else None,
        "seed": trace.seed,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def read_trace(path) -> BlinkTrace:
    """Read a trace written by write_trace (sidecar JSON required)."""
    path = Path(path)
    counts = []
    with path.open() as fh:
        header = fh.readline().strip()
        if header != "t_s,counts":
            raise ValueError(f"unexpected trace header {header!r} in {path}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 2:
                raise ValueError(f"malformed trace row at line {lineno} of {path}")
            try:
                counts.append(float(fields[1]))
            except ValueError as exc:
                raise ValueError(f"malformed trace row at line {lineno} of {path}") from exc
    meta = json.loads(path.with_suffix(".json").read_text())
    truth = None
    if meta.get("tau_on_s") is not None and meta.get("tau_off_s") is not None:
        truth = (meta["tau_on_s"], meta["tau_off_s"])
    return BlinkTrace(
        bin_width=meta["bin_width_s"],
        counts=np.asarray(counts),
        mean_on_counts=meta.get("mean_on_counts", DEFAULT_MEAN_ON_COUNTS),
        mean_off_counts=meta.get("mean_off_counts", DEFAULT_MEAN_OFF_COUNTS),
        truth=truth,
        seed=meta.get("seed"),
    )
