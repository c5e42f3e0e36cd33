"""Common estimator output type."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RateEstimate:
    """A single lifetime estimate with uncertainty and provenance.

    tau_hat and std_err are in seconds; method is one of "lm", "mfr", "ga".
    diagnostics holds method-specific scalars (iteration counts, costs, ...).
    """

    tau_hat: float
    std_err: float
    method: str
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        """Switching rate k = 1/tau (1/s)."""
        return 1.0 / self.tau_hat
