"""Stepsize schedules: constant, and a horizon-aware three-branch decay.

The decaying policy keeps the full stepsize for the first half of the run and
then shrinks it like 2 / (2 + rho_tilde * (k - k0)), where rho_tilde is the
per-step contraction rate at the base stepsize. It needs the total iteration
count up front and is the schedule that trades the convergence neighborhood
for an O(1/K) tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import sampling


@dataclass(frozen=True)
class StepsizePolicy:
    """Stepsize rule gamma_1(k) = beta_k * base_gamma, gamma_2 = alpha * gamma_1."""

    base_gamma: float
    alpha: float = 0.25
    kind: str = "constant"  # "constant" | "decreasing_k"
    total_k: int | None = None
    rho_tilde: float | None = None

    def __post_init__(self):
        if self.base_gamma <= 0:
            raise ValueError("base_gamma must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.kind == "decreasing_k":
            if self.total_k is None or self.total_k < 0:
                raise ValueError("decreasing policy needs a nonnegative horizon K")
            if self.rho_tilde is None or self.rho_tilde <= 0:
                raise ValueError("decreasing policy needs rho_tilde > 0")
        elif self.kind != "constant":
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @property
    def k0(self):
        if self.kind != "decreasing_k":
            return None
        return math.ceil(self.total_k / 2)

    def beta(self, k) -> float:
        """Stepsize multiplier at iteration k; non-increasing and in (0, 1]."""
        k = int(k)
        if self.kind == "constant":
            if k < 0:
                raise ValueError("iteration index must be nonnegative")
            return 1.0
        if not 0 <= k <= self.total_k:
            raise ValueError(f"iteration index {k} outside [0, {self.total_k}]")
        if self.total_k <= 1.0 / self.rho_tilde:
            return 1.0
        k0 = self.k0
        if k < k0:
            return 1.0
        return 2.0 / (2.0 + self.rho_tilde * (k - k0))

    def gammas(self, k):
        """(gamma_1, gamma_2) base stepsizes at iteration k (before any
        sample-dependent weight)."""
        g1 = self.beta(k) * self.base_gamma
        return g1, self.alpha * g1


def constant(gamma, alpha=0.25) -> StepsizePolicy:
    return StepsizePolicy(base_gamma=gamma, alpha=alpha, kind="constant")


def decreasing_k(gamma, total_k, rho_tilde, alpha=0.25) -> StepsizePolicy:
    return StepsizePolicy(
        base_gamma=gamma,
        alpha=alpha,
        kind="decreasing_k",
        total_k=int(total_k),
        rho_tilde=float(rho_tilde),
    )


def rho_tilde_sseg(scheme, op, base_gamma) -> float:
    """Per-step contraction rate for the same-sample method at alpha = 1/4:
    (1/8) * gamma * E[weight * mu_sample * (1 if mu >= 0 else 4)].

    For uniform sampling at gamma = 1/(6 L_max) this equals
    mu_bar / (48 L_max). Raises when the aggregate is not positive.
    """
    if base_gamma <= 0:
        raise ValueError("base_gamma must be positive")
    agg = sampling.scheme_mu_aggregate(scheme, op)
    value = base_gamma * agg / 8.0
    if value < 0:
        raise ValueError(
            f"negative contraction rate {value:.3e}: the sampling positivity "
            "condition is violated"
        )
    return value


def rho_tilde_iseg(mu, gamma) -> float:
    """Per-step contraction rate for the independent-samples method at
    alpha = 1/4: gamma * mu / 32."""
    if mu < 0 or gamma <= 0:
        raise ValueError("need mu >= 0 and gamma > 0")
    return gamma * mu / 32.0
