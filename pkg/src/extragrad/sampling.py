"""Index-sampling schemes with sample-dependent stepsize multipliers.

Five schemes over a finite sum of n components:

  * uniform i.i.d. batches of size b (weight 1),
  * importance sampling of a single index with P(i) proportional to L_i
    (weight Lbar / L_i, so larger steps on easier components),
  * b-nice sampling: a uniform random b-subset without replacement (weight 1),
  * independent sampling with replacement from arbitrary probabilities
    (weight 1 / (n^b * p_sample), making the weighted estimator unbiased),
  * independent inclusion of each index with its own probability, random
    batch size (weight |S| / (p_S * 2^(n-1) * n); the empty draw is a no-op).

Expectations over a scheme are computed by exact enumeration whenever the
outcome count is at most ENUM_LIMIT, otherwise by documented bounds or
Monte-Carlo with a reported standard error. Schemes are immutable; draws take
a caller-owned numpy Generator, so concurrent runs each own their stream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .operators import FiniteSumOperator, as_point

ENUM_LIMIT = 1_000_000
SPECTRAL_ENUM_LIMIT = 20_000  # above this, per-sample spectra fall back to mean bounds
MC_DRAWS = 100_000


@dataclass
class Sample:
    indices: np.ndarray  # index multiset/subset, possibly empty
    weight: float  # stepsize multiplier gamma_{1,sample} / gamma

    @property
    def size(self):
        return int(self.indices.size)


def _g_mu(x):
    """Indicator-weighted monotonicity transform: x for x >= 0, 4x otherwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, 4.0 * x)


def mu_bar_components(mus) -> float:
    """Indicator-weighted average of component constants
    (negatives weighted four times)."""
    mus = np.asarray(mus, dtype=np.float64)
    return float(np.mean(_g_mu(mus)))


class SamplingScheme:
    """Base class; subclasses fix the distribution and the weight rule."""

    n: int

    def draw(self, rng) -> Sample:
        raise NotImplementedError

    def draw_block(self, rng, count):
        """Vectorized draws for a solver run: (indices, weights).

        Fixed-size schemes return an int array of shape (count, b); the
        variable-size scheme returns a list of index arrays.
        """
        raise NotImplementedError

    def outcome_count(self) -> int:
        raise NotImplementedError

    @property
    def enumerable(self) -> bool:
        return self.outcome_count() <= ENUM_LIMIT

    def outcomes(self):
        """Yield (probability, Sample) over the full outcome space."""
        raise NotImplementedError

    def spec_string(self) -> str:
        raise NotImplementedError


class UniformScheme(SamplingScheme):
    """b i.i.d. uniform indices, constant stepsize (weight 1)."""

    def __init__(self, n, b=1):
        if not 1 <= b:
            raise ValueError("batch size must be >= 1")
        self.n = int(n)
        self.b = int(b)

    def draw(self, rng):
        return Sample(rng.integers(0, self.n, size=self.b), 1.0)

    def draw_block(self, rng, count):
        idx = rng.integers(0, self.n, size=(count, self.b))
        return idx, np.ones(count)

    def outcome_count(self):
        return self.n**self.b

    def outcomes(self):
        prob = 1.0 / self.n**self.b
        for tup in itertools.product(range(self.n), repeat=self.b):
            yield prob, Sample(np.array(tup, dtype=np.intp), 1.0)

    def spec_string(self):
        return f"us:b={self.b}"


class ImportanceScheme(SamplingScheme):
    """One index with P(i) proportional to L_i and weight Lbar / L_i."""

    def __init__(self, n, lipschitz):
        self.n = int(n)
        lips = np.asarray(lipschitz, dtype=np.float64)
        if lips.shape != (self.n,) or np.any(lips <= 0):
            raise ValueError("need one positive Lipschitz constant per component")
        self.lipschitz = lips
        self.l_bar = float(lips.mean())
        self.probs = lips / lips.sum()
        self._cdf = np.cumsum(self.probs)
        self.weights = self.l_bar / lips

    def draw(self, rng):
        i = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        i = min(i, self.n - 1)
        return Sample(np.array([i], dtype=np.intp), float(self.weights[i]))

    def draw_block(self, rng, count):
        idx = np.searchsorted(self._cdf, rng.random(count), side="right")
        idx = np.minimum(idx, self.n - 1).astype(np.intp)
        return idx[:, None], self.weights[idx]

    def outcome_count(self):
        return self.n

    def outcomes(self):
        for i in range(self.n):
            yield float(self.probs[i]), Sample(
                np.array([i], dtype=np.intp), float(self.weights[i])
            )

    def spec_string(self):
        return "is"


class NiceScheme(SamplingScheme):
    """Uniformly random b-subset without replacement, weight 1."""

    def __init__(self, n, b):
        if not 1 <= b <= n:
            raise ValueError("need 1 <= b <= n")
        self.n = int(n)
        self.b = int(b)

    def draw(self, rng):
        order = np.argsort(rng.random(self.n), kind="stable")
        return Sample(np.sort(order[: self.b]).astype(np.intp), 1.0)

    def draw_block(self, rng, count):
        keys = rng.random((count, self.n))
        idx = np.sort(np.argsort(keys, axis=1, kind="stable")[:, : self.b], axis=1)
        return idx.astype(np.intp), np.ones(count)

    def outcome_count(self):
        return math.comb(self.n, self.b)

    def outcomes(self):
        prob = 1.0 / math.comb(self.n, self.b)
        for tup in itertools.combinations(range(self.n), self.b):
            yield prob, Sample(np.array(tup, dtype=np.intp), 1.0)

    def spec_string(self):
        return f"nice:b={self.b}"


class WithReplacementScheme(SamplingScheme):
    """b i.i.d. indices from arbitrary probabilities p_i.

    The weight 1 / (n^b * p_sample) factors as a product of 1 / (n p_i), so
    the weighted estimator is exactly unbiased; with b = 1 it reduces to the
    uniform (p_i = 1/n) and importance (p_i proportional to L_i) weights.
    """

    def __init__(self, n, b, probs=None):
        self.n = int(n)
        self.b = int(b)
        if self.b < 1:
            raise ValueError("batch size must be >= 1")
        if probs is None:
            probs = np.full(self.n, 1.0 / self.n)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (self.n,) or np.any(probs <= 0):
            raise ValueError("probabilities must be positive, one per component")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        self.probs = probs / probs.sum()
        self._cdf = np.cumsum(self.probs)
        self._weight1 = 1.0 / (self.n * self.probs)

    @property
    def uniform(self):
        return bool(np.allclose(self.probs, 1.0 / self.n, rtol=0, atol=1e-12))

    def _weight_of(self, idx):
        return float(np.prod(self._weight1[np.asarray(idx, dtype=np.intp)]))

    def draw(self, rng):
        idx = np.searchsorted(self._cdf, rng.random(self.b), side="right")
        idx = np.minimum(idx, self.n - 1).astype(np.intp)
        return Sample(idx, self._weight_of(idx))

    def draw_block(self, rng, count):
        idx = np.searchsorted(self._cdf, rng.random((count, self.b)), side="right")
        idx = np.minimum(idx, self.n - 1).astype(np.intp)
        return idx, np.prod(self._weight1[idx], axis=1)

    def outcome_count(self):
        return self.n**self.b

    def outcomes(self):
        for tup in itertools.product(range(self.n), repeat=self.b):
            idx = np.array(tup, dtype=np.intp)
            prob = float(np.prod(self.probs[idx]))
            yield prob, Sample(idx, self._weight_of(idx))

    def spec_string(self):
        return f"iwr:b={self.b}"


class WithoutReplacementScheme(SamplingScheme):
    """Each index included independently with its own probability p_i.

    Batch size is random; the empty subset draws weight 0 and the step
    becomes a no-op, consistent with the |S| factor in the weight.
    """

    def __init__(self, n, probs):
        self.n = int(n)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 0:
            probs = np.full(self.n, float(probs))
        if probs.shape != (self.n,) or np.any(probs <= 0) or np.any(probs >= 1):
            raise ValueError("inclusion probabilities must lie in (0, 1)")
        self.probs = probs
        self._scale = 1.0 / (2.0 ** (self.n - 1) * self.n)

    def _weight_of(self, mask):
        size = int(mask.sum())
        if size == 0:
            return 0.0
        p_s = float(np.prod(np.where(mask, self.probs, 1.0 - self.probs)))
        return size * self._scale / p_s

    def draw(self, rng):
        mask = rng.random(self.n) < self.probs
        return Sample(np.nonzero(mask)[0].astype(np.intp), self._weight_of(mask))

    def draw_block(self, rng, count):
        masks = rng.random((count, self.n)) < self.probs
        indices = [np.nonzero(m)[0].astype(np.intp) for m in masks]
        weights = np.array([self._weight_of(m) for m in masks])
        return indices, weights

    def outcome_count(self):
        return 2**self.n

    def outcomes(self):
        for bits in itertools.product((False, True), repeat=self.n):
            mask = np.array(bits)
            prob = float(np.prod(np.where(mask, self.probs, 1.0 - self.probs)))
            yield prob, Sample(np.nonzero(mask)[0].astype(np.intp), self._weight_of(mask))

    def spec_string(self):
        return f"iswor:p={self.probs[0]:g}"


def parse_scheme(spec: str, op: FiniteSumOperator) -> SamplingScheme:
    """Parse a CLI scheme string: us:b=1 | is | nice:b=16 | iwr:b=4 | iswor:p=0.3."""
    spec = spec.strip().lower()
    name, _, argpart = spec.partition(":")
    args = {}
    if argpart:
        for piece in argpart.split(","):
            key, _, val = piece.partition("=")
            if not val:
                raise ValueError(f"bad scheme argument {piece!r} in {spec!r}")
            args[key.strip()] = val.strip()
    n = op.n
    if name == "us":
        return UniformScheme(n, b=int(args.get("b", 1)))
    if name == "is":
        lips, _ = op.all_constants()
        return ImportanceScheme(n, lips)
    if name == "nice":
        return NiceScheme(n, b=int(args.get("b", 1)))
    if name == "iwr":
        return WithReplacementScheme(n, b=int(args.get("b", 1)))
    if name == "iswor":
        return WithoutReplacementScheme(n, float(args.get("p", 0.5)))
    raise ValueError(f"unknown sampling scheme {spec!r}")


def apply_sample(op: FiniteSumOperator, sample: Sample, x) -> np.ndarray:
    """Average of F_i(x) over the sampled indices (with multiplicity)."""
    if sample.size == 0:
        raise ValueError("empty sample")
    return op.eval_mean(sample.indices, x)


def _sample_constants(op, indices, lips, mus, spectral=True):
    """(L, mu) for the averaged operator over an index multiset: exact spectra
    for affine operators, otherwise the mean bounds (L upper, mu lower)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 1:
        return float(lips[idx[0]]), float(mus[idx[0]])
    if spectral and op is not None and op.is_affine:
        return op.subset_constants(idx)
    return float(lips[idx].mean()), float(mus[idx].mean())


def _mu_aggregate(scheme, mus, op=None, lips=None):
    """E[weight * g(mu_sample)] by enumeration; falls back to the component
    aggregate when the outcome space is too large. The fallback lower-bounds
    the scheme aggregate for every scheme here (g is concave and the weighted
    estimator is unbiased), so it never overstates the contraction rate."""
    mus = np.asarray(mus, dtype=np.float64)
    if lips is None:
        lips = np.zeros_like(mus)
    if not scheme.enumerable:
        return mu_bar_components(mus)
    count = scheme.outcome_count()
    spectral = op is not None and op.is_affine and count <= SPECTRAL_ENUM_LIMIT
    if not spectral and np.all(mus >= 0):
        # every sample mean is nonnegative, so g is the identity and weighted
        # unbiasedness gives the plain component mean exactly
        return float(mus.mean())
    total = 0.0
    for prob, sample in scheme.outcomes():
        if sample.weight == 0.0 or sample.size == 0:
            continue
        _, mu_s = _sample_constants(op, sample.indices, lips, mus, spectral=spectral)
        total += prob * sample.weight * float(_g_mu(mu_s))
    return total


def mu_bar(scheme: SamplingScheme, mus) -> float:
    """Aggregate quasi-monotonicity constant of the scheme, using the
    subset-mean lower bound for per-sample constants.

    A negative result means the positivity side condition fails.
    """
    mus = np.asarray(mus, dtype=np.float64)
    if mus.shape != (scheme.n,):
        raise ValueError("need one mu per component")
    return _mu_aggregate(scheme, mus, op=None, lips=None)


def scheme_mu_aggregate(scheme: SamplingScheme, op: FiniteSumOperator) -> float:
    """Like mu_bar but with exact spectral subset constants where affordable."""
    lips, mus = op.all_constants()
    return _mu_aggregate(scheme, mus, op=op, lips=lips)


class SigmaStarSq(NamedTuple):
    value: float
    stderr: float
    exact: bool


def _check_root(op, x_star, residuals):
    scale = 1.0 + float(np.mean(np.linalg.norm(residuals, axis=1)))
    norm = float(np.linalg.norm(residuals.mean(axis=0)))
    if norm > 1e-8 * scale:
        raise ValueError(f"x_star is not a root: ||F(x*)|| = {norm:.3e}")


def sigma_star_sq(scheme, op, x_star, rng=None, draws=MC_DRAWS) -> SigmaStarSq:
    """Stepsize-weighted variance of the estimator at the root:
    E[weight^2 ||F_sample(x*)||^2].

    Closed forms for the uniform, importance, and b-nice schemes; exact
    enumeration for the independent schemes when feasible, else Monte-Carlo
    with a standard error.
    """
    x_star = as_point(x_star, op.dim)
    residuals = op.residuals_at(x_star)
    _check_root(op, x_star, residuals)
    sq_norms = np.sum(residuals**2, axis=1)
    sigma_us = float(sq_norms.mean())

    if isinstance(scheme, UniformScheme):
        return SigmaStarSq(sigma_us / scheme.b, 0.0, True)
    if isinstance(scheme, ImportanceScheme):
        return SigmaStarSq(float(np.mean(scheme.weights * sq_norms)), 0.0, True)
    if isinstance(scheme, NiceScheme):
        n, b = scheme.n, scheme.b
        if n == b:
            return SigmaStarSq(0.0, 0.0, True)
        return SigmaStarSq((n - b) / (b * (n - 1)) * sigma_us, 0.0, True)

    if scheme.enumerable:
        total = 0.0
        for prob, sample in scheme.outcomes():
            if sample.weight == 0.0 or sample.size == 0:
                continue
            f_s = residuals[sample.indices].mean(axis=0)
            total += prob * sample.weight**2 * float(f_s @ f_s)
        return SigmaStarSq(total, 0.0, True)

    rng = np.random.default_rng(0) if rng is None else rng
    vals = np.empty(draws)
    for k in range(draws):
        sample = scheme.draw(rng)
        if sample.weight == 0.0 or sample.size == 0:
            vals[k] = 0.0
            continue
        f_s = residuals[sample.indices].mean(axis=0)
        vals[k] = sample.weight**2 * float(f_s @ f_s)
    return SigmaStarSq(
        float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws)), False
    )


@dataclass
class ConditionReport:
    unbiased_norm: float
    unbiased_ok: bool
    mu_aggregate: float
    mu_aggregate_ok: bool
    exact: bool

    @property
    def passed(self):
        return self.unbiased_ok and self.mu_aggregate_ok

    def to_dict(self):
        return {
            "unbiased_norm": self.unbiased_norm,
            "unbiased_ok": self.unbiased_ok,
            "mu_aggregate": self.mu_aggregate,
            "mu_aggregate_ok": self.mu_aggregate_ok,
            "exact": self.exact,
            "passed": self.passed,
        }


def verify_conditions(scheme, op, x_star) -> ConditionReport:
    """Check the two arbitrary-sampling side conditions at the root:
    weighted unbiasedness E[weight * F_sample(x*)] = 0 and nonnegativity of
    the aggregate quasi-monotonicity constant."""
    x_star = as_point(x_star, op.dim)
    residuals = op.residuals_at(x_star)
    scale = 1.0 + float(np.mean(np.linalg.norm(residuals, axis=1)))

    if scheme.enumerable:
        acc = np.zeros(op.dim)
        for prob, sample in scheme.outcomes():
            if sample.weight == 0.0 or sample.size == 0:
                continue
            acc += prob * sample.weight * residuals[sample.indices].mean(axis=0)
        unbiased_norm = float(np.linalg.norm(acc))
        exact = True
    else:
        # All five schemes satisfy E[weight * F_sample(x)] = F(x) identically,
        # so the condition reduces to the root residual itself.
        unbiased_norm = float(np.linalg.norm(residuals.mean(axis=0)))
        exact = False

    agg = scheme_mu_aggregate(scheme, op)
    return ConditionReport(
        unbiased_norm=unbiased_norm,
        unbiased_ok=unbiased_norm <= 1e-8 * scale,
        mu_aggregate=agg,
        mu_aggregate_ok=agg >= -1e-12,
        exact=exact,
    )


def effective_lipschitz(scheme, op) -> float:
    """The Lipschitz scale entering the closed-form stepsize caps:
    the largest weight * L_sample over realizable samples.

    Closed forms: L_max for uniform batches (the worst multiset repeats the
    worst component), the mean constant for importance sampling (the weight
    cancels L exactly). Subset schemes enumerate exact spectra when cheap and
    otherwise use the subset-mean upper bound.
    """
    lips, mus = op.all_constants()
    if isinstance(scheme, UniformScheme):
        return float(np.max(lips))
    if isinstance(scheme, ImportanceScheme):
        return scheme.l_bar
    if isinstance(scheme, WithReplacementScheme) and scheme.uniform:
        return float(np.max(lips))
    count = scheme.outcome_count()
    if isinstance(scheme, NiceScheme) and (
        count > SPECTRAL_ENUM_LIMIT or not op.is_affine
    ):
        # the mean of the b largest constants bounds every subset mean
        return float(np.sort(lips)[-scheme.b :].mean())
    if count > ENUM_LIMIT:
        raise ValueError("scheme too large to enumerate an effective Lipschitz constant")
    spectral = op.is_affine and count <= SPECTRAL_ENUM_LIMIT
    best = 0.0
    for _, sample in scheme.outcomes():
        if sample.weight == 0.0 or sample.size == 0:
            continue
        l_s, _ = _sample_constants(op, sample.indices, lips, mus, spectral=spectral)
        best = max(best, sample.weight * l_s)
    return best


_RAW_SLOPE = 4.0 + math.sqrt(2.0)


def stepsize_cap(scheme, op, rule="closed") -> float:
    """Largest base stepsize compatible with the scheme.

    rule="closed": the closed form 1 / (6 * effective Lipschitz constant),
    sufficient for every realizable sample since |mu| <= L.
    rule="raw": the per-sample bound, the largest gamma with
    gamma * weight <= 1 / (4 |mu_sample| + sqrt(2) L_sample) for all samples;
    exact spectra are used when the outcome space is small, the conservative
    (4 + sqrt(2)) L bound otherwise.
    """
    if rule == "closed":
        return 1.0 / (6.0 * effective_lipschitz(scheme, op))
    if rule != "raw":
        raise ValueError(f"unknown stepsize rule {rule!r}")
    lips, mus = op.all_constants()
    count = scheme.outcome_count()
    if count > ENUM_LIMIT:
        return 1.0 / (_RAW_SLOPE * effective_lipschitz(scheme, op))
    spectral = op.is_affine and count <= SPECTRAL_ENUM_LIMIT
    cap = math.inf
    for _, sample in scheme.outcomes():
        if sample.weight == 0.0 or sample.size == 0:
            continue
        l_s, mu_s = _sample_constants(op, sample.indices, lips, mus, spectral=spectral)
        if spectral or sample.size == 1:
            denom = 4.0 * abs(mu_s) + math.sqrt(2.0) * l_s
        else:
            denom = _RAW_SLOPE * l_s
        cap = min(cap, 1.0 / (sample.weight * denom))
    return cap


@dataclass(frozen=True)
class SchemeConstants:
    mu_bar: float
    sigma_star_sq: float | None
    l_eff: float


def scheme_constants(scheme, op, x_star=None) -> SchemeConstants:
    """Bundle of the scheme's aggregate constants for rate computations."""
    sigma = None
    if x_star is not None:
        sigma = sigma_star_sq(scheme, op, x_star).value
    return SchemeConstants(
        mu_bar=scheme_mu_aggregate(scheme, op),
        sigma_star_sq=sigma,
        l_eff=effective_lipschitz(scheme, op),
    )
