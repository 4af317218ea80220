"""Rate constants, convergence envelopes, and empirical certification of the
unified second-moment/inner-product assumption behind both solver families.

The unified assumption asks for nonnegative constants (A, B, C, D1, D2, rho)
with, at every state x and P = E[gamma_2 <g(x), x - x*>],

    E[gamma_2^2 ||g(x)||^2] <= 2 A P + C ||x - x*||^2 + D1          (moment)
    P >= rho ||x - x*||^2 + B G(x) - D2                             (progress)

from which the linear-to-neighborhood envelope
(1 + C - rho)^K R0^2 + (D1 + D2)/(rho - C) follows, or an averaged O(1/K)
bound on G when rho = C = 0 < B. This module computes the constants for both
methods, assembles the envelopes (always with the untightened constants, so
tests compare against exactly what the analysis guarantees), and
Monte-Carlo-checks the two inequalities on concrete operators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import sampling
from .operators import FiniteSumOperator, as_point
from .sampling import SamplingScheme


@dataclass(frozen=True)
class UnifiedParams:
    A: float
    B: float
    C: float
    D1: float
    D2: float
    rho: float

    def __post_init__(self):
        if min(self.A, self.B, self.C, self.D1, self.D2) < 0 or self.rho < 0:
            raise ValueError("unified constants must be nonnegative")

    def to_dict(self):
        return {"A": self.A, "B": self.B, "C": self.C,
                "D1": self.D1, "D2": self.D2, "rho": self.rho}


def sseg_params(scheme, op, gamma, alpha, x_star=None, sigma_as_sq=None) -> UnifiedParams:
    """Unified constants for the same-sample method under a sampling scheme:
    A = 2 alpha, C = 0, B = 1/2, D1 = 6 alpha^2 sigma_AS^2,
    D2 = 1.5 alpha sigma_AS^2, rho = (alpha/2) gamma E[weight mu (1 or 4)].
    """
    if gamma <= 0 or not 0 < alpha <= 1:
        raise ValueError("need gamma > 0 and alpha in (0, 1]")
    cap = sampling.stepsize_cap(scheme, op, rule="raw")
    if gamma > cap * (1 + 1e-12):
        raise ValueError(f"gamma {gamma:g} violates the per-sample cap {cap:g}")
    if sigma_as_sq is None:
        if x_star is None:
            x_star = op.solve_root()
        sigma_as_sq = gamma**2 * sampling.sigma_star_sq(scheme, op, x_star).value
    rho = 0.5 * alpha * gamma * sampling.scheme_mu_aggregate(scheme, op)
    return UnifiedParams(
        A=2.0 * alpha,
        B=0.5,
        C=0.0,
        D1=6.0 * alpha**2 * sigma_as_sq,
        D2=1.5 * alpha * sigma_as_sq,
        rho=rho,
    )


def iseg_stepsize_cap(mu, lipschitz, delta, batch) -> float:
    """Largest admissible gamma for the independent-samples method:
    min( mu b / (18 delta), 1 / (4 mu + sqrt(6 (L^2 + 2 delta / b))) )."""
    base = 1.0 / (4.0 * mu + math.sqrt(6.0 * (lipschitz**2 + 2.0 * delta / batch)))
    if delta == 0:
        return base
    return min(mu * batch / (18.0 * delta), base)


def iseg_params(mu, lipschitz, delta, sigma_sq, batch, gamma, alpha) -> UnifiedParams:
    """Unified constants for the mini-batched independent-samples method:
    A = 2 alpha, C = 9 delta alpha^2 gamma^2 / b, B = alpha gamma^2 / 4,
    D1 = 6 alpha^2 gamma^2 sigma^2 / b, D2 = 6 alpha gamma^2 sigma^2 / b,
    rho = alpha gamma mu / 4."""
    if gamma <= 0 or not 0 < alpha <= 1:
        raise ValueError("need gamma > 0 and alpha in (0, 1]")
    cap = iseg_stepsize_cap(mu, lipschitz, delta, batch)
    if gamma > cap * (1 + 1e-12):
        raise ValueError(f"gamma {gamma:g} violates the stepsize cap {cap:g}")
    return UnifiedParams(
        A=2.0 * alpha,
        B=alpha * gamma**2 / 4.0,
        C=9.0 * delta * alpha**2 * gamma**2 / batch,
        D1=6.0 * alpha**2 * gamma**2 * sigma_sq / batch,
        D2=6.0 * alpha * gamma**2 * sigma_sq / batch,
        rho=alpha * gamma * mu / 4.0,
    )


@dataclass
class RateBound:
    """An evaluable upper bound on the mean squared distance (or, for the
    averaged kind, on the running mean of G)."""

    kind: str  # "linear-to-neighborhood" | "decreasing-O(1/K)" | "averaged-norm"
    constants: dict

    def value(self, k) -> float:
        c = self.constants
        if self.kind == "linear-to-neighborhood":
            return c["factor"] ** k * c["r0_sq"] + c["plateau"]
        if self.kind == "averaged-norm":
            return c["r0_sq"] / (c["B"] * (k + 1)) + c["noise"]
        if k < 1:
            raise ValueError("the decreasing-schedule bound needs K >= 1")
        return c["head"] * math.exp(-c["rate"] * k) + c["tail"] / k

    def __call__(self, k):
        return self.value(k)

    def values(self, ks):
        return np.array([self.value(int(k)) for k in np.asarray(ks)])


def envelope(params: UnifiedParams, r0_sq) -> RateBound:
    """Bound from the unified constants: linear-to-neighborhood when
    rho > C, averaged-G when rho = C = 0 < B."""
    if params.A > 0.5 + 1e-12:
        raise ValueError("envelope requires A <= 1/2 (alpha <= 1/4)")
    if params.rho > params.C:
        return RateBound(
            kind="linear-to-neighborhood",
            constants={
                "factor": 1.0 + params.C - params.rho,
                "r0_sq": float(r0_sq),
                "plateau": (params.D1 + params.D2) / (params.rho - params.C),
            },
        )
    if params.rho == 0 and params.C == 0 and params.B > 0:
        return RateBound(
            kind="averaged-norm",
            constants={
                "B": params.B,
                "r0_sq": float(r0_sq),
                "noise": (params.D1 + params.D2) / params.B,
            },
        )
    raise ValueError("rho <= C with rho != 0: no envelope applies")


def iseg_constant_envelope(mu, gamma, alpha, sigma_sq, batch, r0_sq) -> RateBound:
    """Constant-step bound for the independent-samples method:
    (1 - alpha gamma mu / 8)^K R0^2 + 48 (alpha + 1) gamma sigma^2 / (mu b)."""
    if mu <= 0:
        raise ValueError("needs mu > 0")
    return RateBound(
        kind="linear-to-neighborhood",
        constants={
            "factor": 1.0 - alpha * gamma * mu / 8.0,
            "r0_sq": float(r0_sq),
            "plateau": 48.0 * (alpha + 1.0) * gamma * sigma_sq / (mu * batch),
        },
    )


def sseg_decreasing_envelope(rho_tilde, sigma_as_sq, r0_sq) -> RateBound:
    """Decreasing-schedule bound (alpha = 1/4):
    (32 R0^2 / rho_tilde) exp(-rho_tilde K / 2) + 27 sigma_AS^2 / (rho_tilde^2 K)."""
    if rho_tilde <= 0:
        raise ValueError("needs rho_tilde > 0")
    return RateBound(
        kind="decreasing-O(1/K)",
        constants={
            "head": 32.0 * r0_sq / rho_tilde,
            "rate": rho_tilde / 2.0,
            "tail": 27.0 * sigma_as_sq / rho_tilde**2,
            "rho_tilde": rho_tilde,
        },
    )


def iseg_decreasing_envelope(mu, lipschitz, gamma, sigma_sq, batch, delta, r0_sq) -> RateBound:
    """Decreasing-schedule bound (alpha = 1/4):
    (1024 R0^2 / (gamma mu)) exp(-gamma mu K / 64) + 69120 sigma^2 / (mu^2 b K);
    the condition number max(delta/(mu^2 b), (L + sqrt(delta/b))/mu) is reported."""
    if mu <= 0 or gamma <= 0:
        raise ValueError("needs mu > 0 and gamma > 0")
    kappa = max(delta / (mu**2 * batch), (lipschitz + math.sqrt(delta / batch)) / mu)
    return RateBound(
        kind="decreasing-O(1/K)",
        constants={
            "head": 1024.0 * r0_sq / (gamma * mu),
            "rate": gamma * mu / 64.0,
            "tail": 69120.0 * sigma_sq / (mu**2 * batch),
            "kappa": kappa,
        },
    )


def decreasing_envelope(method, r0_sq, *, scheme=None, op=None, gamma=None,
                        mu=None, lipschitz=None, sigma_sq=None, batch=None,
                        delta=0.0) -> RateBound:
    """Dispatcher for the decreasing-schedule bounds of either method."""
    if method == "sseg":
        from . import schedule as _schedule

        rho_tilde = _schedule.rho_tilde_sseg(scheme, op, gamma)
        if rho_tilde <= 0:
            raise ValueError("decreasing-schedule bound needs rho_tilde > 0")
        sigma_as = gamma**2 * sampling.sigma_star_sq(scheme, op, op.solve_root()).value
        return sseg_decreasing_envelope(rho_tilde, sigma_as, r0_sq)
    if method == "iseg":
        return iseg_decreasing_envelope(mu, lipschitz, gamma, sigma_sq, batch, delta, r0_sq)
    raise ValueError(f"unknown method {method!r}")


def recursion_envelope(policy, rate, additive, r0_sq, ks) -> np.ndarray:
    """Chain the one-step bound r <- (1 - beta_k rate) r + beta_k^2 additive
    along a stepsize policy; a valid per-iteration envelope for any policy."""
    ks = np.asarray(ks, dtype=np.int64)
    out = np.empty(ks.size)
    r = float(r0_sq)
    pos = 0
    for k in range(int(ks.max()) + 1):
        if pos < ks.size and ks[pos] == k:
            out[pos] = r
            pos += 1
        if k >= int(ks.max()):
            break
        b = policy.beta(k)
        r = (1.0 - b * rate) * r + b * b * additive
    return out


# ---------------------------------------------------------------------------
# Empirical certification of the unified assumption


@dataclass(frozen=True)
class SsegTarget:
    scheme: SamplingScheme
    gamma: float
    alpha: float = 0.25


@dataclass(frozen=True)
class IsegTarget:
    batch: int
    gamma: float
    alpha: float = 0.25
    delta: float = 0.0
    sigma_sq: float = 0.0


@dataclass
class PointCheck:
    sq_dist: float
    moment_margin: float
    moment_se: float
    progress_margin: float
    progress_se: float

    def ok(self, se_factor=3.0):
        tol = 1e-9 * (1.0 + self.sq_dist)
        return (
            self.moment_margin <= se_factor * self.moment_se + tol
            and self.progress_margin <= se_factor * self.progress_se + tol
        )


@dataclass
class CertificationReport:
    params: UnifiedParams
    checks: list
    samples_per_point: int

    def passed(self, se_factor=3.0):
        return all(c.ok(se_factor) for c in self.checks)

    def worst(self):
        def slack(c):
            return max(
                c.moment_margin - 3.0 * c.moment_se,
                c.progress_margin - 3.0 * c.progress_se,
            )

        return max(slack(c) for c in self.checks)

    def to_json(self, indent=None):
        return json.dumps(
            {
                "params": self.params.to_dict(),
                "samples_per_point": self.samples_per_point,
                "passed": self.passed(),
                "points": [
                    {
                        "sq_dist": c.sq_dist,
                        "moment_margin": c.moment_margin,
                        "moment_se": c.moment_se,
                        "progress_margin": c.progress_margin,
                        "progress_se": c.progress_se,
                        "ok": c.ok(),
                    }
                    for c in self.checks
                ],
            },
            indent=indent,
        )


def _sample_constant_table(op, scheme):
    """Per-outcome (L, mu) lookup with caching by index multiset."""
    lips, mus = op.all_constants()
    cache = {}

    def lookup(idx):
        key = tuple(np.sort(np.asarray(idx)))
        if key not in cache:
            cache[key] = sampling._sample_constants(op, idx, lips, mus)
        return cache[key]

    return lookup


def _eval_rows(op, idx, points):
    """Mean of components idx[s] at points[s]; chunked gather."""
    out = np.empty_like(points)
    chunk = max(1, int(2_000_000 // max(1, idx.shape[1] * op.dim * op.dim)))
    for lo in range(0, idx.shape[0], chunk):
        hi = lo + chunk
        sub = op.matrix_stack[idx[lo:hi]]
        vals = np.einsum("sbij,sj->sbi", sub, points[lo:hi])
        vals += op.offset_stack[idx[lo:hi]]
        out[lo:hi] = vals.mean(axis=1)
    return out


def _certify_point_sseg(op, target, params, x, x_star, n_samples, rng):
    scheme, gamma, alpha = target.scheme, target.gamma, target.alpha
    r_sq = float(np.sum((x - x_star) ** 2))
    comp_vals = op.residuals_at(x)
    lookup = _sample_constant_table(op, scheme)

    idx, w = scheme.draw_block(rng, n_samples)
    if isinstance(idx, list):
        rows = []
        g1s = np.empty(n_samples)
        f1 = np.zeros((n_samples, op.dim))
        consts = np.zeros((n_samples, 2))
        for s, ind in enumerate(idx):
            g1s[s] = gamma * w[s]
            if ind.size == 0 or w[s] == 0.0:
                consts[s] = (0.0, 0.0)
                continue
            f1[s] = comp_vals[ind].mean(axis=0)
            consts[s] = lookup(ind)
        x_half = x[None, :] - g1s[:, None] * f1
        g = np.zeros_like(f1)
        for s, ind in enumerate(idx):
            if ind.size and w[s] != 0.0:
                g[s] = op.eval_mean(ind, x_half[s])
        l_s, mu_s = consts[:, 0], consts[:, 1]
    else:
        g1s = gamma * w
        f1 = comp_vals[idx].mean(axis=1)
        x_half = x[None, :] - g1s[:, None] * f1
        g = _eval_rows(op, idx, x_half)
        pairs = np.array([lookup(row) for row in idx])
        l_s, mu_s = pairs[:, 0], pairs[:, 1]

    g2s = alpha * g1s
    q = g2s**2 * np.sum(g**2, axis=1)
    p = g2s * (g @ (x - x_star))
    b_hat = 1.0 - 4.0 * np.abs(mu_s) * g1s - 2.0 * l_s**2 * g1s**2
    g_term = alpha * g1s**2 * b_hat * np.sum(f1**2, axis=1)

    m4_draws = q - 2.0 * params.A * p - params.C * r_sq - params.D1
    m5_draws = params.rho * r_sq + params.B * g_term - params.D2 - p
    return PointCheck(
        sq_dist=r_sq,
        moment_margin=float(m4_draws.mean()),
        moment_se=float(m4_draws.std(ddof=1) / math.sqrt(n_samples)),
        progress_margin=float(m5_draws.mean()),
        progress_se=float(m5_draws.std(ddof=1) / math.sqrt(n_samples)),
    )


def _certify_point_iseg(op, target, params, x, x_star, n_samples, rng):
    gamma, alpha, b = target.gamma, target.alpha, target.batch
    r_sq = float(np.sum((x - x_star) ** 2))
    comp_vals = op.residuals_at(x)
    idx = rng.integers(0, op.n, size=(n_samples, 2, b))
    f1 = comp_vals[idx[:, 0, :]].mean(axis=1)
    x_half = x[None, :] - gamma * f1
    g = _eval_rows(op, idx[:, 1, :], x_half)

    g2 = alpha * gamma
    q = g2**2 * np.sum(g**2, axis=1)
    p = g2 * (g @ (x - x_star))
    g_term = np.sum(f1**2, axis=1)

    m4_draws = q - 2.0 * params.A * p - params.C * r_sq - params.D1
    m5_draws = params.rho * r_sq + params.B * g_term - params.D2 - p
    return PointCheck(
        sq_dist=r_sq,
        moment_margin=float(m4_draws.mean()),
        moment_se=float(m4_draws.std(ddof=1) / math.sqrt(n_samples)),
        progress_margin=float(m5_draws.mean()),
        progress_se=float(m5_draws.std(ddof=1) / math.sqrt(n_samples)),
    )


def certify_unified_assumption(
    op, target, points, samples_per_point=10_000, rng=None, x_star=None
) -> CertificationReport:
    """Monte-Carlo check of the two unified inequalities at each test point.

    Margins are LHS - RHS per inequality (expected <= 0 within confidence);
    each point reports the margin and its standard error over the draws.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if x_star is None:
        x_star = op.solve_root()
    x_star = as_point(x_star, op.dim)

    if isinstance(target, SsegTarget):
        params = sseg_params(target.scheme, op, target.gamma, target.alpha, x_star=x_star)
        point_fn = _certify_point_sseg
    elif isinstance(target, IsegTarget):
        lip, mu = op.constants()
        params = iseg_params(
            mu, lip, target.delta, target.sigma_sq, target.batch, target.gamma, target.alpha
        )
        point_fn = _certify_point_iseg
    else:
        raise TypeError(f"unknown certification target {target!r}")

    checks = [
        point_fn(op, target, params, as_point(x, op.dim), x_star, samples_per_point, rng)
        for x in points
    ]
    return CertificationReport(params=params, checks=checks, samples_per_point=samples_per_point)


def rate_report(op: FiniteSumOperator, scheme=None, gamma=None, alpha=0.25,
                iseg_batch=None, r0_sq=1.0) -> dict:
    """All rate constants for a problem (and optionally a scheme) as a dict."""
    from . import schedule as _schedule

    lips, mus = op.all_constants()
    x_star = op.solve_root()
    residuals = op.residuals_at(x_star)
    sigma_us = float(np.mean(np.sum(residuals**2, axis=1)))
    lip_full, mu_full = op.constants()
    report = {
        "n": op.n,
        "dim": op.dim,
        "lipschitz_full": lip_full,
        "mu_full": mu_full,
        "l_max": float(lips.max()),
        "l_bar": float(lips.mean()),
        "mu_bar_components": sampling.mu_bar_components(mus),
        "sigma_us_star_sq": sigma_us,
    }
    if scheme is not None:
        consts = sampling.scheme_constants(scheme, op, x_star)
        cap_closed = sampling.stepsize_cap(scheme, op, rule="closed")
        g = cap_closed if gamma is None else gamma
        params = sseg_params(scheme, op, g, alpha, x_star=x_star)
        rho_tilde = _schedule.rho_tilde_sseg(scheme, op, g)
        sseg = {
            "scheme": scheme.spec_string(),
            "mu_bar": consts.mu_bar,
            "sigma_star_sq": consts.sigma_star_sq,
            "l_eff": consts.l_eff,
            "gamma": g,
            "alpha": alpha,
            "cap_closed": cap_closed,
            "cap_raw": sampling.stepsize_cap(scheme, op, rule="raw"),
            "unified": params.to_dict(),
            "rho_tilde": rho_tilde,
        }
        if params.rho > 0 and alpha <= 0.25:
            env = envelope(params, r0_sq)
            sseg["plateau"] = env.constants["plateau"]
            if rho_tilde > 0:
                dec = sseg_decreasing_envelope(
                    rho_tilde, g**2 * consts.sigma_star_sq, r0_sq
                )
                sseg["decreasing_head"] = dec.constants["head"]
                sseg["decreasing_tail"] = dec.constants["tail"]
        report["sseg"] = sseg
    if iseg_batch is not None:
        delta, sigma_sq = 0.0, sigma_us
        cap = iseg_stepsize_cap(mu_full, lip_full, delta, iseg_batch)
        g = cap if gamma is None else min(gamma, cap)
        params = iseg_params(mu_full, lip_full, delta, sigma_sq, iseg_batch, g, alpha)
        report["iseg"] = {
            "batch": iseg_batch,
            "gamma": g,
            "alpha": alpha,
            "cap": cap,
            "unified": params.to_dict(),
            "plateau": 48.0 * (alpha + 1.0) * g * sigma_sq / (mu_full * iseg_batch),
            "rho_tilde": _schedule.rho_tilde_iseg(mu_full, g),
            "kappa": (lip_full + math.sqrt(delta / iseg_batch)) / mu_full,
        }
    return report
