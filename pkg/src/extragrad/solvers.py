"""Iteration engines: same-sample and independent-samples stochastic
extragradient, plus the deterministic full-batch method as the degenerate case.

A step extrapolates with gamma_1 and updates with gamma_2 = alpha * gamma_1:

    x_half = x - gamma_1 * Fhat_1(x)
    x_next = x - gamma_2 * Fhat_2(x_half)

The same-sample variant evaluates both estimators on one drawn sample (with
the sample's stepsize multiplier folded into gamma_1); the independent variant
draws two fresh uniform mini-batches. Full batches (or batch size n) reduce
both to the deterministic method, bit-identically.

A single run is strictly sequential; multiple runs execute in lockstep inside
one vectorized engine, each with its own counter-based random stream keyed by
(seed, run index), so results are independent of scheduling and of whether
runs execute alone or together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import FiniteSumOperator, as_point
from .sampling import Sample, SamplingScheme
from .schedule import StepsizePolicy

DIVERGENCE_FACTOR = 1e12


class DivergenceError(RuntimeError):
    """Raised when iterates blow up or become non-finite."""


@dataclass(frozen=True)
class SSEG:
    scheme: SamplingScheme


@dataclass(frozen=True)
class ISEG:
    batch: int

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")


@dataclass(frozen=True)
class EG:
    pass


@dataclass
class SolverConfig:
    method: object  # SSEG | ISEG | EG
    policy: StepsizePolicy
    total_k: int
    record_every: int | None = None  # default: ~100 checkpoints
    seed: int = 0

    def __post_init__(self):
        if self.total_k < 0:
            raise ValueError("iteration budget must be nonnegative")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    def checkpoints(self):
        stride = self.record_every
        if stride is None:
            stride = max(1, -(-self.total_k // 100))
        ks = sorted(set(range(0, self.total_k + 1, stride)) | {0, self.total_k})
        return np.array(ks, dtype=np.int64)


@dataclass
class Trajectory:
    ks: np.ndarray
    sq_dist: np.ndarray
    op_norm_sq: np.ndarray
    betas: np.ndarray
    final: np.ndarray
    mode: str = "distance"
    avg_op_norm_sq: float | None = None


@dataclass
class MultiTrajectory:
    ks: np.ndarray
    sq_dist: np.ndarray  # (runs, checkpoints)
    op_norm_sq: np.ndarray  # (runs, checkpoints)
    betas: np.ndarray
    finals: np.ndarray  # (runs, dim)
    mode: str = "distance"
    avg_op_norm_sq: np.ndarray | None = None

    def run(self, r) -> Trajectory:
        return Trajectory(
            ks=self.ks,
            sq_dist=self.sq_dist[r],
            op_norm_sq=self.op_norm_sq[r],
            betas=self.betas,
            final=self.finals[r],
            mode=self.mode,
            avg_op_norm_sq=None
            if self.avg_op_norm_sq is None
            else float(self.avg_op_norm_sq[r]),
        )


def run_stream(seed, run_index):
    """Random stream for one run, split deterministically from the base seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run_index),))
    return np.random.Generator(np.random.Philox(ss))


def _finite_or_raise(x, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}")
    return x


def sseg_step(op, sample: Sample, x, gamma1_base, alpha, beta_k=1.0):
    """One same-sample step; the drawn sample is used for both evaluations.

    The effective extrapolation stepsize is beta_k * gamma1_base * weight.
    An empty or weight-zero sample is a no-op.
    """
    x = as_point(x, op.dim)
    if sample.size == 0 or sample.weight == 0.0:
        return x.copy()
    gamma1 = beta_k * gamma1_base * sample.weight
    f_x = op.eval_mean(sample.indices, x)
    x_half = _finite_or_raise(x - gamma1 * f_x, "extrapolation point")
    f_half = op.eval_mean(sample.indices, x_half)
    return _finite_or_raise(x - alpha * gamma1 * f_half, "iterate")


def iseg_step(op, x, batch, gamma1, alpha, rng):
    """One independent-samples step with two fresh uniform mini-batches.

    batch == n uses the exact full operator for both evaluations, matching
    the deterministic method bit for bit.
    """
    x = as_point(x, op.dim)
    if batch == op.n:
        idx1 = idx2 = np.arange(op.n)
    else:
        idx = rng.integers(0, op.n, size=(2, batch))
        idx1, idx2 = idx[0], idx[1]
    x_half = _finite_or_raise(x - gamma1 * op.eval_mean(idx1, x), "extrapolation point")
    return _finite_or_raise(x - alpha * gamma1 * op.eval_mean(idx2, x_half), "iterate")


def _mean_eval_rows(op, idx, X):
    """Row-wise estimator: averages components idx[r] at X[r]. idx: (R, b).

    Both branches reduce through the same (dim, dim) @ (dim, 1) elementary
    product and the same length-b mean, so they agree bit for bit; the split
    only avoids large gathers when few rows are active.
    """
    if not op.is_affine:
        return np.stack([op.eval_mean(idx[r], X[r]) for r in range(X.shape[0])])
    n_rows, b = idx.shape
    if n_rows * b <= 64:
        out = np.empty_like(X)
        if b == 1:
            for r in range(n_rows):
                i = int(idx[r, 0])
                out[r] = (op.matrix_stack[i] @ X[r][:, None])[:, 0]
                out[r] += op.offset_stack[i]
            return out
        for r in range(n_rows):
            vals = (op.matrix_stack[idx[r]] @ X[r][:, None])[..., 0]
            vals += op.offset_stack[idx[r]]
            out[r] = vals.mean(axis=0)
        return out
    vals = (op.matrix_stack[idx] @ X[:, None, :, None])[..., 0]
    vals += op.offset_stack[idx]
    return vals.mean(axis=1)


def _full_eval_rows(op, X):
    """Row-wise full operator, same reduction order as the row estimator."""
    if not op.is_affine:
        return np.stack([op.eval_full(X[r]) for r in range(X.shape[0])])
    n_rows = X.shape[0]
    if n_rows * op.n <= 64 or n_rows <= 8:
        out = np.empty_like(X)
        for r in range(n_rows):
            vals = (op.matrix_stack @ X[r][:, None])[..., 0]
            vals += op.offset_stack
            out[r] = vals.mean(axis=0)
        return out
    vals = (op.matrix_stack[None, :, :, :] @ X[:, None, :, None])[..., 0]
    vals += op.offset_stack[None, :, :]
    return vals.mean(axis=1)


def _predraw(method, op, run_indices, seed, k_total):
    """Pre-draw all per-run randomness. Returns a dict describing the draws."""
    if isinstance(method, EG) or k_total == 0:
        return {"kind": "none"}
    if isinstance(method, ISEG):
        if method.batch == op.n:
            return {"kind": "none"}
        idx = np.stack(
            [
                run_stream(seed, r).integers(
                    0, op.n, size=(k_total, 2, method.batch)
                )
                for r in run_indices
            ]
        ).astype(np.int32)
        return {"kind": "iseg", "idx": idx}
    if isinstance(method, SSEG):
        blocks = [method.scheme.draw_block(run_stream(seed, r), k_total)
                  for r in run_indices]
        if isinstance(blocks[0][0], list):  # variable-size samples
            return {
                "kind": "sseg_var",
                "idx": [b[0] for b in blocks],
                "w": np.stack([b[1] for b in blocks]),
            }
        return {
            "kind": "sseg",
            "idx": np.stack([b[0] for b in blocks]).astype(np.int32),
            "w": np.stack([b[1] for b in blocks]),
        }
    raise TypeError(f"unknown method {method!r}")


def run_many(
    op: FiniteSumOperator,
    x0,
    cfg: SolverConfig,
    n_runs: int = 1,
    x_star=None,
    norm_average=False,
    run_indices=None,
) -> MultiTrajectory:
    """Run independent seeded trajectories of the configured method in lockstep.

    Row r uses the stream keyed by (cfg.seed, run_indices[r]); by default
    run_indices is range(n_runs). Records squared distances when x_star is
    given, operator norms always, and raises DivergenceError past a
    1e12-times-initial blowup guard.
    """
    x0 = as_point(x0, op.dim)
    if x_star is not None:
        x_star = as_point(x_star, op.dim)
    if run_indices is None:
        run_indices = list(range(n_runs))
    n_rows = len(run_indices)
    k_total = cfg.total_k
    checkpoints = cfg.checkpoints()
    in_checkpoint = np.zeros(k_total + 1, dtype=bool)
    in_checkpoint[checkpoints] = True

    draws = _predraw(cfg.method, op, run_indices, cfg.seed, k_total)
    X = np.tile(x0, (n_rows, 1))
    d0 = float(np.sum((x0 - x_star) ** 2)) if x_star is not None else None
    guard = DIVERGENCE_FACTOR * max(d0, 1e-9) if d0 is not None else None

    n_ck = checkpoints.size
    sq_dist = np.full((n_rows, n_ck), np.nan)
    op_norms = np.empty((n_rows, n_ck))
    betas = np.empty(n_ck)
    norm_acc = np.zeros(n_rows) if norm_average else None

    pos = 0
    for k in range(k_total + 1):
        record_here = in_checkpoint[k]
        full = None
        if record_here or norm_acc is not None:
            full = _full_eval_rows(op, X)
        if record_here:
            op_norms[:, pos] = np.sum(full**2, axis=1)
            betas[pos] = cfg.policy.beta(k)
            if x_star is not None:
                sq_dist[:, pos] = np.sum((X - x_star) ** 2, axis=1)
                if np.any(sq_dist[:, pos] > guard):
                    raise DivergenceError(
                        f"squared distance exceeded {DIVERGENCE_FACTOR:g} x initial at k={k}"
                    )
            if not np.all(np.isfinite(X)):
                raise DivergenceError(f"non-finite iterate at k={k}")
            pos += 1
        if norm_acc is not None:
            norm_acc += np.sum(full**2, axis=1)
        if k == k_total:
            break

        g1, g2 = cfg.policy.gammas(k)
        if draws["kind"] == "none":
            e1 = _full_eval_rows(op, X)
            x_half = X - g1 * e1
            e2 = _full_eval_rows(op, x_half)
            X = X - g2 * e2
        elif draws["kind"] == "sseg":
            idx_k = draws["idx"][:, k, :]
            w_k = draws["w"][:, k]
            e1 = _mean_eval_rows(op, idx_k, X)
            x_half = X - (g1 * w_k)[:, None] * e1
            e2 = _mean_eval_rows(op, idx_k, x_half)
            X = X - (g2 * w_k)[:, None] * e2
        elif draws["kind"] == "sseg_var":
            for r in range(n_rows):
                idx_rk = draws["idx"][r][k]
                w_rk = draws["w"][r, k]
                if idx_rk.size == 0 or w_rk == 0.0:
                    continue
                x_half = X[r] - g1 * w_rk * op.eval_mean(idx_rk, X[r])
                X[r] = X[r] - g2 * w_rk * op.eval_mean(idx_rk, x_half)
        else:  # iseg
            idx_k = draws["idx"][:, k]
            e1 = _mean_eval_rows(op, idx_k[:, 0, :], X)
            x_half = X - g1 * e1
            e2 = _mean_eval_rows(op, idx_k[:, 1, :], x_half)
            X = X - g2 * e2

    return MultiTrajectory(
        ks=checkpoints,
        sq_dist=sq_dist,
        op_norm_sq=op_norms,
        betas=betas,
        finals=X,
        mode="distance" if x_star is not None else "norms-only",
        avg_op_norm_sq=None if norm_acc is None else norm_acc / (k_total + 1),
    )


def run(op, x0, cfg, x_star=None, run_index=0, norm_average=False) -> Trajectory:
    """Single seeded run; bit-identical to the same row of a lockstep batch."""
    multi = run_many(
        op,
        x0,
        cfg,
        x_star=x_star,
        norm_average=norm_average,
        run_indices=[run_index],
    )
    return multi.run(0)
