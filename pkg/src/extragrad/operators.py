"""Finite-sum operators F(x) = (1/n) * sum_i F_i(x) and their problem constants.

Components are affine maps (constants computed exactly from spectra) or
black-box callables (constants supplied by the caller, measured relative to a
known root). Operators are immutable after construction apart from a
write-once root cache, so all evaluations are safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

DEFAULT_ROOT_TOL = 1e-10


def as_point(x, dim=None):
    """Validate and return a 1-D float64 point with finite entries."""
    p = np.asarray(x, dtype=np.float64)
    if p.ndim == 0:
        p = p.reshape(1)
    if p.ndim != 1:
        raise ValueError(f"point must be 1-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    if dim is not None and p.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {p.shape[0]}")
    return p


class AffineComponent:
    """Affine component F_i(x) = M x + b.

    The Lipschitz constant is the largest singular value of M and the
    quasi-monotonicity constant is the smallest eigenvalue of (M + M^T)/2;
    Cauchy-Schwarz guarantees |mu| <= L.
    """

    def __init__(self, matrix, offset=None):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got shape {m.shape}")
        self.matrix = m
        self.offset = (
            np.zeros(m.shape[0]) if offset is None else as_point(offset, m.shape[0])
        )
        self._constants = None

    @property
    def dim(self):
        return self.matrix.shape[0]

    def __call__(self, x):
        return self.matrix @ as_point(x, self.dim) + self.offset

    def constants(self):
        """Return (lipschitz, quasi_mono), computed once from the spectra."""
        if self._constants is None:
            lip = float(np.linalg.norm(self.matrix, 2))
            sym = 0.5 * (self.matrix + self.matrix.T)
            mu = float(np.linalg.eigvalsh(sym)[0])
            mu = min(max(mu, -lip), lip)
            self._constants = (lip, mu)
        return self._constants


class CallableComponent:
    """Black-box component with user-supplied constants.

    quasi_mono is understood relative to a caller-provided root x*, which the
    operator cannot estimate on its own.
    """

    def __init__(self, func, dim, lipschitz=None, quasi_mono=None):
        self.func = func
        self.dim = int(dim)
        self.lipschitz = None if lipschitz is None else float(lipschitz)
        self.quasi_mono = None if quasi_mono is None else float(quasi_mono)
        if self.lipschitz is not None and self.quasi_mono is not None:
            if abs(self.quasi_mono) > self.lipschitz + 1e-12:
                raise ValueError("|quasi_mono| must not exceed lipschitz")

    def __call__(self, x):
        return np.asarray(self.func(as_point(x, self.dim)), dtype=np.float64)

    def constants(self):
        if self.lipschitz is None or self.quasi_mono is None:
            raise ValueError("black-box component has no supplied constants")
        return (self.lipschitz, self.quasi_mono)


class FiniteSumOperator:
    """The averaged operator F(x) = (1/n) * sum_i F_i(x)."""

    def __init__(self, components):
        comps = list(components)
        if len(comps) == 0:
            raise ValueError("need at least one component")
        dim = comps[0].dim
        for c in comps:
            if c.dim != dim:
                raise ValueError("components disagree on dimension")
        self.components = comps
        self.dim = dim
        self.n = len(comps)
        self._cached_solution = None
        if all(isinstance(c, AffineComponent) for c in comps):
            self.matrix_stack = np.stack([c.matrix for c in comps])
            self.offset_stack = np.stack([c.offset for c in comps])
        else:
            self.matrix_stack = None
            self.offset_stack = None

    @classmethod
    def from_affine(cls, matrices, offsets=None):
        matrices = np.asarray(matrices, dtype=np.float64)
        if offsets is None:
            offsets = np.zeros(matrices.shape[:2])
        return cls(
            [AffineComponent(m, b) for m, b in zip(matrices, np.asarray(offsets))]
        )

    @property
    def is_affine(self):
        return self.matrix_stack is not None

    @property
    def cached_solution(self):
        return None if self._cached_solution is None else self._cached_solution.copy()

    def _check_index(self, i):
        i = int(i)
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range [0, {self.n})")
        return i

    def eval_component(self, i, x):
        """Evaluate F_i(x); exact M_i x + b_i for affine components."""
        i = self._check_index(i)
        x = as_point(x, self.dim)
        if self.is_affine:
            return self.matrix_stack[i] @ x + self.offset_stack[i]
        return self.components[i](x)

    def eval_mean(self, indices, x):
        """Average of F_i(x) over an index multiset (with multiplicity)."""
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim == 0:
            idx = idx.reshape(1)
        if idx.size == 0:
            raise ValueError("empty sample")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError("sample index out of range")
        x = as_point(x, self.dim)
        if self.is_affine:
            vals = np.einsum("kij,j->ki", self.matrix_stack[idx], x)
            vals += self.offset_stack[idx]
        else:
            vals = np.stack([self.components[i](x) for i in idx])
        return vals.mean(axis=0)

    def eval_full(self, x):
        """F(x) as the average of all components, in index order."""
        return self.eval_mean(np.arange(self.n), x)

    def residuals_at(self, x):
        """Stack of all component values F_i(x), shape (n, dim)."""
        x = as_point(x, self.dim)
        if self.is_affine:
            return np.einsum("nij,j->ni", self.matrix_stack, x) + self.offset_stack
        return np.stack([c(x) for c in self.components])

    def mean_matrix(self):
        if not self.is_affine:
            raise ValueError("operator has non-affine components")
        return self.matrix_stack.mean(axis=0)

    def solve_root(self, tol=DEFAULT_ROOT_TOL):
        """Solve F(x*) = 0 by a direct dense factorization of the averaged matrix.

        Requires all components affine and the averaged matrix invertible
        (guaranteed when the full operator has mu > 0). The result is cached.
        """
        if self._cached_solution is not None:
            return self._cached_solution.copy()
        if not self.is_affine:
            raise ValueError("root solving requires all components affine")
        m_bar = self.mean_matrix()
        b_bar = self.offset_stack.mean(axis=0)
        try:
            root = np.linalg.solve(m_bar, -b_bar)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "averaged matrix is singular (degenerate mu = 0 problem)"
            ) from exc
        residual = float(np.linalg.norm(self.eval_full(root)))
        if not residual <= tol:
            raise ValueError(f"root residual {residual:.3e} exceeds tolerance {tol:.3e}")
        self._cached_solution = root
        return root.copy()

    def component_constants(self, i):
        """Per-component (L_i, mu_i); exact for affine components."""
        i = self._check_index(i)
        return self.components[i].constants()

    def all_constants(self):
        """Arrays (L, mu) of per-component constants."""
        pairs = [self.component_constants(i) for i in range(self.n)]
        lips = np.array([p[0] for p in pairs])
        mus = np.array([p[1] for p in pairs])
        return lips, mus

    def constants(self):
        """(L, mu) of the full averaged operator (affine only)."""
        if not self.is_affine:
            raise ValueError("full-operator constants require affine components")
        return AffineComponent(self.mean_matrix(), self.offset_stack.mean(axis=0)).constants()

    def subset_constants(self, indices):
        """Exact (L_S, mu_S) of the averaged operator over an index multiset."""
        if not self.is_affine:
            raise ValueError("subset constants require affine components")
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size == 0:
            raise ValueError("empty sample")
        m = self.matrix_stack[idx].mean(axis=0)
        lip = float(np.linalg.norm(m, 2))
        mu = float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])
        return lip, min(max(mu, -lip), lip)

    def uniform_variance_bound(self, x_star):
        """A valid pair (delta, sigma_sq) with
        (1/n) sum_i ||F_i(x) - F(x)||^2 <= delta ||x - x*||^2 + sigma_sq for all x.

        Affine only. Bounds the cross term 2<u, v> by ||v|| (||u||^2 + 1).
        """
        if not self.is_affine:
            raise ValueError("variance bound requires affine components")
        x_star = as_point(x_star, self.dim)
        deltas = self.matrix_stack - self.mean_matrix()
        residuals = self.residuals_at(x_star) - self.eval_full(x_star)
        s = np.einsum("nji,njk->ik", deltas, deltas) / self.n
        lam = float(np.linalg.eigvalsh(0.5 * (s + s.T))[-1])
        v = np.einsum("nji,nj->i", deltas, residuals) / self.n
        vnorm = float(np.linalg.norm(v))
        sigma_sq = float(np.mean(np.sum(residuals**2, axis=1)))
        return lam + vnorm, sigma_sq + vnorm
