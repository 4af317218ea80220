"""Random quadratic min-max games and their finite-sum operator form.

A game is defined by per-component blocks (A_i, B_i, C_i, a_i, c_i) giving the
objective (1/n) sum_i [ x1' A_i x1 / 2 + x1' B_i x2 - x2' C_i x2 / 2
+ a_i' x1 - c_i' x2 ]. The A_i and C_i are drawn as Q D Q' with a random
orthogonal Q and a uniform diagonal D inside a configured spectrum band; B_i
uses independent left/right orthogonal factors, so it need not be symmetric.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .operators import AffineComponent, FiniteSumOperator

_MAGIC = b"QGF1"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GameGenConfig:
    n: int = 100
    d: int = 100
    p: int = 100
    mu_A: float = 0.1
    L_A: float = 1.0
    mu_C: float = 0.1
    L_C: float = 1.0
    mu_B: float = 0.0
    L_B: float = 1.0
    seed: int = 0
    bias_scale: float = 1.0
    lmax_override: tuple | None = None  # (component index, target Lipschitz)
    negative_mu_component: int | None = None

    def validate(self):
        if min(self.n, self.d, self.p) < 1:
            raise ValueError("n, d, p must be positive")
        for lo, hi, name in (
            (self.mu_A, self.L_A, "A"),
            (self.mu_C, self.L_C, "C"),
            (self.mu_B, self.L_B, "B"),
        ):
            if not 0 <= lo <= hi:
                raise ValueError(f"invalid spectrum bounds for {name}: [{lo}, {hi}]")
        if self.bias_scale < 0:
            raise ValueError("bias_scale must be nonnegative")
        if self.lmax_override is not None:
            idx, target = self.lmax_override
            if not 0 <= int(idx) < self.n:
                raise ValueError("lmax_override index out of range")
            if target <= 0:
                raise ValueError("lmax_override target must be positive")
        if self.negative_mu_component is not None:
            if not 0 <= int(self.negative_mu_component) < self.n:
                raise ValueError("negative_mu_component out of range")


@dataclass
class QuadraticGame:
    config: GameGenConfig
    A: np.ndarray  # (n, d, d)
    B: np.ndarray  # (n, d, p)
    C: np.ndarray  # (n, p, p)
    a: np.ndarray  # (n, d)
    c: np.ndarray  # (n, p)

    @property
    def n(self):
        return self.A.shape[0]

    def block_matrix(self, i):
        """The affine component matrix [[A_i, B_i], [-B_i', C_i]]."""
        return np.block([[self.A[i], self.B[i]], [-self.B[i].T, self.C[i]]])

    def block_offset(self, i):
        return np.concatenate([self.a[i], self.c[i]])


def _orthogonal(rng, k):
    """Orthogonal factor of a standard Gaussian matrix, sign-fixed for determinism."""
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _psd_factor(rng, k, lo, hi, force_endpoints):
    q = _orthogonal(rng, k)
    diag = rng.uniform(lo, hi, size=k)
    if force_endpoints:
        diag[0] = lo
        if k >= 2:
            diag[-1] = hi
    return q, diag


def _assemble_sym(q, diag):
    m = (q * diag) @ q.T
    return 0.5 * (m + m.T)


def _component_mus(game):
    mus = np.empty(game.n)
    for i in range(game.n):
        la = np.linalg.eigvalsh(game.A[i])[0]
        lc = np.linalg.eigvalsh(game.C[i])[0]
        mus[i] = min(la, lc)
    return mus


def _mu_bar_plain(mus):
    pos = mus[mus >= 0].sum()
    neg = mus[mus < 0].sum()
    return (pos + 4.0 * neg) / mus.size


def generate_game(cfg: GameGenConfig) -> QuadraticGame:
    """Generate a game deterministically from cfg (bit-identical per seed).

    One component (index 0) carries the forced spectrum endpoints mu_A/L_A and
    mu_C/L_C. lmax_override rescales the chosen component's matrices so its
    block Lipschitz constant hits the requested value exactly.
    negative_mu_component flips the smallest diagonal entries of that
    component's A/C factors; the flipped magnitude is halved until the
    aggregate quasi-monotonicity constant stays positive.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, d, p = cfg.n, cfg.d, cfg.p

    qa, da, qc, dc = [], [], [], []
    B = np.empty((n, d, p))
    a = np.empty((n, d))
    c = np.empty((n, p))
    for i in range(n):
        q, diag = _psd_factor(rng, d, cfg.mu_A, cfg.L_A, force_endpoints=(i == 0))
        qa.append(q)
        da.append(diag)
        q, diag = _psd_factor(rng, p, cfg.mu_C, cfg.L_C, force_endpoints=(i == 0))
        qc.append(q)
        dc.append(diag)
        u = _orthogonal(rng, d)
        v = _orthogonal(rng, p)
        sv = rng.uniform(cfg.mu_B, cfg.L_B, size=min(d, p))
        B[i] = (u[:, : min(d, p)] * sv) @ v[:, : min(d, p)].T
        a[i] = cfg.bias_scale * rng.standard_normal(d)
        c[i] = cfg.bias_scale * rng.standard_normal(p)

    j = cfg.negative_mu_component
    if j is not None:
        j = int(j)
        da[j][np.argmin(da[j])] *= -1.0
        dc[j][np.argmin(dc[j])] *= -1.0

    def build():
        A = np.stack([_assemble_sym(q, diag) for q, diag in zip(qa, da)])
        C = np.stack([_assemble_sym(q, diag) for q, diag in zip(qc, dc)])
        return QuadraticGame(config=cfg, A=A, B=B.copy(), C=C, a=a.copy(), c=c.copy())

    game = build()

    if cfg.lmax_override is not None:
        idx, target = int(cfg.lmax_override[0]), float(cfg.lmax_override[1])
        current = np.linalg.norm(game.block_matrix(idx), 2)
        scale = target / current
        da[idx] = da[idx] * scale
        dc[idx] = dc[idx] * scale
        B[idx] *= scale
        game = build()

    if j is not None:
        # Keep the family-level aggregate positive: Assumption-3-style rates
        # need the indicator-weighted mean of component mus above zero.
        for _ in range(60):
            if _mu_bar_plain(_component_mus(game)) > 0:
                break
            da[j][da[j] < 0] *= 0.5
            dc[j][dc[j] < 0] *= 0.5
            game = build()
        else:
            raise ValueError("could not keep aggregate mu positive after flip")

    return game


def game_to_operator(game: QuadraticGame) -> FiniteSumOperator:
    """Concatenated-gradient operator: component i maps (x1, x2) to
    (A_i x1 + B_i x2 + a_i, -B_i' x1 + C_i x2 + c_i)."""
    comps = [
        AffineComponent(game.block_matrix(i), game.block_offset(i))
        for i in range(game.n)
    ]
    return FiniteSumOperator(comps)


def _config_to_dict(cfg: GameGenConfig) -> dict:
    out = dataclasses.asdict(cfg)
    if out["lmax_override"] is not None:
        out["lmax_override"] = [int(out["lmax_override"][0]), float(out["lmax_override"][1])]
    return out


def _config_from_dict(d: dict) -> GameGenConfig:
    if d.get("lmax_override") is not None:
        d = dict(d)
        d["lmax_override"] = (int(d["lmax_override"][0]), float(d["lmax_override"][1]))
    return GameGenConfig(**d)


def save_game(game: QuadraticGame, path) -> None:
    """Write a .qgame file: JSON header plus little-endian float64 blocks."""
    header = {
        "format": "qgame",
        "version": _FORMAT_VERSION,
        "n": int(game.n),
        "d": int(game.A.shape[1]),
        "p": int(game.C.shape[1]),
        "config": _config_to_dict(game.config),
        "blocks": ["A", "B", "C", "a", "c"],
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array([len(payload)], dtype="<u4").tobytes())
        fh.write(payload)
        for block in (game.A, game.B, game.C, game.a, game.c):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"malformed game file: truncated while reading {what}")
    return data


def load_game(path) -> QuadraticGame:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(_MAGIC), "magic")
        if magic != _MAGIC:
            raise ValueError("malformed game file: bad magic or unsupported version")
        (hlen,) = np.frombuffer(_read_exact(fh, 4, "header length"), dtype="<u4")
        try:
            header = json.loads(_read_exact(fh, int(hlen), "header"))
        except json.JSONDecodeError as exc:
            raise ValueError("malformed game file: bad header") from exc
        if header.get("format") != "qgame" or header.get("version") != _FORMAT_VERSION:
            raise ValueError("game file version mismatch")
        n, d, p = int(header["n"]), int(header["d"]), int(header["p"])
        if n < 1 or d < 1 or p < 1:
            raise ValueError("invalid game file: nonpositive dimensions")
        shapes = {"A": (n, d, d), "B": (n, d, p), "C": (n, p, p), "a": (n, d), "c": (n, p)}
        blocks = {}
        for name in ("A", "B", "C", "a", "c"):
            shape = shapes[name]
            nbytes = int(np.prod(shape)) * 8
            raw = _read_exact(fh, nbytes, f"block {name}")
            blocks[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1) != b"":
            raise ValueError("malformed game file: trailing data")
    cfg = _config_from_dict(header["config"])
    return QuadraticGame(config=cfg, A=blocks["A"], B=blocks["B"], C=blocks["C"],
                         a=blocks["a"], c=blocks["c"])
