"""Experiment orchestration: configure games, run multi-seed solver sweeps,
aggregate trajectories, attach theoretical envelopes, and write CSV series.

Included presets (games are generated on the fly unless a .qgame path is
given; all methods within one experiment share the game and the seeds):

  exp1_us_vs_is      uniform vs importance sampling across worst-component
                     scales L_max in {2, 5, 10, 20}
  exp2_sseg_stepsizes  constant vs horizon-aware decreasing stepsizes vs the
                     same-stepsize baseline (gamma_1 = gamma_2 = 1/(2 L_max))
  exp3_negative_mu   one non-monotone component, aggregate constant positive
  exp4_iseg_stepsizes  independent-samples variant: constant vs decreasing vs
                     a two-exponent power-decay comparison schedule
  appx_bnice         without-replacement batches vs i.i.d. batches at equal b

The --desk variant scales to n=20, d=p=10 with 20 seeds for fast runs.
Runs are deterministic: identical configs give byte-identical CSVs no matter
how many worker threads execute them.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np

from . import rates, sampling, schedule, solvers
from .operators import FiniteSumOperator
from .quadgame import GameGenConfig, game_to_operator, generate_game, load_game

CSV_HEADER = "k,mean_sq_dist,stderr,envelope,beta_k"
PRESETS = (
    "exp1_us_vs_is",
    "exp2_sseg_stepsizes",
    "exp3_negative_mu",
    "exp4_iseg_stepsizes",
    "appx_bnice",
)


@dataclass
class MethodSpec:
    name: str
    kind: str  # "sseg" | "iseg" | "eg"
    scheme: str | None = None  # sampling spec string for sseg
    batch: int | None = None  # iseg batch size
    schedule: str = "constant"  # constant | decreasing | same-stepsize | power-decay
    gamma: float | None = None  # None -> theory cap for the method
    alpha: float = 0.25
    with_envelope: bool = True
    panel: str | None = None
    label: str | None = None


@dataclass
class ExperimentConfig:
    name: str
    game: GameGenConfig | str
    methods: list
    total_k: int
    n_seeds: int = 5
    base_seed: int = 7
    record_every: int | None = None
    x0_distance: float = 1000.0
    out_dir: str | None = None
    jobs: int = 1

    def validate(self):
        if self.n_seeds < 1:
            raise ValueError("need at least one seed")
        if self.total_k < 0:
            raise ValueError("iteration budget must be nonnegative")
        if not self.methods:
            raise ValueError("need at least one method")


@dataclass
class AggregateSeries:
    name: str
    ks: np.ndarray
    mean_sq_dist: np.ndarray
    stderr: np.ndarray
    envelope: np.ndarray  # NaN where no bound applies
    beta: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PowerDecaySchedule:
    """Comparison-only two-exponent schedule: the extrapolation stepsize
    decays like (k + shift)^(-2/3) and the update stepsize like
    (k + shift)^(-1/3). No envelope is attached to runs using it."""

    gamma1: float
    gamma2: float
    shift: float

    def gammas(self, k):
        return (
            self.gamma1 / (k + self.shift) ** (2.0 / 3.0),
            self.gamma2 / (k + self.shift) ** (1.0 / 3.0),
        )

    def beta(self, k):
        return self.gammas(k)[0] / self.gammas(0)[0]


def initial_point(x_star, distance, seed):
    """Deterministic start at the requested distance from the solution."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(424242,))
    )
    direction = rng.standard_normal(x_star.size)
    direction /= np.linalg.norm(direction)
    return x_star + distance * direction


@dataclass
class _ResolvedMethod:
    spec: MethodSpec
    method: object
    policy: object
    envelope_values: object  # callable ks -> array, or None
    norm_average: bool
    meta: dict


def _resolve_method(ms: MethodSpec, op: FiniteSumOperator, x_star, total_k):
    lips, _ = op.all_constants()
    meta = {
        "method": ms.name,
        "kind": ms.kind,
        "schedule": ms.schedule,
        "alpha": ms.alpha,
    }
    if ms.panel:
        meta["panel"] = ms.panel
    if ms.label:
        meta["label"] = ms.label
    norm_average = False
    envelope_values = None

    if ms.kind == "eg":
        lip_full, mu_full = op.constants()
        gamma = ms.gamma if ms.gamma is not None else 1.0 / (6.0 * lip_full)
        policy = schedule.constant(gamma, ms.alpha)
        method = solvers.EG()
        if ms.with_envelope and ms.alpha <= 0.25 and mu_full > 0:
            params = rates.UnifiedParams(
                A=2 * ms.alpha, B=0.5, C=0.0, D1=0.0, D2=0.0,
                rho=0.5 * ms.alpha * gamma * mu_full,
            )
            bound = rates.envelope(params, np.nan)  # r0 substituted later
            envelope_values = ("closed", bound.constants["factor"], 0.0)
        meta.update(gamma=gamma, mu=mu_full, lipschitz=lip_full)
        return _ResolvedMethod(ms, method, policy, envelope_values, False, meta)

    if ms.kind == "sseg":
        scheme = sampling.parse_scheme(ms.scheme, op)
        alpha = ms.alpha
        if ms.schedule == "same-stepsize":
            alpha = 1.0
            gamma = ms.gamma if ms.gamma is not None else 1.0 / (2.0 * float(lips.max()))
            policy = schedule.constant(gamma, alpha)
        else:
            gamma = (
                ms.gamma
                if ms.gamma is not None
                else sampling.stepsize_cap(scheme, op, rule="closed")
            )
            if ms.schedule == "decreasing":
                try:
                    rho_tilde = schedule.rho_tilde_sseg(scheme, op, gamma)
                except ValueError:
                    rho_tilde = 0.0
                if rho_tilde > 0:
                    policy = schedule.decreasing_k(gamma, total_k, rho_tilde, alpha)
                else:
                    # degenerate aggregate: fixed-budget mode tracking the
                    # running mean of ||F||^2 instead of a shrinking stepsize;
                    # the averaged-norm guarantee needs half the raw cap
                    gamma = min(gamma, 0.5 * sampling.stepsize_cap(scheme, op, rule="raw"))
                    policy = schedule.constant(gamma, alpha)
                    norm_average = True
                meta["rho_tilde"] = rho_tilde if rho_tilde > 0 else 0.0
            elif ms.schedule == "constant":
                policy = schedule.constant(gamma, alpha)
            else:
                raise ValueError(f"unknown schedule {ms.schedule!r} for sseg")
        method = solvers.SSEG(scheme)
        meta.update(gamma=gamma, alpha=alpha, scheme=scheme.spec_string())

        if ms.with_envelope and alpha <= 0.25 and not norm_average:
            consts = sampling.scheme_constants(scheme, op, x_star)
            rho = 0.5 * alpha * gamma * consts.mu_bar
            sigma_as = gamma**2 * consts.sigma_star_sq
            meta.update(mu_bar=consts.mu_bar, sigma_star_sq=consts.sigma_star_sq,
                        l_eff=consts.l_eff)
            if rho > 0 and ms.schedule == "constant":
                plateau = 1.5 * alpha * (4 * alpha + 1) * sigma_as / rho
                envelope_values = ("closed", 1.0 - rho, plateau)
            elif ms.schedule == "decreasing" and policy.kind == "decreasing_k":
                additive = 1.5 * alpha * (4 * alpha + 1) * sigma_as
                envelope_values = ("recursion", rho, additive)
        return _ResolvedMethod(ms, method, policy, envelope_values, norm_average, meta)

    if ms.kind == "iseg":
        if ms.batch is None:
            raise ValueError("iseg method needs a batch size")
        lip_full, mu_full = op.constants()
        residuals = op.residuals_at(x_star)
        sigma_sq = float(np.mean(np.sum(residuals**2, axis=1)))
        alpha = ms.alpha
        if ms.schedule == "power-decay":
            g0 = 1.0 / mu_full
            policy = PowerDecaySchedule(g0, g0, (lip_full / mu_full) ** 3)
            gamma = g0
        else:
            gamma = (
                ms.gamma
                if ms.gamma is not None
                else rates.iseg_stepsize_cap(mu_full, lip_full, 0.0, ms.batch)
            )
            if ms.schedule == "decreasing":
                rho_tilde = schedule.rho_tilde_iseg(mu_full, gamma)
                if rho_tilde > 0:
                    policy = schedule.decreasing_k(gamma, total_k, rho_tilde, alpha)
                else:
                    policy = schedule.constant(gamma, alpha)
                    norm_average = True
                meta["rho_tilde"] = rho_tilde
            elif ms.schedule == "constant":
                policy = schedule.constant(gamma, alpha)
            else:
                raise ValueError(f"unknown schedule {ms.schedule!r} for iseg")
        method = solvers.ISEG(ms.batch)
        meta.update(gamma=gamma, batch=ms.batch, mu=mu_full, lipschitz=lip_full,
                    sigma_sq=sigma_sq)

        if (
            ms.with_envelope
            and alpha <= 0.25
            and mu_full > 0
            and ms.schedule in ("constant", "decreasing")
            and not norm_average
        ):
            if ms.schedule == "constant":
                plateau = 48.0 * (alpha + 1.0) * gamma * sigma_sq / (mu_full * ms.batch)
                envelope_values = ("closed", 1.0 - alpha * gamma * mu_full / 8.0, plateau)
            else:
                additive = 6.0 * alpha * (alpha + 1.0) * gamma**2 * sigma_sq / ms.batch
                envelope_values = ("recursion", alpha * gamma * mu_full / 8.0, additive)
        return _ResolvedMethod(ms, method, policy, envelope_values, norm_average, meta)

    raise ValueError(f"unknown method kind {ms.kind!r}")


def _envelope_column(resolved, policy, r0_sq, ks):
    if resolved.envelope_values is None:
        return np.full(len(ks), np.nan)
    tag, a, b = resolved.envelope_values
    if tag == "closed":
        factor, plateau = a, b
        return factor ** np.asarray(ks, dtype=np.float64) * r0_sq + plateau
    return rates.recursion_envelope(policy, a, b, r0_sq, ks)


def _run_one(op, x0, x_star, resolved, cfg):
    scfg = solvers.SolverConfig(
        method=resolved.method,
        policy=resolved.policy,
        total_k=cfg.total_k,
        record_every=cfg.record_every,
        seed=cfg.base_seed,
    )
    multi = solvers.run_many(
        op, x0, scfg, cfg.n_seeds, x_star=x_star, norm_average=resolved.norm_average
    )
    return multi


def _aggregate(name, multi, resolved, cfg, r0_sq, game_meta):
    mean = multi.sq_dist.mean(axis=0)
    if cfg.n_seeds > 1:
        stderr = multi.sq_dist.std(axis=0, ddof=1) / math.sqrt(cfg.n_seeds)
    else:
        stderr = np.zeros_like(mean)
    env = _envelope_column(resolved, resolved.policy, r0_sq, multi.ks)
    meta = dict(game_meta)
    meta.update(resolved.meta)
    meta.update(seeds=cfg.n_seeds, base_seed=cfg.base_seed, total_k=cfg.total_k,
                r0_sq=r0_sq, experiment=cfg.name)
    if multi.avg_op_norm_sq is not None:
        meta["avg_op_norm_sq"] = float(multi.avg_op_norm_sq.mean())
    return AggregateSeries(
        name=name,
        ks=multi.ks.copy(),
        mean_sq_dist=mean,
        stderr=stderr,
        envelope=env,
        beta=multi.betas.copy(),
        meta=meta,
    )


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every method of the experiment over the shared game and seeds.

    Returns {series name: AggregateSeries}; writes one CSV per method when
    cfg.out_dir is set. (method, seed) runs are independent; workers only
    change wall time, never results.
    """
    cfg.validate()
    if isinstance(cfg.game, str):
        game = load_game(cfg.game)
    else:
        game = generate_game(cfg.game)
    op = game_to_operator(game)
    x_star = op.solve_root()
    x0 = initial_point(x_star, cfg.x0_distance, cfg.base_seed)
    r0_sq = float(np.sum((x0 - x_star) ** 2))
    game_meta = {
        "n": game.n,
        "d": game.config.d,
        "p": game.config.p,
        "game_seed": game.config.seed,
    }
    if game.config.lmax_override is not None:
        game_meta["lmax_override"] = game.config.lmax_override[1]
    if game.config.negative_mu_component is not None:
        game_meta["negative_mu_component"] = game.config.negative_mu_component

    resolved = [_resolve_method(ms, op, x_star, cfg.total_k) for ms in cfg.methods]

    if cfg.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_run_one, op, x0, x_star, r, cfg) for r in resolved]
            multis = [f.result() for f in futures]
    else:
        multis = [_run_one(op, x0, x_star, r, cfg) for r in resolved]

    out = {}
    for ms, r, multi in zip(cfg.methods, resolved, multis):
        out[ms.name] = _aggregate(ms.name, multi, r, cfg, r0_sq, game_meta)

    if cfg.out_dir is not None:
        import os

        os.makedirs(cfg.out_dir, exist_ok=True)
        for name, series in out.items():
            write_csv(series, os.path.join(cfg.out_dir, f"{name}.csv"))
    return out


# ---------------------------------------------------------------------------
# CSV series


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def write_csv(series: AggregateSeries, path) -> None:
    """One row per checkpoint; floats as shortest round-trip decimals; the
    envelope column is empty where no bound applies."""
    lines = []
    for key in sorted(series.meta):
        lines.append(f"# {key}={series.meta[key]}")
    lines.append(CSV_HEADER)
    for i, k in enumerate(series.ks):
        lines.append(
            ",".join(
                [
                    str(int(k)),
                    repr(float(series.mean_sq_dist[i])),
                    repr(float(series.stderr[i])),
                    _fmt(series.envelope[i]),
                    repr(float(series.beta[i])),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> AggregateSeries:
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
                continue
            if header is None:
                header = line
                if header != CSV_HEADER:
                    raise ValueError(f"unexpected CSV header {header!r}")
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"malformed CSV row {line!r}")
            rows.append(parts)
    if header is None:
        raise ValueError("missing CSV header")
    ks = np.array([int(r[0]) for r in rows], dtype=np.int64)
    mean = np.array([float(r[1]) for r in rows])
    stderr = np.array([float(r[2]) for r in rows])
    env = np.array([float(r[3]) if r[3] else np.nan for r in rows])
    beta = np.array([float(r[4]) for r in rows])
    name = meta.get("method", "series")
    return AggregateSeries(name, ks, mean, stderr, env, beta, meta)


def time_to_threshold(series: AggregateSeries, rel=1e-2):
    """First recorded k where the mean squared distance falls to rel times its
    initial value; None when never reached."""
    target = rel * series.mean_sq_dist[0]
    hits = np.nonzero(series.mean_sq_dist <= target)[0]
    return None if hits.size == 0 else int(series.ks[hits[0]])


# ---------------------------------------------------------------------------
# Presets


def _preset_game(desk, seed, **kw):
    if desk:
        return GameGenConfig(n=20, d=10, p=10, seed=seed, **kw)
    return GameGenConfig(n=100, d=100, p=100, seed=seed, **kw)


def preset_configs(
    preset,
    desk=False,
    total_k=None,
    n_seeds=None,
    base_seed=7,
    game_seed=11,
    out_dir=None,
    x0_distance=1000.0,
    record_every=None,
    jobs=1,
    game_path=None,
):
    """Experiment configurations for a named preset (a list: some presets
    sweep a family of games)."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    seeds = n_seeds if n_seeds is not None else (20 if desk else 5)
    common = dict(
        n_seeds=seeds,
        base_seed=base_seed,
        out_dir=out_dir,
        x0_distance=x0_distance,
        record_every=record_every,
        jobs=jobs,
    )

    def game_or_path(**kw):
        if game_path is not None:
            return game_path
        return _preset_game(desk, game_seed, **kw)

    if preset == "exp1_us_vs_is":
        k_total = total_k if total_k is not None else (40_000 if desk else 100_000)
        configs = []
        for lmax in (2, 5, 10, 20):
            methods = [
                MethodSpec(
                    name=f"exp1_lmax{lmax}_us",
                    kind="sseg",
                    scheme="us:b=1",
                    panel=f"lmax={lmax}",
                    label="uniform",
                ),
                MethodSpec(
                    name=f"exp1_lmax{lmax}_is",
                    kind="sseg",
                    scheme="is",
                    panel=f"lmax={lmax}",
                    label="importance",
                ),
            ]
            configs.append(
                ExperimentConfig(
                    name=f"exp1_lmax{lmax}",
                    game=game_or_path(lmax_override=(0, float(lmax))),
                    methods=methods,
                    total_k=k_total,
                    **common,
                )
            )
        return configs

    k_total = total_k if total_k is not None else (20_000 if desk else 100_000)
    if preset == "exp2_sseg_stepsizes":
        methods = [
            MethodSpec(name="exp2_constant", kind="sseg", scheme="us:b=1",
                       schedule="constant", panel="stepsizes", label="constant"),
            MethodSpec(name="exp2_decreasing", kind="sseg", scheme="us:b=1",
                       schedule="decreasing", panel="stepsizes", label="decreasing"),
            MethodSpec(name="exp2_same_stepsize", kind="sseg", scheme="us:b=1",
                       schedule="same-stepsize", with_envelope=False,
                       panel="stepsizes", label="same-stepsize"),
        ]
        return [ExperimentConfig(name="exp2", game=game_or_path(), methods=methods,
                                 total_k=k_total, **common)]

    if preset == "exp3_negative_mu":
        methods = [
            MethodSpec(name="exp3_constant", kind="sseg", scheme="us:b=1",
                       schedule="constant", panel="negative-mu", label="constant"),
            MethodSpec(name="exp3_decreasing", kind="sseg", scheme="us:b=1",
                       schedule="decreasing", panel="negative-mu", label="decreasing"),
        ]
        return [
            ExperimentConfig(
                name="exp3",
                game=game_or_path(negative_mu_component=1),
                methods=methods,
                total_k=k_total,
                **common,
            )
        ]

    if preset == "exp4_iseg_stepsizes":
        batch = 4 if desk else 16
        methods = [
            MethodSpec(name="exp4_constant", kind="iseg", batch=batch,
                       schedule="constant", panel="iseg", label="constant"),
            MethodSpec(name="exp4_decreasing", kind="iseg", batch=batch,
                       schedule="decreasing", panel="iseg", label="decreasing"),
            MethodSpec(name="exp4_power_decay", kind="iseg", batch=batch,
                       schedule="power-decay", with_envelope=False,
                       panel="iseg", label="power-decay"),
        ]
        return [ExperimentConfig(name="exp4", game=game_or_path(), methods=methods,
                                 total_k=k_total, **common)]

    # appx_bnice
    methods = []
    for b in (1, 4, 16):
        methods.append(
            MethodSpec(name=f"bnice_b{b}_nice", kind="sseg", scheme=f"nice:b={b}",
                       panel=f"b={b}", label="without-replacement")
        )
        methods.append(
            MethodSpec(name=f"bnice_b{b}_usiid", kind="sseg", scheme=f"us:b={b}",
                       panel=f"b={b}", label="iid-batch")
        )
    return [
        ExperimentConfig(
            name="appx_bnice",
            game=game_or_path(lmax_override=(0, 10.0)),
            methods=methods,
            total_k=k_total,
            **common,
        )
    ]


def run_preset(preset, **kwargs) -> dict:
    """Run all configurations of a preset and merge the series."""
    out = {}
    for cfg in preset_configs(preset, **kwargs):
        out.update(run_experiment(cfg))
    return out
