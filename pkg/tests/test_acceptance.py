"""Acceptance suite: one test per primary criterion, tolerances pinned.

Each test prints a single PASS line on success (run with -s to stream them);
the test name itself identifies the criterion in pytest output.
"""

import itertools
import math
import time

import numpy as np
import pytest

from extragrad import harness, rates, sampling, schedule, solvers
from extragrad.harness import time_to_threshold
from extragrad.operators import FiniteSumOperator
from extragrad.quadgame import GameGenConfig, game_to_operator, generate_game
from extragrad.sampling import (
    ImportanceScheme,
    NiceScheme,
    UniformScheme,
    WithoutReplacementScheme,
    WithReplacementScheme,
)

ALPHA = 0.25


def _report(num, text):
    print(f"ACCEPTANCE {num}: PASS - {text}")


def _dominated(mean, se, env):
    return np.all(mean + 3 * se <= env * (1 + 1e-12) + 1e-12)


@pytest.fixture(scope="module")
def desk():
    game = generate_game(GameGenConfig(n=20, d=10, p=10, seed=11))
    op = game_to_operator(game)
    x_star = op.solve_root()
    rng = np.random.default_rng(4242)
    u = rng.standard_normal(op.dim)
    x0 = x_star + 10.0 * u / np.linalg.norm(u)
    return op, x_star, x0


@pytest.fixture(scope="module")
def desk_us_constant(desk):
    """Criterion 2 run, shared with criterion 5's plateau comparison."""
    op, x_star, x0 = desk
    scheme = UniformScheme(op.n, 1)
    gamma = sampling.stepsize_cap(scheme, op)
    consts = sampling.scheme_constants(scheme, op, x_star)
    rho = 0.5 * ALPHA * gamma * consts.mu_bar
    sigma_as = gamma**2 * consts.sigma_star_sq
    cfg = solvers.SolverConfig(
        method=solvers.SSEG(scheme), policy=schedule.constant(gamma, ALPHA),
        total_k=10_000, seed=7,
    )
    start = time.perf_counter()
    multi = solvers.run_many(op, x0, cfg, 200, x_star=x_star)
    elapsed = time.perf_counter() - start
    return {
        "scheme": scheme, "gamma": gamma, "rho": rho, "sigma_as": sigma_as,
        "multi": multi, "elapsed": elapsed,
        "r0_sq": float(np.sum((x0 - x_star) ** 2)),
    }


def test_criterion_1_deterministic_eg_contraction():
    game = generate_game(GameGenConfig(n=10, d=10, p=10, seed=11))
    op = game_to_operator(game)
    x_star = op.solve_root()
    lip_full, mu_full = op.constants()
    assert lip_full <= 1.0  # gamma = 1/6 respects the 1/(6L) cap
    assert mu_full >= 0.1 - 1e-9
    gamma = 1.0 / 6.0
    rng = np.random.default_rng(1)
    u = rng.standard_normal(op.dim)
    x0 = x_star + 5.0 * u / np.linalg.norm(u)
    cfg = solvers.SolverConfig(
        method=solvers.EG(), policy=schedule.constant(gamma, ALPHA),
        total_k=500, record_every=1,
    )
    start = time.perf_counter()
    traj = solvers.run(op, x0, cfg, x_star=x_star)
    elapsed = time.perf_counter() - start
    factor = 1.0 - ALPHA * gamma * 0.1 / 2.0
    assert np.all(traj.sq_dist[1:] <= factor * traj.sq_dist[:-1] + 1e-12)
    assert elapsed < 1.0
    _report(1, f"500 contraction steps in {elapsed * 1e3:.0f} ms")


def test_criterion_2_constant_step_envelope_uniform(desk_us_constant):
    data = desk_us_constant
    multi = data["multi"]
    mean = multi.sq_dist.mean(axis=0)
    se = multi.sq_dist.std(axis=0, ddof=1) / math.sqrt(multi.sq_dist.shape[0])
    plateau = 1.5 * ALPHA * (4 * ALPHA + 1) * data["sigma_as"] / data["rho"]
    env = (1 - data["rho"]) ** multi.ks.astype(float) * data["r0_sq"] + plateau
    assert _dominated(mean, se, env)
    assert data["elapsed"] < 60.0
    _report(2, f"200 seeds x 1e4 steps in {data['elapsed']:.1f} s, "
               f"envelope holds at {multi.ks.size} checkpoints")


def test_criterion_3_exp1_uniform_vs_importance():
    # paper-scale games; the horizon is trimmed to the observed convergence
    # range with a fine recording grid so threshold times are well resolved
    series = harness.run_preset(
        "exp1_us_vs_is", total_k=8_000, n_seeds=5, record_every=20
    )
    us_times, is_times = {}, {}
    for lmax in (2, 5, 10, 20):
        us = series[f"exp1_lmax{lmax}_us"]
        imp = series[f"exp1_lmax{lmax}_is"]
        us_times[lmax] = time_to_threshold(us, rel=1e-2)
        is_times[lmax] = time_to_threshold(imp, rel=1e-2)
        assert us_times[lmax] is not None, f"uniform never hit threshold at {lmax}"
        assert is_times[lmax] is not None
        for s in (us, imp):  # the emitted envelopes dominate throughout
            assert _dominated(s.mean_sq_dist, s.stderr, s.envelope)
    assert us_times[20] >= 2 * us_times[2]
    ordered = [us_times[m] for m in (2, 5, 10, 20)]
    assert all(a <= b for a, b in zip(ordered, ordered[1:]))  # nondecreasing in L_max
    times = np.array([is_times[m] for m in (2, 5, 10, 20)], dtype=float)
    spread = (times.max() - times.min()) / times.mean()
    assert spread <= 0.25
    _report(3, f"uniform times {us_times}, importance spread {spread:.1%}")


def test_criterion_4_bnice_identity_and_experiment():
    # exhaustive without-replacement variance identity for n <= 8, every b
    rng = np.random.default_rng(17)
    for n in range(2, 9):
        offs = rng.standard_normal(n)
        offs -= offs.mean()
        op = FiniteSumOperator.from_affine(
            np.ones((n, 1, 1)), offs.reshape(n, 1)
        )
        sigma_us = sampling.sigma_star_sq(UniformScheme(n), op, [0.0]).value
        for b in range(1, n + 1):
            brute = 0.0
            count = math.comb(n, b)
            for subset in itertools.combinations(range(n), b):
                brute += float(np.mean(offs[list(subset)]) ** 2) / count
            expected = 0.0 if n == b else (n - b) / (b * (n - 1)) * sigma_us
            got = sampling.sigma_star_sq(NiceScheme(n, b), op, [0.0]).value
            assert abs(brute - expected) <= 1e-10
            assert abs(got - expected) <= 1e-10

    series = harness.run_preset("appx_bnice", desk=True)
    wins = {}
    for b in (4, 16):
        t_nice = time_to_threshold(series[f"bnice_b{b}_nice"], rel=1e-2)
        t_us = time_to_threshold(series[f"bnice_b{b}_usiid"], rel=1e-2)
        assert t_nice is not None and t_us is not None
        assert t_nice < t_us
        wins[b] = (t_nice, t_us)
    _report(4, f"variance identity exact; threshold times (nice, iid) {wins}")


def test_criterion_5_decreasing_schedule(desk, desk_us_constant):
    op, x_star, x0 = desk
    data = desk_us_constant
    scheme, gamma = data["scheme"], data["gamma"]
    r0_sq = data["r0_sq"]
    rho_tilde = schedule.rho_tilde_sseg(scheme, op, gamma)
    sigma_as = data["sigma_as"]
    finals = {}
    for k_total in (1_000, 10_000):
        policy = schedule.decreasing_k(gamma, k_total, rho_tilde, ALPHA)
        cfg = solvers.SolverConfig(method=solvers.SSEG(scheme), policy=policy,
                                   total_k=k_total, seed=29)
        multi = solvers.run_many(op, x0, cfg, 100, x_star=x_star)
        final_mean = multi.sq_dist[:, -1].mean()
        final_se = multi.sq_dist[:, -1].std(ddof=1) / 10.0
        bound = rates.sseg_decreasing_envelope(rho_tilde, sigma_as, r0_sq)(k_total)
        assert final_mean <= bound + 3 * final_se
        finals[k_total] = final_mean
    const = data["multi"]
    const_tail = const.sq_dist[:, const.ks >= 5_000].mean()
    assert finals[10_000] < const_tail
    _report(5, f"final means {finals}, constant-step plateau {const_tail:.3g}")


def test_criterion_6_iseg_plateaus(desk):
    op, x_star, x0 = desk
    lip, mu = op.constants()
    sigma_sq = float(np.mean(np.sum(op.residuals_at(x_star) ** 2, axis=1)))
    gamma = rates.iseg_stepsize_cap(mu, lip, 0.0, 1)
    plateaus = {}
    for batch in (1, 4, 16):
        cfg = solvers.SolverConfig(method=solvers.ISEG(batch),
                                   policy=schedule.constant(gamma, ALPHA),
                                   total_k=10_000, seed=23)
        multi = solvers.run_many(op, x0, cfg, 100, x_star=x_star)
        tail = multi.ks >= 5_000
        tail_mean = multi.sq_dist[:, tail].mean(axis=1)
        plateaus[batch] = tail_mean.mean()
        se = tail_mean.std(ddof=1) / 10.0
        bound = 48.0 * (ALPHA + 1.0) * gamma * sigma_sq / (mu * batch)
        assert plateaus[batch] <= bound + 3 * se
    ratio = plateaus[1] / plateaus[4]
    assert 2.0 <= ratio <= 8.0
    _report(6, f"plateaus {plateaus}, ratio b1/b4 = {ratio:.2f}")


def test_criterion_7_assumption_certificates():
    start = time.perf_counter()
    rng = np.random.default_rng(97)
    worst = -np.inf
    for game_seed in range(20):
        game = generate_game(GameGenConfig(n=10, d=4, p=4, seed=100 + game_seed))
        op = game_to_operator(game)
        x_star = op.solve_root()
        lips, _ = op.all_constants()
        points = [
            x_star + rng.standard_normal(op.dim) * scale
            for scale in np.tile((0.3, 1.0, 3.0, 10.0, 30.0), 10)
        ]
        targets = [
            rates.SsegTarget(UniformScheme(10), 1.0 / (6 * lips.max()), ALPHA),
            rates.SsegTarget(ImportanceScheme(10, lips), 1.0 / (6 * lips.mean()), ALPHA),
            rates.SsegTarget(
                NiceScheme(10, 4),
                sampling.stepsize_cap(NiceScheme(10, 4), op),
                ALPHA,
            ),
        ]
        delta, sigma_sq = op.uniform_variance_bound(x_star)
        lip_full, mu_full = op.constants()
        targets.append(
            rates.IsegTarget(
                batch=4,
                gamma=rates.iseg_stepsize_cap(mu_full, lip_full, delta, 4),
                alpha=ALPHA,
                delta=delta,
                sigma_sq=sigma_sq,
            )
        )
        for target in targets:
            report = rates.certify_unified_assumption(
                op, target, points, samples_per_point=10_000, rng=rng, x_star=x_star
            )
            assert report.passed(), (game_seed, target, report.worst())
            worst = max(worst, report.worst())
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    _report(7, f"80 certificates (4000 point checks) in {elapsed:.0f} s, "
               f"worst margin-3se {worst:.3g}")


def test_criterion_8_negative_mu_convergence():
    game = generate_game(GameGenConfig(n=20, d=10, p=10, seed=11,
                                       negative_mu_component=1))
    op = game_to_operator(game)
    _, mus = op.all_constants()
    assert (mus < 0).sum() == 1
    mu_bar = sampling.mu_bar_components(mus)
    assert mu_bar > 0
    x_star = op.solve_root()
    rng = np.random.default_rng(4242)
    u = rng.standard_normal(op.dim)
    x0 = x_star + 1000.0 * u / np.linalg.norm(u)
    r0_sq = float(np.sum((x0 - x_star) ** 2))

    scheme = UniformScheme(op.n, 1)
    gamma = sampling.stepsize_cap(scheme, op)
    rho = 0.5 * ALPHA * gamma * sampling.scheme_mu_aggregate(scheme, op)
    sigma_as = gamma**2 * sampling.sigma_star_sq(scheme, op, x_star).value
    plateau = 1.5 * ALPHA * (4 * ALPHA + 1) * sigma_as / rho
    cfg = solvers.SolverConfig(method=solvers.SSEG(scheme),
                               policy=schedule.constant(gamma, ALPHA),
                               total_k=10_000, seed=13)
    multi = solvers.run_many(op, x0, cfg, 50, x_star=x_star)
    mean = multi.sq_dist.mean(axis=0)
    se = multi.sq_dist.std(axis=0, ddof=1) / math.sqrt(50)
    env = (1 - rho) ** multi.ks.astype(float) * r0_sq + plateau
    assert mean.min() <= 1e-2 * r0_sq
    assert _dominated(mean, se, env)
    _report(8, f"one negative component (mu_bar={mu_bar:.3f}), "
               f"threshold at k={int(multi.ks[mean <= 1e-2 * r0_sq][0])}")


def test_criterion_9_sampling_exactness():
    # unbiasedness by exact enumeration at n = 8 for all five schemes
    rng = np.random.default_rng(41)
    mats = rng.standard_normal((8, 3, 3)) + 2.0 * np.eye(3)
    offs = rng.standard_normal((8, 3))
    op = FiniteSumOperator.from_affine(mats, offs)
    lips, _ = op.all_constants()
    probs = np.arange(1, 9, dtype=float)
    probs /= probs.sum()
    schemes = [
        UniformScheme(8, 3),
        ImportanceScheme(8, lips),
        NiceScheme(8, 3),
        WithReplacementScheme(8, 3, probs),
        WithoutReplacementScheme(8, np.full(8, 0.3)),
    ]
    for x in rng.standard_normal((50, 3)):
        expected = op.eval_full(x)
        for scheme in schemes:
            acc = np.zeros(3)
            for prob, sample in scheme.outcomes():
                if sample.size == 0 or sample.weight == 0.0:
                    continue
                acc += prob * sample.weight * op.eval_mean(sample.indices, x)
            assert np.linalg.norm(acc - expected) <= 1e-9, scheme.spec_string()

    # draw frequencies over 1e6 draws stay within 4 standard errors
    n, draws = 8, 1_000_000
    freq_rng = np.random.default_rng(4321)

    def check(counts, ps, trials):
        for i in range(n):
            se = math.sqrt(ps[i] * (1 - ps[i]) / trials)
            assert abs(counts[i] / trials - ps[i]) <= 4 * se + 1e-12

    idx, _ = UniformScheme(n, 1).draw_block(freq_rng, draws)
    check(np.bincount(idx.ravel(), minlength=n), np.full(n, 1 / n), draws)
    imp = ImportanceScheme(n, lips)
    idx, _ = imp.draw_block(freq_rng, draws)
    check(np.bincount(idx.ravel(), minlength=n), imp.probs, draws)
    idx, _ = NiceScheme(n, 2).draw_block(freq_rng, draws // 4)
    check(np.bincount(idx.ravel(), minlength=n), np.full(n, 2 / n), draws // 4)
    idx, _ = WithReplacementScheme(n, 2, probs).draw_block(freq_rng, draws // 4)
    check(np.bincount(idx.ravel(), minlength=n), probs, draws // 4 * 2)
    iswor = WithoutReplacementScheme(n, np.full(n, 0.3))
    indices, _ = iswor.draw_block(freq_rng, draws // 10)
    counts = np.zeros(n)
    for ind in indices:
        counts[ind] += 1
    check(counts, np.full(n, 0.3), draws // 10)
    _report(9, "exact unbiasedness at n=8 and 4-sigma draw frequencies")
