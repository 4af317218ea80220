import numpy as np
import pytest

from extragrad.quadgame import (
    GameGenConfig,
    QuadraticGame,
    game_to_operator,
    generate_game,
    load_game,
    save_game,
)

DESK = GameGenConfig(n=8, d=5, p=4, seed=21)


def test_one_dim_endpoint_game():
    cfg = GameGenConfig(
        n=1, d=1, p=1, mu_A=2.0, L_A=2.0, mu_B=1.0, L_B=1.0, mu_C=2.0, L_C=2.0,
        seed=5, bias_scale=0.0,
    )
    game = generate_game(cfg)
    op = game_to_operator(game)
    m = op.matrix_stack[0]
    # B's sign is free; everything else is pinned by the degenerate spectra
    assert m[0, 0] == pytest.approx(2.0)
    assert m[1, 1] == pytest.approx(2.0)
    assert abs(m[0, 1]) == pytest.approx(1.0)
    assert m[1, 0] == pytest.approx(-m[0, 1])
    assert np.allclose(op.offset_stack[0], 0.0)


def test_generation_deterministic():
    g1 = generate_game(DESK)
    g2 = generate_game(DESK)
    for name in ("A", "B", "C", "a", "c"):
        a, b = getattr(g1, name), getattr(g2, name)
        assert a.tobytes() == b.tobytes()


def test_spectra_inside_bands_and_symmetric():
    game = generate_game(GameGenConfig(n=10, d=6, p=5, seed=3))
    for i in range(game.n):
        assert np.linalg.norm(game.A[i] - game.A[i].T) <= 1e-12
        assert np.linalg.norm(game.C[i] - game.C[i].T) <= 1e-12
        for block, lo, hi in ((game.A[i], 0.1, 1.0), (game.C[i], 0.1, 1.0)):
            eig = np.linalg.eigvalsh(block)
            assert eig.min() >= lo - 1e-9
            assert eig.max() <= hi + 1e-9
        sv = np.linalg.svd(game.B[i], compute_uv=False)
        assert sv.max() <= 1.0 + 1e-9
    # forced endpoints live on component 0
    assert np.linalg.eigvalsh(game.A[0]).min() == pytest.approx(0.1, abs=1e-9)
    assert np.linalg.eigvalsh(game.A[0]).max() == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.eigvalsh(game.C[0]).min() == pytest.approx(0.1, abs=1e-9)


def test_block_assembly_scalar():
    game = QuadraticGame(
        config=GameGenConfig(n=1, d=1, p=1),
        A=np.array([[[2.0]]]),
        B=np.array([[[1.0]]]),
        C=np.array([[[2.0]]]),
        a=np.array([[1.0]]),
        c=np.array([[1.0]]),
    )
    op = game_to_operator(game)
    assert np.allclose(op.matrix_stack[0], [[2.0, 1.0], [-1.0, 2.0]])
    assert np.allclose(op.offset_stack[0], [1.0, 1.0])


def test_component_mu_is_min_of_block_eigenvalues():
    # oracle: explicit symmetrization of the full block matrix
    game = generate_game(GameGenConfig(n=5, d=4, p=4, seed=9))
    op = game_to_operator(game)
    for i in range(game.n):
        m = op.matrix_stack[i]
        sym = 0.5 * (m + m.T)
        mu_oracle = np.linalg.eigvalsh(sym).min()
        expected = min(
            np.linalg.eigvalsh(game.A[i]).min(), np.linalg.eigvalsh(game.C[i]).min()
        )
        assert mu_oracle == pytest.approx(expected, abs=1e-9)
        _, mu = op.component_constants(i)
        assert mu == pytest.approx(expected, abs=1e-9)


def test_zero_game_is_identically_zero():
    cfg = GameGenConfig(n=2, d=2, p=2, mu_A=0, L_A=0, mu_B=0, L_B=0,
                        mu_C=0, L_C=0, seed=1, bias_scale=0.0)
    op = game_to_operator(generate_game(cfg))
    rng = np.random.default_rng(0)
    for x in rng.standard_normal((5, 4)):
        assert np.allclose(op.eval_full(x), 0.0)


def test_positive_spectra_make_root_solvable():
    op = game_to_operator(generate_game(DESK))
    _, mu = op.constants()
    assert mu >= 0.1 - 1e-9
    root = op.solve_root()
    assert np.linalg.norm(op.eval_full(root)) <= 1e-10


def test_lmax_override_hits_target_exactly():
    cfg = GameGenConfig(n=6, d=4, p=4, seed=2, lmax_override=(0, 10.0))
    op = game_to_operator(generate_game(cfg))
    lips, _ = op.all_constants()
    assert lips[0] == pytest.approx(10.0, rel=1e-12)
    assert lips[1:].max() < 2.5


def test_negative_mu_component():
    cfg = GameGenConfig(n=10, d=4, p=4, seed=4, negative_mu_component=1)
    op = game_to_operator(generate_game(cfg))
    _, mus = op.all_constants()
    assert (mus < 0).sum() == 1
    assert mus[1] < 0
    pos = mus[mus >= 0].sum()
    neg = mus[mus < 0].sum()
    assert (pos + 4 * neg) / mus.size > 0


def test_save_load_round_trip(tmp_path):
    game = generate_game(DESK)
    path = tmp_path / "g.qgame"
    save_game(game, path)
    loaded = load_game(path)
    for name in ("A", "B", "C", "a", "c"):
        assert getattr(game, name).tobytes() == getattr(loaded, name).tobytes()
    assert loaded.config == game.config


def test_load_truncated_file(tmp_path):
    game = generate_game(DESK)
    path = tmp_path / "g.qgame"
    save_game(game, path)
    data = path.read_bytes()
    bad = tmp_path / "bad.qgame"
    bad.write_bytes(data[: len(data) - 17])
    with pytest.raises(ValueError, match="truncated"):
        load_game(bad)


def test_load_bad_magic(tmp_path):
    path = tmp_path / "junk.qgame"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic|version"):
        load_game(path)


def test_load_rejects_nonpositive_n(tmp_path):
    import json

    import numpy as np

    header = {
        "format": "qgame", "version": 1, "n": 0, "d": 1, "p": 1,
        "config": {"n": 1, "d": 1, "p": 1}, "blocks": ["A", "B", "C", "a", "c"],
    }
    payload = json.dumps(header).encode()
    path = tmp_path / "zero.qgame"
    path.write_bytes(b"QGF1" + np.uint32(len(payload)).tobytes() + payload)
    with pytest.raises(ValueError, match="nonpositive"):
        load_game(path)


def test_config_validation():
    with pytest.raises(ValueError):
        GameGenConfig(n=0, d=1, p=1).validate()
    with pytest.raises(ValueError):
        GameGenConfig(n=1, d=1, p=1, mu_A=0.5, L_A=0.1).validate()
    with pytest.raises(ValueError):
        GameGenConfig(n=2, d=1, p=1, lmax_override=(5, 1.0)).validate()
    with pytest.raises(ValueError):
        GameGenConfig(n=2, d=1, p=1, negative_mu_component=7).validate()
