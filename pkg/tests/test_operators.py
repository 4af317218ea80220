import numpy as np
import pytest

from extragrad.operators import (
    AffineComponent,
    CallableComponent,
    FiniteSumOperator,
    as_point,
)

M_ROT = np.array([[2.0, 1.0], [-1.0, 2.0]])
B_ONES = np.array([1.0, 1.0])


def identity_op(n=1):
    return FiniteSumOperator([AffineComponent(np.eye(1)) for _ in range(n)])


def scalar_op(slopes, offsets):
    return FiniteSumOperator(
        [AffineComponent([[m]], [b]) for m, b in zip(slopes, offsets)]
    )


def test_eval_component_identity():
    op = identity_op()
    assert np.allclose(op.eval_component(0, [1.0]), [1.0])


def test_eval_component_affine_at_origin():
    op = FiniteSumOperator([AffineComponent(M_ROT, B_ONES)])
    assert np.allclose(op.eval_component(0, [0.0, 0.0]), B_ONES)


def test_eval_component_affine_at_root():
    # oracle: solve M x = -b directly, independent of the operator code
    x_oracle = np.linalg.solve(M_ROT, -B_ONES)
    assert np.allclose(x_oracle, [-0.2, -0.6])
    op = FiniteSumOperator([AffineComponent(M_ROT, B_ONES)])
    assert np.allclose(op.eval_component(0, x_oracle), [0.0, 0.0], atol=1e-14)


def test_eval_full_single_identity():
    assert np.allclose(identity_op().eval_full([3.0]), [3.0])


def test_eval_full_offsets_cancel():
    op = scalar_op([1.0, 1.0], [-1.0, 1.0])
    assert np.allclose(op.eval_full([5.0]), [5.0])


def test_eval_full_mean_of_components():
    op = scalar_op([2.0, 4.0], [0.0, 0.0])
    assert np.allclose(op.eval_full([1.0]), [3.0])


def test_eval_mean_multiset():
    op = scalar_op([2.0, 5.0], [0.0, 0.0])
    assert np.allclose(op.eval_mean([0, 0, 1], [1.0]), [3.0])


def test_solve_root_identity():
    op = identity_op()
    assert np.allclose(op.solve_root(), [0.0])


def test_solve_root_single_affine():
    op = FiniteSumOperator([AffineComponent(M_ROT, B_ONES)])
    root = op.solve_root()
    assert np.allclose(root, [-0.2, -0.6])
    assert np.linalg.norm(op.eval_full(root)) <= 1e-10
    # result is cached and returned as a copy
    cached = op.cached_solution
    cached[0] = 99.0
    assert np.allclose(op.solve_root(), [-0.2, -0.6])


def test_solve_root_symmetric_offsets():
    op = scalar_op([1.0, 1.0], [-1.0, 1.0])
    assert np.allclose(op.solve_root(), [0.0])


def test_solve_root_singular():
    op = scalar_op([0.0], [1.0])
    with pytest.raises(ValueError, match="singular"):
        op.solve_root()


def test_solve_root_non_affine():
    op = FiniteSumOperator([CallableComponent(lambda x: x, 1)])
    with pytest.raises(ValueError, match="affine"):
        op.solve_root()


def test_component_constants_identity():
    lip, mu = identity_op().component_constants(0)
    assert lip == pytest.approx(1.0)
    assert mu == pytest.approx(1.0)


def test_component_constants_rotation_plus_scale():
    # oracle: M'M = 5 I so the largest singular value is sqrt(5);
    # the symmetric part is 2 I so mu = 2
    assert np.allclose(M_ROT.T @ M_ROT, 5.0 * np.eye(2))
    op = FiniteSumOperator([AffineComponent(M_ROT)])
    lip, mu = op.component_constants(0)
    assert lip == pytest.approx(np.sqrt(5.0), abs=1e-12)
    assert mu == pytest.approx(2.0, abs=1e-12)


def test_component_constants_negative_slope():
    op = scalar_op([-1.0], [0.0])
    lip, mu = op.component_constants(0)
    assert (lip, mu) == (pytest.approx(1.0), pytest.approx(-1.0))


def test_constants_bound_mu_by_lipschitz():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = rng.standard_normal((5, 5))
        lip, mu = AffineComponent(m).constants()
        assert abs(mu) <= lip


def test_index_and_dimension_errors():
    op = FiniteSumOperator([AffineComponent(M_ROT, B_ONES)])
    with pytest.raises(IndexError):
        op.eval_component(1, [0.0, 0.0])
    with pytest.raises(ValueError, match="dimension"):
        op.eval_component(0, [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        FiniteSumOperator([])
    with pytest.raises(ValueError, match="dimension"):
        FiniteSumOperator([AffineComponent(M_ROT), AffineComponent(np.eye(3))])


def test_black_box_requires_constants():
    comp = CallableComponent(lambda x: 2 * x, 1)
    op = FiniteSumOperator([comp])
    with pytest.raises(ValueError, match="constants"):
        op.component_constants(0)
    supplied = CallableComponent(lambda x: 2 * x, 1, lipschitz=2.0, quasi_mono=2.0)
    assert FiniteSumOperator([supplied]).component_constants(0) == (2.0, 2.0)


def test_point_validation():
    with pytest.raises(ValueError, match="finite"):
        as_point([np.nan])
    with pytest.raises(ValueError, match="1-D"):
        as_point([[1.0, 2.0]])


def test_lipschitz_property_random_pairs():
    rng = np.random.default_rng(11)
    m = rng.standard_normal((4, 4))
    comp = AffineComponent(m, rng.standard_normal(4))
    lip, _ = comp.constants()
    xs = rng.standard_normal((1000, 4))
    ys = rng.standard_normal((1000, 4))
    for x, y in zip(xs, ys):
        assert np.linalg.norm(comp(x) - comp(y)) <= lip * np.linalg.norm(x - y) + 1e-9


def test_quasi_monotonicity_property_random_points():
    rng = np.random.default_rng(12)
    m = rng.standard_normal((4, 4))
    x_star = rng.standard_normal(4)
    comp = AffineComponent(m, -m @ x_star)  # root at x_star
    _, mu = comp.constants()
    for x in rng.standard_normal((1000, 4)):
        gap = float((comp(x) - comp(x_star)) @ (x - x_star))
        assert gap >= mu * np.sum((x - x_star) ** 2) - 1e-9


def test_uniform_variance_bound_is_valid():
    rng = np.random.default_rng(13)
    mats = rng.standard_normal((6, 3, 3)) + 2.0 * np.eye(3)
    offs = rng.standard_normal((6, 3))
    op = FiniteSumOperator.from_affine(mats, offs)
    x_star = op.solve_root()
    delta, sigma_sq = op.uniform_variance_bound(x_star)
    for scale in (0.1, 1.0, 10.0):
        for x in x_star + scale * rng.standard_normal((200, 3)):
            vals = op.residuals_at(x)
            var = float(np.mean(np.sum((vals - vals.mean(axis=0)) ** 2, axis=1)))
            bound = delta * np.sum((x - x_star) ** 2) + sigma_sq
            assert var <= bound + 1e-9
