import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emrgnn import kernels
from emrgnn.coefficients import (
    INFINITE_RATIO,
    ZERO_RATIO,
    RclSettings,
    emda_solve,
    is_simplex_point,
    limit_case,
    lipschitz_constant,
    objective,
    project_simplex,
    qp_oracle,
)
from emrgnn.errors import ValidationError

TIGHT = RclSettings(max_iters=5000, tol=1e-10)


def grid_minimum(s, ratio, steps=1000):
    """Brute-force minimum of the coefficient objective over a 4-simplex grid."""
    s = np.asarray(s, dtype=float)
    best_val, best_mu = np.inf, None
    h = 1.0 / steps
    for a in range(steps + 1):
        b = np.arange(steps - a + 1)[:, None]
        c = np.arange(steps - a + 1)[None, :]
        ok = b + c <= steps - a
        d = steps - a - b - c
        mu = [np.full(ok.shape, a * h), b * h + 0 * c, c * h + 0 * b, d * h]
        val = sum(m * si for m, si in zip(mu, s)) + ratio * sum(m * m for m in mu)
        val = np.where(ok, val, np.inf)
        k = np.unravel_index(np.argmin(val), val.shape)
        if val[k] < best_val:
            best_val = float(val[k])
            best_mu = np.array([a * h, k[0] * h, k[1] * h, (steps - a - k[0] - k[1]) * h])
    return best_val, best_mu


class TestLipschitz:
    @pytest.mark.parametrize(
        "s, l1, l2, expected",
        [([1, 2, 3], 1.0, 1.0, 8.0), ([0, 0], 1.0, 0.0, 0.0), ([4], 2.0, 1.0, 5.0), ([-1, 2], 1.0, 0.0, 3.0)],
    )
    def test_formula(self, s, l1, l2, expected):
        assert lipschitz_constant(s, l1, l2) == expected

    def test_errors(self):
        with pytest.raises(ValidationError):
            lipschitz_constant([1.0], 0.0, 1.0)
        with pytest.raises(ValidationError):
            lipschitz_constant([np.nan], 1.0, 1.0)


class TestLimitCase:
    def test_zero_ratio_argmin(self):
        np.testing.assert_array_equal(limit_case([3, 1, 2], ZERO_RATIO), [0, 1, 0])

    def test_infinite_ratio_uniform(self):
        np.testing.assert_array_equal(limit_case([5, -1, 2, 7], INFINITE_RATIO), [0.25] * 4)

    def test_tie_break_lowest_index(self):
        np.testing.assert_array_equal(limit_case([1, 1], ZERO_RATIO), [1, 0])

    def test_errors(self):
        with pytest.raises(ValidationError):
            limit_case([], ZERO_RATIO)
        with pytest.raises(ValidationError):
            limit_case([1.0], "sideways")


class TestQpOracle:
    def test_symmetric_interior(self):
        np.testing.assert_allclose(qp_oracle([0, 0], 1.0, 1.0), [0.5, 0.5])

    def test_saturates(self):
        # v = -[0, 100] / (2 * 0.01) = [0, -5000]; threshold -1 keeps only the first coordinate
        np.testing.assert_array_equal(qp_oracle([0, 100], 1.0, 0.01), [1.0, 0.0])

    def test_hand_projection(self):
        # v = [-0.5, -1, -2.5]; two active coordinates give theta = -1.25
        np.testing.assert_allclose(qp_oracle([1.0, 2.0, 5.0], 1.0, 1.0), [0.75, 0.25, 0.0], atol=1e-15)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_grid_search(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(0, 3, size=4)
        ratio = rng.uniform(0.1, 10)
        mu = qp_oracle(s, 1.0, ratio)
        grid_val, _ = grid_minimum(s, ratio)
        assert is_simplex_point(mu)
        assert objective(mu, s, ratio) <= grid_val + 1e-5
        assert grid_val - objective(mu, s, ratio) <= 1e-2

    def test_rejects_zero_lambda2(self):
        with pytest.raises(ValidationError):
            qp_oracle([1.0, 2.0], 1.0, 0.0)

    def test_projection_idempotent_on_simplex(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_simplex(p), p, atol=1e-15)


class TestEmda:
    def test_single_relation(self):
        np.testing.assert_array_equal(emda_solve([7.5], 1.0, 1.0), [1.0])

    @pytest.mark.parametrize("ratio", [0.01, 1.0, 100.0])
    def test_equal_scores_stay_uniform(self, ratio):
        np.testing.assert_allclose(emda_solve([2.0, 2.0, 2.0], 1.0, ratio), [1 / 3] * 3, atol=1e-15)

    def test_worked_example_matches_oracle(self):
        mu = emda_solve([1.0, 2.0, 5.0], 1.0, 1.0, TIGHT)
        assert np.abs(mu - qp_oracle([1.0, 2.0, 5.0], 1.0, 1.0)).sum() <= 1e-3

    def test_lambda2_zero_routes_to_limit(self):
        np.testing.assert_array_equal(emda_solve([3.0, 1.0, 2.0], 2.0, 0.0), [0, 1, 0])

    def test_lambda2_infinite_is_uniform(self):
        np.testing.assert_array_equal(emda_solve([3.0, 1.0], 2.0, np.inf), [0.5, 0.5])

    def test_constant_objective_is_uniform(self):
        np.testing.assert_array_equal(emda_solve([0.0, 0.0, 0.0], 1.0, 0.0), [1 / 3] * 3)

    def test_errors(self):
        with pytest.raises(ValidationError):
            emda_solve([], 1.0, 1.0)
        with pytest.raises(ValidationError):
            emda_solve([1.0, 2.0], 0.0, 1.0)
        with pytest.raises(ValidationError):
            emda_solve([1.0, 2.0], 1.0, -1.0)
        with pytest.raises(ValidationError):
            RclSettings(max_iters=0)
        with pytest.raises(ValidationError):
            RclSettings(tol=0.0)

    def test_info_and_early_stop(self):
        mu, iters, converged = emda_solve([1.0, 1.0 + 1e-12], 1.0, 1.0, RclSettings(1000, 1e-6), return_info=True)
        assert converged and iters < 1000
        _, iters, converged = emda_solve([1.0, 2.0, 5.0], 1.0, 1.0, RclSettings(10, 1e-14), return_info=True)
        assert iters == 10 and not converged

    def test_warm_start(self):
        s = [1.0, 2.0, 5.0]
        start = qp_oracle(s, 1.0, 1.0) * 0.98 + 0.02 / 3
        mu = emda_solve(s, 1.0, 1.0, RclSettings(2000, 1e-12), init=start)
        cold = emda_solve(s, 1.0, 1.0, RclSettings(2000, 1e-12))
        oracle = qp_oracle(s, 1.0, 1.0)
        assert np.abs(mu - oracle).sum() <= np.abs(cold - oracle).sum() + 1e-6
        with pytest.raises(ValidationError):
            emda_solve(s, 1.0, 1.0, init=[0.5, 0.5])

    def test_large_ratio_is_uniform(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            R = int(rng.integers(2, 9))
            s = rng.uniform(0, 10, R)
            np.testing.assert_allclose(emda_solve(s, 1.0, 1e9), np.full(R, 1 / R), atol=1e-4)

    def test_small_ratio_concentration_bound(self):
        # With the quadratic term negligible, mu_j / mu_min shrinks by exp(-gap_j * sum_t T_t)
        # and sum_{t<=N} t^-1/2 >= 2 sqrt(N + 1) - 2, which lower-bounds the argmin mass.
        rng = np.random.default_rng(4)
        hit = 0
        for _ in range(40):
            R = int(rng.integers(2, 9))
            s = rng.uniform(0, 10, R)
            mu, iters, _ = emda_solve(s, 1.0, 1e-9, TIGHT, return_info=True)
            phi = lipschitz_constant(s, 1.0, 1e-9)
            steps = np.sqrt(2 * np.log(R)) / phi * (2 * np.sqrt(iters + 1) - 2)
            gaps = np.sort(s)[1:] - s.min()
            bound = 1.0 / (1.0 + np.exp(-gaps * steps).sum())
            assert mu[np.argmin(s)] >= bound - 1e-6
            if bound >= 0.999:
                hit += 1
                assert mu[np.argmin(s)] >= 0.999
        assert hit > 0

    def test_well_separated_scores_concentrate(self):
        mu = emda_solve([1.0, 2.0, 3.0], 1.0, 1e-9)
        assert mu[0] >= 0.999

    @pytest.mark.parametrize("scale", [1e6, 1e9, 1e12])
    def test_large_scores_stay_finite(self, scale):
        rng = np.random.default_rng(int(np.log10(scale)))
        s = rng.uniform(-1, 1, 6) * scale
        mu = emda_solve(s, 1.0, 1.0)
        assert np.all(np.isfinite(mu)) and is_simplex_point(mu)

    @pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
    def test_backends_agree(self):
        s = np.array([0.3, 2.0, 1.1, 0.7])
        args = (s, 0.5, lipschitz_constant(s, 2.0, 1.0), np.full(4, 0.25), 3000, 1e-12)
        a, ta, _ = kernels.get_backend("compiled").emda_loop(*args)
        b, tb, _ = kernels.get_backend("python").emda_loop(*args)
        assert ta == tb
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(
    s=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8),
    ratio=st.floats(1e-3, 1e3),
)
def test_emda_simplex_and_descent(s, ratio):
    mu = emda_solve(s, 1.0, ratio)
    assert is_simplex_point(mu)
    uniform = np.full(len(s), 1.0 / len(s))
    assert objective(mu, s, ratio) <= objective(uniform, s, ratio) + 1e-9 * (1 + np.abs(s).sum())
