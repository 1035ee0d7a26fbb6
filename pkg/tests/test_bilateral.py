import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from n2c.bilateral import (
    BilateralLayerParams,
    BilateralStackParams,
    FilterWindow,
    StackOperator,
    bf_backward,
    bf_forward,
    inv_softplus,
    softplus,
    stack_backward,
    stack_forward,
    stack_windows,
    window_for_layer,
)
from n2c.errors import ContractError, DataError
from n2c.optim import gradient_check


def reference_bilateral(x, sigma_sx, sigma_sy, sigma_r, radius_x, radius_y):
    """Brute-force per-pixel evaluation of the filter definition.

    Independent oracle: explicit loops, clamp-to-edge indexing, no shared
    code with the implementation.
    """
    h, w = x.shape
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            num = den = 0.0
            for dy in range(-radius_y, radius_y + 1):
                for dx in range(-radius_x, radius_x + 1):
                    ii = min(max(i + dy, 0), h - 1)
                    jj = min(max(j + dx, 0), w - 1)
                    s = np.exp(
                        -(dx**2) / (2 * sigma_sx**2) - (dy**2) / (2 * sigma_sy**2)
                    )
                    r = np.exp(-((x[i, j] - x[ii, jj]) ** 2) / (2 * sigma_r**2))
                    num += s * r * x[ii, jj]
                    den += s * r
            out[i, j] = num / den
    return out


def gaussian_smoothing_reference(x, sigma_sx, sigma_sy, radius_x, radius_y):
    """Plain normalized spatial Gaussian smoothing, clamp-to-edge borders."""
    h, w = x.shape
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            num = den = 0.0
            for dy in range(-radius_y, radius_y + 1):
                for dx in range(-radius_x, radius_x + 1):
                    ii = min(max(i + dy, 0), h - 1)
                    jj = min(max(j + dx, 0), w - 1)
                    s = np.exp(
                        -(dx**2) / (2 * sigma_sx**2) - (dy**2) / (2 * sigma_sy**2)
                    )
                    num += s * x[ii, jj]
                    den += s
            out[i, j] = num / den
    return out


class TestReparameterization:
    @given(st.floats(0.01, 50.0))
    @settings(max_examples=50, deadline=None)
    def test_softplus_roundtrip(self, sigma):
        assert softplus(inv_softplus(sigma)) == pytest.approx(sigma, rel=1e-12)

    def test_effective_sigmas_positive_for_very_negative_theta(self):
        lay = BilateralLayerParams(-50.0, -50.0, -50.0)
        assert lay.sigma_spatial_x > 0
        assert lay.sigma_range > 0

    def test_window_radius_rule(self):
        lay = BilateralLayerParams.from_sigmas(1.5, 2.1, 0.05)
        win = window_for_layer(lay)
        assert win.radius_x == 5  # ceil(4.5)
        assert win.radius_y == 7  # ceil(6.3)
        big = window_for_layer(BilateralLayerParams.from_sigmas(40.0, 0.01, 0.05))
        assert big.radius_x == 15  # clamped
        assert big.radius_y == 1  # floor


class TestForward:
    def test_constant_image_is_fixed_point(self):
        lay = BilateralLayerParams.from_sigmas(2.0, 1.0, 0.03)
        x = np.full((10, 14), 0.42)
        y = bf_forward(x, lay, FilterWindow(4, 4))
        assert np.abs(y - 0.42).max() < 1e-12

    @given(
        c=st.floats(-0.5, 1.5),
        sr=st.floats(0.01, 10.0),
        ss=st.floats(0.2, 5.0),
    )
    @settings(max_examples=30, deadline=None)
    def test_constant_fixed_point_any_sigma(self, c, sr, ss):
        lay = BilateralLayerParams.from_sigmas(ss, ss, sr)
        y = bf_forward(np.full((8, 8), c), lay, FilterWindow(3, 3))
        assert np.abs(y - c).max() < 1e-12

    def test_huge_sigma_r_equals_gaussian_smoothing(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 1, (20, 17))
        lay = BilateralLayerParams.from_sigmas(2.0, 1.5, 1e6)
        win = FilterWindow(radius_x=6, radius_y=5)
        y = bf_forward(x, lay, win)
        ref = gaussian_smoothing_reference(x, 2.0, 1.5, 6, 5)
        assert np.abs(y - ref).max() < 1e-6

    def test_step_edge_preserved_small_sigma_r(self):
        x = np.zeros((12, 12))
        x[:, 6:] = 1.0
        lay = BilateralLayerParams.from_sigmas(2.0, 2.0, 0.01)
        y = bf_forward(x, lay, FilterWindow(6, 6))
        assert np.abs(y - x).max() < 1e-3

    def test_matches_bruteforce_reference(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 1, (9, 7))
        for sx, sy, sr, r in [(1.5, 1.5, 0.05, 3), (0.8, 2.0, 0.2, 4), (3.0, 0.5, 1.0, 2)]:
            lay = BilateralLayerParams.from_sigmas(sx, sy, sr)
            y = bf_forward(x, lay, FilterWindow(r, r))
            ref = reference_bilateral(x, sx, sy, sr, r, r)
            np.testing.assert_allclose(y, ref, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_convex_combination_bounds(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(0.5, 0.3, (10, 10))
        lay = BilateralLayerParams.from_sigmas(
            rng.uniform(0.3, 4.0), rng.uniform(0.3, 4.0), rng.uniform(0.01, 2.0)
        )
        y = bf_forward(x, lay, FilterWindow(3, 3))
        assert y.min() >= x.min() - 1e-12
        assert y.max() <= x.max() + 1e-12

    def test_output_is_normalized_weight_combination(self):
        # independently rebuild the normalized weights per pixel: they must
        # sum to 1 within 1e-12 and reproduce the filter output exactly
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, (8, 9))
        lay = BilateralLayerParams.from_sigmas(1.5, 1.5, 0.05)
        sx, sy, sr = lay.sigma_spatial_x, lay.sigma_spatial_y, lay.sigma_range
        rx = ry = 3
        y = bf_forward(x, lay, FilterWindow(rx, ry))
        h, w = x.shape
        for i, j in [(0, 0), (4, 4), (7, 8), (2, 6)]:
            weights, values = [], []
            for dy in range(-ry, ry + 1):
                for dx in range(-rx, rx + 1):
                    ii = min(max(i + dy, 0), h - 1)
                    jj = min(max(j + dx, 0), w - 1)
                    s = np.exp(-(dx**2) / (2 * sx**2) - (dy**2) / (2 * sy**2))
                    r = np.exp(-((x[i, j] - x[ii, jj]) ** 2) / (2 * sr**2))
                    weights.append(s * r)
                    values.append(x[ii, jj])
            weights = np.asarray(weights) / np.sum(weights)
            assert abs(weights.sum() - 1.0) < 1e-12
            assert (weights > 0).all()
            assert y[i, j] == pytest.approx(float(weights @ values), abs=1e-12)

    def test_monotone_convergence_to_spatial_smoothing(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0, 1, (16, 16))
        win = FilterWindow(5, 5)
        smooth = gaussian_smoothing_reference(x, 1.5, 1.5, 5, 5)
        dists = []
        for sr in (0.1, 0.3, 1.0):
            lay = BilateralLayerParams.from_sigmas(1.5, 1.5, sr)
            y = bf_forward(x, lay, win)
            dists.append(float(np.sqrt(np.mean((y - smooth) ** 2))))
        assert dists[0] > dists[1] > dists[2]

    def test_identity_limit_small_sigma_s(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, (12, 12))
        lay = BilateralLayerParams.from_sigmas(0.05, 0.05, 0.5)
        y = bf_forward(x, lay, FilterWindow(1, 1))
        assert np.abs(y - x).max() < 1e-3

    def test_non_finite_input_rejected(self):
        x = np.ones((8, 8))
        x[3, 3] = np.nan
        lay = BilateralLayerParams.from_sigmas(1.5, 1.5, 0.05)
        with pytest.raises(DataError):
            bf_forward(x, lay, FilterWindow(2, 2))

    def test_bit_stable_across_calls(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(0, 1, (16, 16))
        lay = BilateralLayerParams.from_sigmas(1.5, 1.5, 0.05)
        y1 = bf_forward(x, lay, FilterWindow(4, 4))
        y2 = bf_forward(x, lay, FilterWindow(4, 4))
        assert np.array_equal(y1, y2)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (10, 10))
        lay = BilateralLayerParams.from_sigmas(1.5, 1.5, 0.05)
        g = bf_backward(x, lay, FilterWindow(3, 3), np.zeros_like(x))
        assert g.theta_sx == 0.0 and g.theta_sy == 0.0 and g.theta_r == 0.0
        assert np.array_equal(g.input, np.zeros_like(x))

    def test_constant_input_zero_sigma_grads(self):
        lay = BilateralLayerParams.from_sigmas(1.5, 1.5, 0.05)
        x = np.full((10, 10), 0.3)
        g = bf_backward(x, lay, FilterWindow(3, 3), np.ones_like(x))
        assert g.theta_sx == pytest.approx(0.0, abs=1e-14)
        assert g.theta_sy == pytest.approx(0.0, abs=1e-14)
        assert g.theta_r == pytest.approx(0.0, abs=1e-14)

    def test_upstream_shape_mismatch(self):
        lay = BilateralLayerParams.from_sigmas(1.5, 1.5, 0.05)
        with pytest.raises(ContractError):
            bf_backward(np.ones((8, 8)), lay, FilterWindow(2, 2), np.ones((4, 4)))

    @pytest.mark.parametrize("shape", [(8, 8), (16, 16), (17, 13)])
    def test_layer_gradcheck(self, shape):
        x = np.random.default_rng([3, *shape]).uniform(0, 1, shape)
        op = StackOperator(BilateralStackParams.default_init(depth=1))
        report = gradient_check(op, x, 1e-4, seed=1)
        assert report.passed, report.format_table()


class TestStack:
    def test_depth_one_equals_bf_forward(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, (12, 12))
        params = BilateralStackParams.default_init(depth=1)
        win = stack_windows(params)
        y_stack, _ = stack_forward(x, params, windows=win)
        y_layer = bf_forward(x, params.layers[0], win[0])
        assert np.array_equal(y_stack, y_layer)

    def test_constant_image_unchanged_through_stack(self):
        params = BilateralStackParams.default_init()
        y, _ = stack_forward(np.full((16, 16), 0.77), params)
        assert np.abs(y - 0.77).max() < 1e-12

    def test_stack_gradcheck(self):
        x = np.random.default_rng(12).uniform(0, 1, (16, 16))
        report = gradient_check(
            StackOperator(BilateralStackParams.default_init()), x, 1e-4, seed=3
        )
        assert report.passed, report.format_table()

    def test_zero_upstream_zero_paramvector(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(0, 1, (10, 10))
        y, inter = stack_forward(x, BilateralStackParams.default_init())
        grads, gin = stack_backward(inter, np.zeros_like(y))
        assert np.array_equal(grads.values, np.zeros(9))
        assert np.array_equal(gin, np.zeros_like(x))

    def test_single_layer_stack_backward_matches_bf_backward(self):
        rng = np.random.default_rng(14)
        x = rng.uniform(0, 1, (10, 10))
        u = rng.standard_normal((10, 10))
        params = BilateralStackParams.default_init(depth=1)
        win = stack_windows(params)
        _, inter = stack_forward(x, params, windows=win)
        grads, gin = stack_backward(inter, u)
        direct = bf_backward(x, params.layers[0], win[0], u)
        assert grads.values[0] == direct.theta_sx
        assert grads.values[2] == direct.theta_r
        assert np.array_equal(gin, direct.input)

    def test_mismatched_upstream_contract_error(self):
        x = np.random.default_rng(15).uniform(0, 1, (8, 8))
        _, inter = stack_forward(x, BilateralStackParams.default_init())
        with pytest.raises(ContractError):
            stack_backward(inter, np.zeros((4, 4)))

    def test_param_vector_roundtrip(self):
        params = BilateralStackParams.default_init()
        pv = params.to_param_vector()
        back = BilateralStackParams.from_param_vector(pv)
        assert back.to_param_vector().values.tolist() == pv.values.tolist()
        assert pv.names[2] == "layer0.sigma_r"
        assert pv.names[8] == "layer2.sigma_r"
