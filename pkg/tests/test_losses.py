import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfbd.gradcheck import numeric_gradient, random_instance, relative_error
from xfbd.losses import (
    EPS_CLAMP,
    LOSSES,
    LossConfig,
    bce,
    contour,
    dice_eps,
    ecl,
    edge_ecl,
    focal_4ps,
    focal_restated,
    focal_v1,
    focal_v2,
    localization_smooth_l1,
    smooth_l1,
    smooth_l1_grad,
    soft_dice,
)


def test_default_config():
    cfg = LossConfig()
    assert (cfg.gamma, cfg.beta, cfg.lambda_1, cfg.lambda_4, cfg.epsilon_dice) == (2.0, 1.0, 1.0, 1.0, 1.0)


# --- soft dice -------------------------------------------------------------------

def test_soft_dice_perfect():
    assert soft_dice(np.ones(5), np.ones(5)).value == 0.0


def test_soft_dice_half():
    assert soft_dice([1, 0], [0.5, 0.5]).value == pytest.approx(0.5)


def test_soft_dice_zero_denominator():
    r = soft_dice(np.zeros(4), np.zeros(4))
    assert r.value == 0.0 and r.degenerate and not r.gradient.any()


# --- focal -----------------------------------------------------------------------

def test_focal_single_pixel():
    assert focal_restated([1], [0.5]).value == pytest.approx(-(0.5**2) * math.log(0.5), abs=1e-12)
    assert focal_restated([1], [0.5]).value == pytest.approx(0.17329, abs=1e-5)


def test_focal_gamma_zero_is_mean_bce(rng):
    y = rng.integers(0, 2, 50).astype(float)
    yh = rng.uniform(0, 1, 50)
    assert focal_restated(y, yh, LossConfig(gamma=0)).value == pytest.approx(bce(y, yh).value / 50, rel=1e-12)
    assert focal_v1(y, yh, LossConfig(gamma=0)).value == pytest.approx(bce(y, yh).value / 50, rel=1e-12)


def test_focal_at_target_is_tiny():
    y = np.array([1.0, 0.0, 1.0])
    r = focal_restated(y, y)
    assert 0 <= r.value <= -(EPS_CLAMP**2) * math.log(1 - EPS_CLAMP) + 1e-30
    assert np.isfinite(r.gradient).all()


def test_focal_4ps_is_sum(rng):
    y = rng.integers(0, 2, 20).astype(float)
    yh = rng.uniform(0.05, 0.95, 20)
    a, b, c = soft_dice(y, yh), focal_restated(y, yh), focal_4ps(y, yh)
    assert c.value == a.value + b.value
    np.testing.assert_array_equal(c.gradient, a.gradient + b.gradient)
    assert focal_4ps(np.ones(4), np.ones(4)).value == pytest.approx(0.0, abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_focal_v1_matches_restated_on_binary(pairs):
    y = np.array([p[0] for p in pairs], float)
    yh = np.array([p[1] for p in pairs])
    a, b = focal_restated(y, yh), focal_v1(y, yh)
    assert a.value == pytest.approx(b.value, rel=1e-12, abs=1e-15)
    np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-12, atol=1e-15)


# --- BCE -------------------------------------------------------------------------

def test_bce_single():
    assert bce([1], [0.5]).value == pytest.approx(math.log(2))


def test_bce_at_target():
    assert bce([1, 0], [1, 0]).value == pytest.approx(0.0, abs=1e-6)


def test_bce_gradient_formula(rng):
    y = rng.integers(0, 2, 16).astype(float)
    yh = rng.uniform(0.1, 0.9, 16)
    np.testing.assert_allclose(bce(y, yh).gradient, (yh - y) / (yh * (1 - yh)))


def test_clamped_entries_have_zero_gradient():
    r = bce([1, 0], [0.0, 1.0])
    assert np.isfinite(r.value) and not r.gradient.any()


# --- contour / ECL -----------------------------------------------------------------

def test_dice_eps_examples():
    assert dice_eps([1], [1]).value == pytest.approx(1 / 3)
    assert dice_eps(np.zeros(3), np.zeros(3)).value == 0.0
    assert dice_eps([0, 1, 0], [0, 1, 0]).value == pytest.approx(1 / 3)


def test_contour_is_weighted_sum(rng):
    y = rng.integers(0, 2, 10).astype(float)
    yh = rng.uniform(0.05, 0.95, 10)
    cfg = LossConfig(lambda_contour=0.25)
    assert contour(y, yh, cfg).value == pytest.approx(0.25 * bce(y, yh).value + dice_eps(y, yh).value)


def test_ecl_examples():
    assert ecl([1, 0, 1], [1, 0, 1]).value == 0.0
    r = ecl([1, 1, 1, 0], [0, 0, 0, 0])
    assert r.value == 4.5
    np.testing.assert_array_equal(r.gradient, [-3, -3, -3, -3])
    assert edge_ecl([1, 1, 1, 0], [0.5, 0.5, 0.5, 0.5]).value == pytest.approx(4 * math.log(2) + 0.5 * 1.0)


# --- focal v2 ----------------------------------------------------------------------

def test_focal_v2_positive_pixel():
    assert focal_v2([1], [0.5]).value == pytest.approx(-math.log(2) / 2)
    assert focal_v2([1], [0.5]).value == pytest.approx(-0.3466, abs=1e-4)


def test_focal_v2_negative_pixel_is_degenerate():
    r = focal_v2([0], [0.5])
    assert r.degenerate
    assert r.value == pytest.approx(-math.log(EPS_CLAMP) / 2)
    assert r.gradient[0] == 0.0


def test_focal_v2_gradient_positive_branch(rng):
    y = np.ones(32)
    yh = rng.uniform(0.05, 0.95, 32)
    r = focal_v2(y, yh)
    np.testing.assert_allclose(r.gradient, -1.0 / ((2 * yh + 1) * 32))
    assert relative_error(r.gradient, numeric_gradient(focal_v2, y, yh)) < 1e-6


# --- smooth L1 ---------------------------------------------------------------------

def test_smooth_l1_values():
    assert smooth_l1(0.5) == 0.125
    assert smooth_l1(2.0) == 1.5
    assert smooth_l1(1.0) == 0.5 and smooth_l1(-1.0) == 0.5
    assert smooth_l1(1 - 1e-12) == pytest.approx(0.5)


def test_smooth_l1_c1_at_one():
    h = 1e-7
    for x in (1.0, -1.0):
        left = (smooth_l1(x) - smooth_l1(x - h)) / h
        right = (smooth_l1(x + h) - smooth_l1(x)) / h
        assert left == pytest.approx(np.sign(x), abs=1e-6)
        assert right == pytest.approx(np.sign(x), abs=1e-6)
        assert smooth_l1_grad(x) == np.sign(x)


def test_localization_reduces_to_bce_without_positives(rng):
    y = np.zeros(12)
    yh = rng.uniform(0.05, 0.95, 12)
    assert localization_smooth_l1(y, yh).value == bce(y, yh).value


def test_localization_smooth_l1_value():
    y = np.array([0.0, 1.0, 2.0])
    yh = np.array([0.5, 0.5, 0.5])
    expected = bce(y, yh).value + 0.125 + 1.0
    assert localization_smooth_l1(y, yh).value == pytest.approx(expected)


# --- shared properties ----------------------------------------------------------------

@pytest.mark.parametrize("name", list(LOSSES))
def test_gradient_matches_finite_differences(name, rng):
    for _ in range(10):
        y, yh = random_instance(rng, name, 32)
        r = LOSSES[name](y, yh)
        assert np.isfinite(r.gradient).all()
        assert relative_error(r.gradient, numeric_gradient(LOSSES[name], y, yh)) <= 1e-5


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 20).astype(float)
    yh = rng.uniform(0, 1, 20)
    perm = rng.permutation(20)
    for fn in (soft_dice, dice_eps, ecl):
        a, b = fn(y, yh), fn(y[perm], yh[perm])
        assert a.value == pytest.approx(b.value, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(a.gradient[perm], b.gradient, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", list(LOSSES))
def test_deterministic(name, rng):
    y, yh = random_instance(rng, name, 16)
    a, b = LOSSES[name](y, yh), LOSSES[name](y.copy(), yh.copy())
    assert a.value == b.value and np.array_equal(a.gradient, b.gradient)


def test_length_mismatch():
    with pytest.raises(ValueError):
        bce([1, 0], [0.5])
    with pytest.raises(ValueError):
        bce([], [])
