import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdpmetric.loss import (HINGE, HUBER, SQUARED_HINGE, LossKind, loss_derivative, loss_sum,
                            loss_value, parse_loss, zero_threshold)

SQ = LossKind(SQUARED_HINGE)
HUB = LossKind(HUBER, 0.5)
HINGE_K = LossKind(HINGE)


@pytest.mark.parametrize("kind,z,want", [
    (SQ, 0.0, 0.0),
    (SQ, -1.0, 1.0),
    (HUB, -0.5, 0.5),
    (HUB, 0.0, 0.125),
    (HINGE_K, -2.0, 2.0),
])
def test_values(kind, z, want):
    assert loss_value(kind, z) == want


@pytest.mark.parametrize("kind,z,want", [
    (SQ, -1.0, -2.0),
    (HUB, 0.0, -0.5),
    (HUB, 1.0, 0.0),
    (HUB, -2.0, -1.0),
    (HINGE_K, 0.0, 0.0),
    (HINGE_K, -1.0, -1.0),
])
def test_derivatives(kind, z, want):
    assert loss_derivative(kind, z) == want


def test_scalar_in_scalar_out():
    assert isinstance(loss_value(HUB, 0.3), float)
    assert isinstance(loss_derivative(SQ, -0.3), float)
    assert loss_value(SQ, np.array([-1.0, 2.0])).shape == (2,)


@pytest.mark.parametrize("kind", [SQ, LossKind(HUBER, 0.01), LossKind(HUBER, 0.1), HUB])
def test_finite_differences(kind):
    zs = np.linspace(-3, 3, 1000)
    d = 1e-5
    fd = (loss_value(kind, zs + d) - loss_value(kind, zs - d)) / (2 * d)
    assert np.max(np.abs(loss_derivative(kind, zs) - fd)) <= 1e-6


@pytest.mark.parametrize("kind", [SQ, HUB, HINGE_K, LossKind(HUBER, 0.05)])
def test_convex_on_random_pairs(kind):
    r = np.random.default_rng(3)
    a, b = r.uniform(-3, 3, (2, 1000))
    assert np.all(loss_value(kind, (a + b) / 2) <= (loss_value(kind, a) + loss_value(kind, b)) / 2 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 0.5))
def test_convex_property(a, b, h):
    kind = LossKind(HUBER, h)
    for k in (kind, SQ):
        mid = loss_value(k, 0.5 * (a + b))
        assert mid <= 0.5 * (loss_value(k, a) + loss_value(k, b)) + 1e-9 * (1 + abs(a) + abs(b)) ** 2


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.01, 0.5))
def test_nonnegative_and_flat_region(z, h):
    kind = LossKind(HUBER, h)
    assert loss_value(kind, z) >= 0
    assert loss_value(SQ, z) >= 0
    if z >= h:
        assert loss_value(kind, z) == 0 and loss_derivative(kind, z) == 0
    if z >= 0:
        assert loss_value(SQ, z) == 0


def test_huber_approaches_hinge():
    zs = np.linspace(-3, 3, 6001)
    sup = [np.max(np.abs(loss_value(LossKind(HUBER, h), zs) - loss_value(HINGE_K, zs)))
           for h in (0.5, 0.1, 0.01)]
    assert sup[0] > sup[1] > sup[2]
    assert sup[2] < 0.01


def test_huber_branches_agree_at_boundaries():
    for h in (0.01, 0.1, 0.5):
        k = LossKind(HUBER, h)
        for z in (-h, h):
            left, right = loss_value(k, z - 1e-12), loss_value(k, z + 1e-12)
            assert abs(left - right) < 1e-9
            assert abs(loss_derivative(k, z - 1e-12) - loss_derivative(k, z + 1e-12)) < 1e-9


def test_h_validation(caplog):
    with pytest.raises(ValueError):
        LossKind(HUBER, 0.0)
    with pytest.raises(ValueError):
        LossKind(HUBER, -1.0)
    with pytest.raises(ValueError):
        LossKind("logistic")
    with caplog.at_level(logging.WARNING):
        LossKind(HUBER, 0.9)
    assert "outside" in caplog.text


def test_non_finite_input():
    with pytest.raises(ValueError):
        loss_value(SQ, np.nan)
    with pytest.raises(ValueError):
        loss_derivative(HUB, np.array([0.0, np.inf]))


def test_parse_and_threshold():
    assert parse_loss("Huber", 0.1) == LossKind(HUBER, 0.1)
    assert parse_loss("squared-hinge").name == SQUARED_HINGE
    assert zero_threshold(HUB) == 0.5
    assert zero_threshold(SQ) == 0.0


def test_loss_sum_matches_elementwise(rng):
    z = rng.normal(size=200)
    for k in (SQ, HUB, HINGE_K):
        assert loss_sum(k, z) == pytest.approx(float(np.sum(loss_value(k, z))), rel=1e-12)
