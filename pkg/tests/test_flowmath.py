import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from process_painter.errors import MathDomainError
from process_painter.flowmath import (
    FlowSample,
    batch_flow_loss,
    format_checks,
    interpolate,
    masked_ce_loss,
    mse_flow_loss,
    mse_gradient,
    total_loss,
    velocity_target,
    verify_math,
)

values = st.floats(min_value=-100, max_value=100, allow_nan=False)
vectors = st.lists(values, min_size=1, max_size=6)


def test_every_property_holds():
    results = verify_math(seed=3, instances=20)
    assert len(results) == 8
    assert all(r.passed for r in results), format_checks(results)
    assert "PASS" in format_checks(results)


def test_total_loss_is_checked_at_the_configured_weight():
    results = {r.name: r for r in verify_math(seed=3, instances=20, lambda_ce=0.25)}
    assert results["total loss algebra"].passed
    assert "lambda_ce=0.25" in results["total loss algebra"].detail


def test_endpoints_and_midpoint():
    z0, z1 = np.array([1.0, -2.0]), np.array([0.5, 4.0])
    assert np.array_equal(interpolate(z0, z1, 1.0), z0)
    assert np.array_equal(interpolate(z0, z1, 0.0), z1)
    assert np.allclose(interpolate([1.0, 0.0], [0.0, 1.0], 0.5), [0.5, 0.5])


@given(vectors, st.floats(min_value=0, max_value=1))
def test_swap_identity(z, t):
    z0 = np.array(z)
    z1 = z0[::-1] + 1.0
    assert np.allclose(interpolate(z0, z1, t) + interpolate(z1, z0, t), z0 + z1, atol=1e-9)


def test_domain_errors():
    with pytest.raises(MathDomainError):
        interpolate([1.0], [1.0], 1.5)
    with pytest.raises(MathDomainError):
        interpolate([1.0, 2.0], [1.0], 0.5)
    with pytest.raises(MathDomainError):
        interpolate([math.nan], [1.0], 0.5)
    with pytest.raises(MathDomainError):
        interpolate(1.0, 2.0, 0.5)
    with pytest.raises(MathDomainError):
        mse_flow_loss([1.0, 2.0], [1.0], [0.0])
    with pytest.raises(MathDomainError):
        total_loss(1.0, 2.0, -1.0)
    with pytest.raises(MathDomainError):
        total_loss(math.inf, 2.0)
    with pytest.raises(MathDomainError):
        masked_ce_loss(np.zeros((2, 3)), [0, 3], [True, True])
    with pytest.raises(MathDomainError):
        masked_ce_loss(np.zeros((2, 3)), [0], [True, True])


def test_flow_loss_values():
    z0, z1 = np.array([2.0, 1.0]), np.array([0.0, 0.0])
    assert velocity_target(z0, z1).tolist() == [2.0, 1.0]
    assert mse_flow_loss([2.0, 1.0], z0, z1) == 0.0
    assert mse_flow_loss([3.0, 2.0], z0, z1) == pytest.approx(1.0)
    assert mse_gradient([3.0, 2.0], z0, z1).tolist() == pytest.approx([1.0, 1.0])


def test_cross_entropy():
    assert masked_ce_loss(np.zeros((1, 4)), [2], [True]) == pytest.approx(math.log(4))
    assert masked_ce_loss(np.zeros((3, 4)), [0, 1, 2], [True, False, True]) == pytest.approx(2 * math.log(4))
    assert masked_ce_loss(np.zeros((2, 4)), [0, 1], [False, False]) == 0.0


def test_total_loss():
    assert total_loss(2, 3).total == 5
    assert total_loss(4, 3, 0).total == 3
    assert total_loss(0.5, 0, 2).total == 1.0


def test_batch_loss():
    rng = np.random.default_rng(0)
    samples = [FlowSample.draw(rng, 4) for _ in range(5)]
    assert batch_flow_loss([velocity_target(s.z0, s.z1) for s in samples], samples) == 0.0
    assert batch_flow_loss([], []) == 0.0
    with pytest.raises(MathDomainError):
        batch_flow_loss([np.zeros(4)], samples)
