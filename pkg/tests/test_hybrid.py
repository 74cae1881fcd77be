import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdwalk.hybrid import (
    ImpactError,
    SectionError,
    apply_impact,
    embed_section,
    iterate,
    step,
    step_map,
)
from pdwalk.integrator import FallReason, IntegratorConfig
from pdwalk.model import WalkerParams

P = WalkerParams(0.011)
FIXED_POINT = (0.21391825220151192, -0.21194224672841872)

pre_angles = st.floats(-math.pi / 4 + 1e-6, -1e-6)
pre_rates = st.floats(-3.0, 3.0)


@settings(max_examples=500, deadline=None)
@given(pre_angles, pre_rates, st.floats(-5.0, 5.0))
def test_impact_lands_on_the_section(th, w1, w2):
    post = apply_impact((th, 2 * th, w1, w2))
    assert post.theta2 == 2 * post.theta1
    assert post.dtheta2 == post.dtheta1 * (1 - math.cos(2 * post.theta1))
    assert abs(post.dtheta1) <= abs(w1)
    assert post.theta1 == -th


@settings(max_examples=200, deadline=None)
@given(pre_angles, pre_rates, st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
def test_impact_ignores_swing_rate(th, w1, a, b):
    assert apply_impact((th, 2 * th, w1, a)) == apply_impact((th, 2 * th, w1, b))


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1.2), st.floats(-2.0, 0.0))
def test_embedding_matches_impact_image(th, w):
    s = embed_section((th, w))
    assert s.theta2 == 2 * th
    assert s.dtheta2 == pytest.approx(w * (1 - math.cos(2 * th)), abs=1e-15)


def test_impact_rejects_states_off_the_contact_surface():
    with pytest.raises(ImpactError):
        apply_impact((-0.2, -0.3, -0.2, 0.0))


@pytest.mark.parametrize("th", [0.0, -0.1, math.nan])
def test_section_requires_positive_stance_angle(th):
    with pytest.raises(SectionError):
        embed_section((th, -0.2))


def test_fixed_point_is_mapped_to_itself():
    out = step(FIXED_POINT, P)
    assert out.stepped
    np.testing.assert_allclose(out.next, FIXED_POINT, atol=1e-10)
    assert out.duration == pytest.approx(3.8928, abs=1e-3)


def test_step_reports_the_fall_reason():
    out = step((0.9, -0.01), P)
    assert not out.stepped
    assert out.fall_reason is FallReason.STANCE_OVERTURN
    assert out.next is None


def test_iterate_near_fixed_point_survives():
    orbit = iterate((0.22, -0.22), P, n_max=200)
    assert orbit.survived == 200
    assert orbit.fall_reason is None
    assert len(orbit.points) == 201
    np.testing.assert_allclose(orbit.points[-1], FIXED_POINT, atol=1e-8)


def test_iterate_stops_at_first_fall():
    orbit = iterate((0.23, -0.23), P, n_max=200)
    assert orbit.survived == 2
    assert orbit.fall_reason is not None
    assert len(orbit.durations) == 2


def test_iterate_validates_the_start():
    with pytest.raises(SectionError):
        iterate((-0.2, -0.2), P)


def test_step_map_agrees_with_iterate():
    orbit = iterate((0.22, -0.22), P, n_max=5)
    np.testing.assert_array_equal(step_map((0.22, -0.22), P, IntegratorConfig(), 5), orbit.points[-1])
    assert step_map((0.9, -0.01), P, IntegratorConfig()) is None


def test_reference_gait_at_shallower_slope():
    # widely published period-one gait of this model at gamma = 0.009
    out = step((0.20031090, -0.19983247), WalkerParams(0.009))
    np.testing.assert_allclose(out.next, (0.20031090, -0.19983247), atol=2e-8)
