import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopforge.errors import AngleNearPi
from loopforge.geometry import (
    Rotation,
    Sim3Transform,
    sim3_adjoint,
    sim3_apply,
    sim3_apply_many,
    sim3_compose,
    sim3_exp,
    sim3_inverse,
    sim3_log,
    sim3_tangent_ad,
    skew,
)


def transform_gap(a: Sim3Transform, b: Sim3Transform) -> float:
    return float(np.abs(a.matrix() - b.matrix()).max())


# ---------------------------------------------------------------------------
# hand-checked examples


def test_identity_apply():
    p = np.array([1.5, -2.0, 3.0])
    assert np.array_equal(sim3_apply(Sim3Transform.identity(), p), p)


def test_pure_scaling_apply():
    t = Sim3Transform(scale=2.0)
    assert np.allclose(sim3_apply(t, [1.0, -1.0, 0.5]), [2.0, -2.0, 1.0])


def test_rotz_90_apply():
    r = Rotation.from_rotvec([0.0, 0.0, math.pi / 2])
    t = Sim3Transform(rotation=r)
    assert np.allclose(sim3_apply(t, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)


def test_compose_scales_multiply_translations_chain():
    a = Sim3Transform(2.0, Rotation.identity(), np.array([1.0, 0.0, 0.0]))
    b = Sim3Transform(3.0, Rotation.identity(), np.array([0.0, 1.0, 0.0]))
    c = sim3_compose(a, b)
    assert c.scale == pytest.approx(6.0)
    assert np.allclose(c.translation, [1.0, 2.0, 0.0])
    assert c.rotation.angle == pytest.approx(0.0)


def test_inverse_known_value():
    t = Sim3Transform(2.0, Rotation.identity(), np.array([2.0, 0.0, 0.0]))
    inv = sim3_inverse(t)
    assert inv.scale == pytest.approx(0.5)
    assert np.allclose(inv.translation, [-1.0, 0.0, 0.0])


def test_log_identity_is_zero():
    assert np.array_equal(sim3_log(Sim3Transform.identity()), np.zeros(7))


def test_exp_rotation_only_tangent():
    theta = 0.7
    t = sim3_exp(np.array([0, 0, 0, 0, 0, theta, 0.0]))
    assert t.scale == pytest.approx(1.0)
    assert np.allclose(t.translation, 0.0)
    assert t.rotation.angle == pytest.approx(theta)


def test_exp_matches_homogeneous_matrix_exponential():
    # independent oracle: exp of the 4x4 hat matrix [[sigma*I + phi^, rho], [0, 0]]
    from scipy.linalg import expm

    rng = np.random.default_rng(7)
    for _ in range(50):
        v = np.concatenate(
            [rng.normal(0, 2, 3), rng.normal(0, 0.8, 3), rng.normal(0, 0.5, 1)]
        )
        hat = np.zeros((4, 4))
        hat[:3, :3] = v[6] * np.eye(3) + skew(v[3:6])
        hat[:3, 3] = v[:3]
        assert np.allclose(sim3_exp(v).matrix(), expm(hat), atol=1e-12)


def test_apply_many_matches_single_apply():
    t = sim3_exp(np.array([0.3, -1.0, 2.0, 0.1, 0.2, -0.3, 0.4]))
    pts = np.random.default_rng(3).normal(0, 2, (20, 3))
    out = sim3_apply_many(t, pts)
    for i in range(20):
        assert np.allclose(out[i], sim3_apply(t, pts[i]), atol=1e-12)


# ---------------------------------------------------------------------------
# rotation internals


def test_quaternion_normalized_on_construction():
    r = Rotation(np.array([2.0, 0.0, 0.0, 0.0]))
    assert np.allclose(r.quat, [1, 0, 0, 0])


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_from_matrix_near_pi_branches(axis):
    # angles near pi exercise the non-trace branches of the matrix conversion
    phi = np.zeros(3)
    phi[axis] = math.pi - 1e-3
    r = Rotation.from_rotvec(phi)
    back = Rotation.from_matrix(r.as_matrix())
    assert np.abs(back.as_matrix() - r.as_matrix()).max() < 1e-12


def test_from_matrix_mixed_axis_near_pi():
    phi = (math.pi - 1e-4) * np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
    r = Rotation.from_rotvec(phi)
    back = Rotation.from_matrix(r.as_matrix())
    assert np.abs(back.as_matrix() - r.as_matrix()).max() < 1e-12


def test_rotvec_small_angle_round_trip():
    phi = np.array([1e-10, -2e-10, 5e-11])
    assert np.allclose(Rotation.from_rotvec(phi).as_rotvec(), phi, rtol=1e-6)


def test_rotation_apply_preserves_norm():
    r = Rotation.from_rotvec([0.4, -0.2, 0.9])
    p = np.array([1.0, 2.0, -3.0])
    assert np.linalg.norm(r.apply(p)) == pytest.approx(np.linalg.norm(p))


# ---------------------------------------------------------------------------
# validation


def test_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        Sim3Transform(scale=0.0)
    with pytest.raises(ValueError):
        Sim3Transform(scale=-1.0)


def test_rejects_nonfinite():
    with pytest.raises(ValueError):
        Sim3Transform(scale=float("nan"))
    with pytest.raises(ValueError):
        Sim3Transform(translation=np.array([np.inf, 0, 0]))


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Sim3Transform(translation=np.zeros(2))
    with pytest.raises(ValueError):
        sim3_exp(np.zeros(6))
    with pytest.raises(ValueError):
        Rotation(np.zeros(4))


def test_log_raises_near_pi():
    t = Sim3Transform(rotation=Rotation.from_rotvec([0, 0, math.pi - 1e-9]))
    with pytest.raises(AngleNearPi):
        sim3_log(t)


# ---------------------------------------------------------------------------
# properties

finite3 = st.tuples(*[st.floats(-5, 5) for _ in range(3)])


@st.composite
def tangents(draw):
    rho = np.array(draw(finite3))
    phi = np.array(draw(finite3))
    n = np.linalg.norm(phi)
    if n > 3.0:
        phi *= 3.0 / n  # keep the rotation angle clear of pi
    sigma = draw(st.floats(-1, 1))
    return np.concatenate([rho, phi, [sigma]])


@st.composite
def transforms(draw):
    return sim3_exp(draw(tangents()))


@given(tangents())
@settings(max_examples=150)
def test_log_of_exp_round_trip(v):
    assert np.abs(sim3_log(sim3_exp(v)) - v).max() < 1e-8


@given(transforms())
def test_exp_of_log_round_trip(t):
    assert transform_gap(sim3_exp(sim3_log(t)), t) < 1e-9


@given(transforms(), transforms(), transforms())
def test_composition_associative(a, b, c):
    lhs = sim3_compose(sim3_compose(a, b), c)
    rhs = sim3_compose(a, sim3_compose(b, c))
    assert transform_gap(lhs, rhs) < 1e-9


@given(transforms())
def test_inverse_cancels(t):
    assert transform_gap(sim3_compose(t, sim3_inverse(t)), Sim3Transform.identity()) < 1e-9
    assert transform_gap(sim3_compose(sim3_inverse(t), t), Sim3Transform.identity()) < 1e-9


@given(transforms(), transforms(), finite3)
def test_apply_respects_composition(a, b, p):
    p = np.array(p)
    lhs = sim3_apply(sim3_compose(a, b), p)
    rhs = sim3_apply(a, sim3_apply(b, p))
    assert np.abs(lhs - rhs).max() < 1e-6


@given(transforms(), tangents())
@settings(max_examples=60)
def test_adjoint_identity(a, v):
    v = 0.1 * v  # stay well inside the log domain after conjugation
    lhs = sim3_exp(sim3_adjoint(a) @ v)
    rhs = sim3_compose(sim3_compose(a, sim3_exp(v)), sim3_inverse(a))
    assert transform_gap(lhs, rhs) < 1e-8


def test_tangent_ad_is_adjoint_derivative():
    rng = np.random.default_rng(11)
    for _ in range(20):
        v = rng.normal(0, 0.4, 7)
        h = 1e-7
        numeric = (sim3_adjoint(sim3_exp(h * v)) - np.eye(7)) / h
        assert np.abs(numeric - sim3_tangent_ad(v)).max() < 1e-6
