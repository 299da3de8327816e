import math

import numpy as np
import pytest

from loopforge.errors import AllSamplesDegenerate, DegenerateConfiguration, TooFewPoints
from loopforge.geometry import (
    Rotation,
    Sim3Transform,
    sim3_apply_many,
    sim3_compose,
    sim3_exp,
)
from loopforge.verification import (
    Correspondence,
    RansacConfig,
    VerificationResult,
    ransac_sim3,
    umeyama,
    verify_loop,
)

SQUARE = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def residual_cost(t: Sim3Transform, src, dst) -> float:
    return float(((dst - sim3_apply_many(t, src)) ** 2).sum())


def make_pairs(transform, n=100, noise=0.0, outliers=0, seed=0, box=5.0):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-box, box, (n, 3))
    q = sim3_apply_many(transform, p) + rng.normal(0.0, noise, (n, 3))
    if outliers:
        junk = rng.choice(n, size=outliers, replace=False)
        q[junk] = rng.uniform(-3 * box, 3 * box, (outliers, 3))
    return [Correspondence(p=a, q=b) for a, b in zip(p, q)]


# ---------------------------------------------------------------------------
# umeyama


def test_umeyama_identity():
    t = umeyama(SQUARE, SQUARE)
    assert abs(t.scale - 1.0) < 1e-9
    assert t.rotation.angle < 1e-9
    assert np.abs(t.translation).max() < 1e-9


def test_umeyama_recovers_known_transform():
    truth = Sim3Transform(
        scale=2.0,
        rotation=Rotation.from_rotvec([0, 0, math.pi / 2]),
        translation=np.array([1.0, 2.0, 3.0]),
    )
    src = np.random.default_rng(0).normal(0, 1, (10, 3))
    got = umeyama(src, sim3_apply_many(truth, src))
    assert abs(got.scale - truth.scale) < 1e-9
    assert np.abs(got.translation - truth.translation).max() < 1e-9
    assert np.abs(got.rotation.as_matrix() - truth.rotation.as_matrix()).max() < 1e-9


def test_umeyama_reflection_keeps_proper_rotation():
    src = np.random.default_rng(1).normal(0, 1, (12, 3))
    mirrored = src * np.array([1.0, 1.0, -1.0])
    got = umeyama(src, mirrored)
    assert np.linalg.det(got.rotation.as_matrix()) == pytest.approx(1.0)
    assert residual_cost(got, src, mirrored) > 1e-3  # mirror is not attainable


def test_umeyama_too_few_points():
    with pytest.raises(TooFewPoints):
        umeyama(SQUARE[:2], SQUARE[:2])


def test_umeyama_degenerate_inputs():
    line = np.outer(np.arange(5.0), np.array([1.0, 0, 0]))
    with pytest.raises(DegenerateConfiguration):
        umeyama(line, line + 1.0)
    same = np.ones((4, 3))
    with pytest.raises(DegenerateConfiguration):
        umeyama(same, SQUARE)


def test_umeyama_is_local_minimum():
    rng = np.random.default_rng(2)
    truth = sim3_exp(np.array([0.5, -1.0, 0.3, 0.2, -0.1, 0.4, 0.3]))
    src = rng.normal(0, 2, (40, 3))
    dst = sim3_apply_many(truth, src) + rng.normal(0, 0.05, (40, 3))
    fit = umeyama(src, dst)
    base = residual_cost(fit, src, dst)
    for _ in range(100):
        direction = rng.normal(0, 1, 7)
        direction /= np.linalg.norm(direction)
        nudged = sim3_compose(fit, sim3_exp(1e-3 * direction))
        assert residual_cost(nudged, src, dst) >= base - 1e-12


def test_umeyama_rotation_equivariance():
    rng = np.random.default_rng(3)
    src = rng.normal(0, 1, (25, 3))
    dst = rng.normal(0, 1, (25, 3))
    base = umeyama(src, dst)
    g = Rotation.from_rotvec(rng.normal(0, 1, 3))
    gm = g.as_matrix()
    conj = umeyama(src @ gm.T, dst @ gm.T)
    assert abs(conj.scale - base.scale) < 1e-8
    assert np.abs(conj.rotation.as_matrix() - gm @ base.rotation.as_matrix() @ gm.T).max() < 1e-8
    assert np.abs(conj.translation - gm @ base.translation).max() < 1e-8


# ---------------------------------------------------------------------------
# ransac


def test_ransac_clean_data_recovers_everything():
    truth = sim3_exp(np.array([1.0, -2.0, 0.5, 0.3, 0.1, -0.2, 0.4]))
    corr = make_pairs(truth, n=100)
    result = ransac_sim3(corr, RansacConfig(seed=5))
    assert result.accepted
    assert len(result.inlier_indices) == 100
    assert np.abs(result.transform.matrix() - truth.matrix()).max() < 1e-9


@pytest.mark.parametrize("n,expected", [(29, False), (30, True)])
def test_ransac_inlier_gate(n, expected):
    truth = Sim3Transform(scale=1.5, translation=np.array([0.5, 0, 0]))
    corr = make_pairs(truth, n=n, seed=7)
    result = ransac_sim3(corr, RansacConfig(seed=0))
    assert result.accepted is expected
    assert len(result.inlier_indices) == n


def test_ransac_with_half_outliers():
    truth = sim3_exp(np.array([0.2, 1.0, -0.5, 0.1, -0.3, 0.2, 0.1]))
    corr = make_pairs(truth, n=200, noise=0.01, outliers=100, seed=11)
    result = ransac_sim3(corr, RansacConfig(seed=11))
    assert result.accepted
    assert len(result.inlier_indices) >= 90
    gap = sim3_compose(
        result.transform,
        Sim3Transform(
            scale=1.0 / truth.scale,
            rotation=truth.rotation.inverse(),
            translation=-(1.0 / truth.scale) * truth.rotation.inverse().apply(truth.translation),
        ),
    )
    assert gap.rotation.angle < math.radians(1.0)
    assert abs(gap.scale - 1.0) < 0.01


def test_ransac_deterministic():
    truth = Sim3Transform(scale=0.8, translation=np.array([1.0, 1.0, 0.0]))
    corr = make_pairs(truth, n=60, noise=0.01, outliers=20, seed=3)
    a = ransac_sim3(corr, RansacConfig(seed=42))
    b = ransac_sim3(corr, RansacConfig(seed=42))
    assert a.inlier_indices == b.inlier_indices
    assert np.array_equal(a.transform.matrix(), b.transform.matrix())
    assert a.accepted == b.accepted


def test_ransac_reported_inliers_satisfy_distance():
    truth = sim3_exp(np.array([0.3, 0.3, 0.3, 0.05, 0.05, 0.05, 0.2]))
    corr = make_pairs(truth, n=120, noise=0.015, outliers=40, seed=9)
    cfg = RansacConfig(seed=9)
    result = ransac_sim3(corr, cfg)
    p = np.array([c.p for c in corr])
    q = np.array([c.q for c in corr])
    gaps = np.linalg.norm(q - sim3_apply_many(result.transform, p), axis=1)
    for i in result.inlier_indices:
        assert gaps[i] <= cfg.inlier_dist


def test_ransac_adaptive_exit_still_accepts():
    truth = Sim3Transform(scale=1.2, translation=np.array([0.0, 0.5, 0.0]))
    corr = make_pairs(truth, n=100, noise=0.005, seed=4)
    result = ransac_sim3(corr, RansacConfig(seed=4, adaptive=True))
    assert result.accepted
    assert len(result.inlier_indices) == 100


def test_ransac_errors():
    with pytest.raises(TooFewPoints):
        ransac_sim3([], RansacConfig())
    coincident = [Correspondence(p=np.zeros(3), q=np.ones(3)) for _ in range(10)]
    with pytest.raises(AllSamplesDegenerate):
        ransac_sim3(coincident, RansacConfig(max_iters=50))


def test_ransac_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(max_iters=0)
    with pytest.raises(ValueError):
        RansacConfig(inlier_dist=0.0)
    with pytest.raises(ValueError):
        RansacConfig(min_inliers=2)


# ---------------------------------------------------------------------------
# verify_loop


def test_verify_loop_acceptance_passthrough():
    truth = Sim3Transform(scale=1.1, translation=np.array([0.2, 0.0, 0.0]))
    corr = make_pairs(truth, n=50, seed=1)
    constraint, reason = verify_loop(100, 7, corr, RansacConfig(seed=1))
    assert reason is None
    assert constraint.query_id == 100
    assert constraint.match_id == 7
    assert constraint.inliers == 50


def test_verify_loop_rejections():
    constraint, reason = verify_loop(10, 2, [], RansacConfig())
    assert constraint is None and reason == "too_few_points"

    truth = Sim3Transform()
    corr = make_pairs(truth, n=29, seed=2)
    constraint, reason = verify_loop(10, 2, corr, RansacConfig(seed=2))
    assert constraint is None and reason == "min_inliers"

    coincident = [Correspondence(p=np.zeros(3), q=np.ones(3)) for _ in range(5)]
    constraint, reason = verify_loop(10, 2, coincident, RansacConfig(max_iters=20))
    assert constraint is None and reason == "all_samples_degenerate"
