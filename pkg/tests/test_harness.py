import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopforge.errors import InvalidConfig, InvalidFrames, LengthMismatch
from loopforge.geometry import (
    Rotation,
    Sim3Transform,
    sim3_apply,
    sim3_apply_many,
    sim3_compose,
)
from loopforge.harness import (
    DatasetProviders,
    SyntheticDataset,
    WorldConfig,
    ate_rmse,
    correspondence_seed,
    generate,
    integrate_odometry,
    make_correspondences,
    relative_gt,
)
from loopforge.pose_graph import TrajectoryEntry
from loopforge.verification import umeyama


def small_world(**kw) -> WorldConfig:
    base = dict(n_keyframes=80, loop_fraction=0.75, descriptor_dim=8,
                locals_per_frame=12, seed=3)
    base.update(kw)
    return WorldConfig(**base)


class TestGenerate:
    def test_zero_noise_odometry_matches_ground_truth(self):
        cfg = small_world(sigma_trans=0.0, sigma_rot=0.0, sigma_scale=0.0)
        ds = generate(cfg)
        chain = integrate_odometry(ds)
        for truth, est in zip(ds.ground_truth, chain):
            gap = np.linalg.norm(truth.pose.translation - est.pose.translation)
            assert gap < 1e-12
            assert abs(truth.pose.scale - est.pose.scale) < 1e-12

    def test_deterministic_across_calls(self):
        a = generate(small_world())
        b = generate(small_world())
        for i in range(a.cfg.n_keyframes):
            assert np.array_equal(a.locals[i], b.locals[i])
        for i in range(1, a.cfg.n_keyframes):
            assert np.array_equal(a.odometry[i].translation,
                                  b.odometry[i].translation)

    def test_revisit_schedule_square(self):
        ds = generate(WorldConfig(n_keyframes=400, loop_fraction=0.9))
        assert ds.period == 360
        assert (20, 380) in ds.revisits
        early = ds.ground_truth[20].pose
        late = ds.ground_truth[380].pose
        assert np.allclose(early.translation, late.translation, atol=1e-12)
        assert ds.place_ids[20] == ds.place_ids[380]

    def test_revisit_pairs_share_place_signature_statistics(self):
        ds = generate(small_world(place_noise=0.01))
        a, b = ds.revisits[0]
        # same place, so per-frame descriptor means coincide up to noise
        gap = np.linalg.norm(ds.locals[a].mean(axis=0) - ds.locals[b].mean(axis=0))
        assert gap < 0.05
        other = next(i for i in range(ds.cfg.n_keyframes)
                     if ds.place_ids[i] != ds.place_ids[a])
        far = np.linalg.norm(ds.locals[a].mean(axis=0) - ds.locals[other].mean(axis=0))
        assert far > 5 * gap

    @pytest.mark.parametrize("shape", ["square", "figure-eight", "corridor"])
    def test_shapes_generate_and_align(self, shape):
        ds = generate(small_world(shape=shape))
        assert len(ds.ground_truth) == 80
        assert len(ds.revisits) > 0
        # positions must span a plane or sim3 alignment would be degenerate
        assert ate_rmse(ds.ground_truth, ds.ground_truth, alignment="sim3") < 1e-12

    def test_timestamps_strictly_increasing(self):
        ds = generate(small_world())
        stamps = [e.timestamp for e in ds.ground_truth]
        assert all(b > a for a, b in zip(stamps, stamps[1:]))

    def test_config_validation(self):
        with pytest.raises(InvalidConfig):
            WorldConfig(shape="helix")
        with pytest.raises(InvalidConfig):
            WorldConfig(n_keyframes=9)
        with pytest.raises(InvalidConfig):
            WorldConfig(outlier_ratio=1.0)
        with pytest.raises(InvalidConfig):
            WorldConfig(sigma_trans=-0.1)
        with pytest.raises(InvalidConfig):
            WorldConfig(loop_fraction=0.0)
        with pytest.raises(InvalidConfig):
            WorldConfig(landmarks_per_pair=2)


class TestCorrespondences:
    def test_exact_inlier_count(self):
        ds = generate(small_world())
        a, b = ds.revisits[0]
        corr = make_correspondences(ds, a, b, n=200, outlier_ratio=0.5,
                                    noise=0.0, seed=9)
        assert len(corr) == 200
        truth = relative_gt(ds, a, b)
        errs = np.array([np.linalg.norm(c.q - sim3_apply(truth, c.p))
                         for c in corr])
        assert np.all(errs[:100] < 1e-12)
        assert np.all(errs[100:] > 1e-6)

    def test_umeyama_recovers_relative(self):
        ds = generate(small_world())
        a, b = ds.revisits[3]
        corr = make_correspondences(ds, a, b, n=50, outlier_ratio=0.0,
                                    noise=0.0, seed=4)
        est = umeyama(np.array([c.p for c in corr]),
                      np.array([c.q for c in corr]))
        truth = relative_gt(ds, a, b)
        assert abs(est.scale - truth.scale) < 1e-9
        assert np.allclose(est.translation, truth.translation, atol=1e-9)

    def test_deterministic_per_seed(self):
        ds = generate(small_world())
        a, b = ds.revisits[0]
        seed = correspondence_seed(ds.cfg.seed, a, b)
        c1 = make_correspondences(ds, a, b, 40, 0.2, 0.01, seed)
        c2 = make_correspondences(ds, a, b, 40, 0.2, 0.01, seed)
        assert all(np.array_equal(x.p, y.p) and np.array_equal(x.q, y.q)
                   for x, y in zip(c1, c2))

    def test_bad_frames_rejected(self):
        ds = generate(small_world())
        with pytest.raises(InvalidFrames):
            make_correspondences(ds, 0, 999, 10, 0.0, 0.0, 1)
        with pytest.raises(InvalidFrames):
            make_correspondences(ds, -1, 5, 10, 0.0, 0.0, 1)
        with pytest.raises(InvalidFrames):
            make_correspondences(ds, 0, 5, 2, 0.0, 0.0, 1)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(3, 150), ratio=st.floats(0.0, 0.9))
    def test_inlier_count_formula(self, n, ratio):
        ds = _SHARED[0]
        a, b = ds.revisits[0]
        corr = make_correspondences(ds, a, b, n, ratio, noise=0.0, seed=2)
        truth = relative_gt(ds, a, b)
        errs = np.array([np.linalg.norm(c.q - sim3_apply(truth, c.p))
                         for c in corr])
        assert int(np.sum(errs < 1e-9)) >= round(n * (1.0 - ratio))
        assert len(corr) == n


class TestProviders:
    def test_same_place_yields_pairs_other_places_empty(self):
        ds = generate(small_world())
        prov = DatasetProviders(ds)
        a, b = ds.revisits[0]
        assert len(prov.correspondences(a, b)) == ds.cfg.landmarks_per_pair
        other = next(i for i in range(ds.cfg.n_keyframes)
                     if ds.place_ids[i] != ds.place_ids[a])
        assert prov.correspondences(a, other) == []

    def test_descriptor_and_odometry_access(self):
        ds = generate(small_world())
        prov = DatasetProviders(ds)
        assert prov.descriptors(5).shape == (12, 8)
        rel = prov.odometry(5)
        assert isinstance(rel, Sim3Transform)


class TestAteRmse:
    def test_identical_is_zero(self):
        ds = generate(small_world())
        assert ate_rmse(ds.ground_truth, ds.ground_truth, alignment="none") == 0.0

    def test_uniform_offset_is_one(self):
        ds = generate(small_world())
        shift = Sim3Transform(translation=np.array([1.0, 0.0, 0.0]))
        moved = [TrajectoryEntry(e.frame_id, e.timestamp,
                                 sim3_compose(shift, e.pose))
                 for e in ds.ground_truth]
        assert abs(ate_rmse(ds.ground_truth, moved, alignment="none") - 1.0) < 1e-12

    def test_sim3_alignment_removes_global_transform(self):
        ds = generate(small_world())
        rng = np.random.default_rng(11)
        warp = Sim3Transform(
            scale=1.7,
            rotation=Rotation.from_rotvec(rng.normal(0, 0.5, 3)),
            translation=rng.normal(0, 3.0, 3),
        )
        moved = [TrajectoryEntry(e.frame_id, e.timestamp,
                                 sim3_compose(warp, e.pose))
                 for e in ds.ground_truth]
        assert ate_rmse(ds.ground_truth, moved, alignment="sim3") < 1e-9
        assert ate_rmse(ds.ground_truth, moved, alignment="none") > 1.0

    def test_se3_alignment_keeps_scale_error(self):
        ds = generate(small_world())
        scaled = [TrajectoryEntry(e.frame_id, e.timestamp,
                                  sim3_compose(Sim3Transform(scale=2.0), e.pose))
                  for e in ds.ground_truth]
        assert ate_rmse(ds.ground_truth, scaled, alignment="sim3") < 1e-9
        assert ate_rmse(ds.ground_truth, scaled, alignment="se3") > 0.5

    def test_invariant_to_common_transform(self):
        ds = generate(small_world())
        noisy = integrate_odometry(ds)
        base = ate_rmse(ds.ground_truth, noisy, alignment="none")
        rng = np.random.default_rng(7)
        warp = Sim3Transform(
            rotation=Rotation.from_rotvec(rng.normal(0, 0.4, 3)),
            translation=rng.normal(0, 2.0, 3),
        )
        gt_w = [TrajectoryEntry(e.frame_id, e.timestamp, sim3_compose(warp, e.pose))
                for e in ds.ground_truth]
        est_w = [TrajectoryEntry(e.frame_id, e.timestamp, sim3_compose(warp, e.pose))
                 for e in noisy]
        assert abs(ate_rmse(gt_w, est_w, alignment="none") - base) < 1e-9

    def test_length_and_id_mismatch(self):
        ds = generate(small_world())
        with pytest.raises(LengthMismatch):
            ate_rmse(ds.ground_truth, ds.ground_truth[:-1])
        renumbered = [TrajectoryEntry(e.frame_id + 1, e.timestamp, e.pose)
                      for e in ds.ground_truth]
        with pytest.raises(LengthMismatch):
            ate_rmse(ds.ground_truth, renumbered)

    def test_unknown_alignment(self):
        ds = generate(small_world())
        with pytest.raises(ValueError):
            ate_rmse(ds.ground_truth, ds.ground_truth, alignment="affine")


_SHARED: list[SyntheticDataset] = [generate(small_world())]
