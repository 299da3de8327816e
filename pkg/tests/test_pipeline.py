import dataclasses

import numpy as np
import pytest

from loopforge.descriptors import build_vocabulary
from loopforge.errors import (
    ConfigMismatch,
    InvalidConfig,
    ProviderDesync,
    ReplayMismatch,
)
from loopforge.harness import DatasetProviders, WorldConfig, generate, integrate_odometry
from loopforge.io_formats import read_events, write_events
from loopforge.pipeline import (
    EventLog,
    Keyframe,
    PipelineConfig,
    PipelineEvent,
    replay,
    run,
)

GEOMETRY_REASONS = ("min_inliers", "all_samples_degenerate")


def loopy_world(**kw) -> WorldConfig:
    base = dict(
        shape="square", n_keyframes=80, loop_fraction=0.75,
        sigma_trans=0.02, sigma_rot=0.004, sigma_scale=0.002,
        descriptor_dim=16, locals_per_frame=30, place_noise=0.02,
        landmarks_per_pair=60, outlier_ratio=0.2, corr_noise=0.005,
        seed=5,
    )
    base.update(kw)
    return WorldConfig(**base)


def setup_run(world: WorldConfig, **cfg_kw):
    ds = generate(world)
    vocab = build_vocabulary(list(ds.locals.values()), k=8, seed=world.seed)
    cfg = PipelineConfig(**cfg_kw)
    stream = [Keyframe(e.frame_id, e.timestamp) for e in ds.ground_truth]
    return ds, vocab, cfg, stream


@pytest.fixture(scope="module")
def std():
    """One full run on the standard loopy world, shared read-only."""
    ds, vocab, cfg, stream = setup_run(loopy_world())
    traj, log = run(stream, DatasetProviders(ds), cfg, vocabulary=vocab)
    return ds, vocab, cfg, stream, traj, log


def assert_same_poses(t1, t2):
    assert len(t1) == len(t2)
    for a, b in zip(t1, t2):
        assert np.array_equal(a.pose.translation, b.pose.translation)
        assert np.array_equal(a.pose.rotation.quat, b.pose.rotation.quat)
        assert a.pose.scale == b.pose.scale


class TestRun:
    def test_loop_free_world_equals_odometry(self):
        # single incomplete lap: no frame pair is both same-place and
        # outside the exclusion window
        world = loopy_world(n_keyframes=60, loop_fraction=1.0)
        ds, vocab, cfg, stream = setup_run(world)
        traj, log = run(stream, DatasetProviders(ds), cfg, vocabulary=vocab)
        assert log.count("LoopAccepted") == 0
        assert log.count("OptimizationStarted") == 0
        chain = integrate_odometry(ds)
        for got, want in zip(traj, chain):
            assert np.array_equal(got.pose.translation, want.pose.translation)
            assert got.pose.scale == want.pose.scale

    def test_square_world_closes_loops(self, std):
        ds, _, _, _, traj, log = std
        assert log.count("LoopAccepted") >= 1
        assert log.count("OptimizationFinished") == log.count("OptimizationStarted")
        # corrected revisit endpoints must sit closer than raw odometry's
        chain = {e.frame_id: e.pose for e in integrate_odometry(ds)}
        got = {e.frame_id: e.pose for e in traj}
        a, b = ds.revisits[len(ds.revisits) // 2]
        raw_gap = np.linalg.norm(chain[a].translation - chain[b].translation)
        new_gap = np.linalg.norm(got[a].translation - got[b].translation)
        assert new_gap < raw_gap

    def test_trajectory_covers_every_keyframe(self, std):
        _, _, _, stream, traj, _ = std
        assert [e.frame_id for e in traj] == [kf.frame_id for kf in stream]

    def test_accepted_loops_carry_enough_inliers_and_score(self, std):
        _, _, cfg, _, _, log = std
        accepted = [e for e in log.events if e.kind == "LoopAccepted"]
        assert accepted
        for e in accepted:
            assert e.payload["inliers"] >= cfg.ransac.min_inliers
            assert e.payload["similarity"] >= e.payload["threshold"]

    def test_zero_noise_world_has_no_geometry_rejections(self):
        world = loopy_world(sigma_trans=0.0, sigma_rot=0.0, sigma_scale=0.0,
                            place_noise=0.0, corr_noise=0.0)
        ds, vocab, cfg, stream = setup_run(world)
        _, log = run(stream, DatasetProviders(ds), cfg, vocabulary=vocab)
        assert log.count("LoopAccepted") >= 1
        rejected = [e for e in log.events if e.kind == "LoopRejected"]
        assert all(e.payload["reason"] not in GEOMETRY_REASONS for e in rejected)

    def test_determinism(self, std):
        ds, vocab, cfg, stream, traj, log = std
        t2, l2 = run(stream, DatasetProviders(ds), cfg, vocabulary=vocab)
        assert log.events == l2.events
        assert_same_poses(traj, t2)

    def test_missing_provider_frame_raises_desync(self):
        ds, vocab, cfg, stream = setup_run(loopy_world(n_keyframes=20))
        prov = DatasetProviders(ds)
        del prov.dataset.locals[7]
        with pytest.raises(ProviderDesync):
            run(stream, prov, cfg, vocabulary=vocab)

    def test_no_vocabulary_rejected(self):
        ds, _, cfg, stream = setup_run(loopy_world(n_keyframes=20))
        with pytest.raises(InvalidConfig):
            run(stream, DatasetProviders(ds), cfg)


class TestReplay:
    def test_replay_is_bit_identical(self, std):
        _, _, cfg, stream, traj, log = std
        assert_same_poses(traj, replay(log, stream, cfg))

    def test_replay_survives_json_round_trip(self, std, tmp_path):
        _, _, cfg, stream, traj, log = std
        path = tmp_path / "events.json"
        write_events(path, log)
        assert_same_poses(traj, replay(read_events(path), stream, cfg))

    def test_wrong_config_hash(self, std):
        _, _, cfg, stream, _, log = std
        other = dataclasses.replace(cfg, retrieval_k=9)
        with pytest.raises(ConfigMismatch):
            replay(log, stream, other)

    def test_truncated_log(self, std):
        _, _, cfg, stream, _, log = std
        cut = EventLog(log.config_hash, log.events[:len(log.events) // 2])
        with pytest.raises(ReplayMismatch):
            replay(cut, stream, cfg)

    def test_trailing_events_rejected(self, std):
        _, _, cfg, stream, _, log = std
        padded = EventLog(log.config_hash, log.events + [
            PipelineEvent("KeyframeIngested", 999,
                          {"timestamp": 99.9, "odometry": None}),
        ])
        with pytest.raises(ReplayMismatch):
            replay(padded, stream, cfg)


class TestConfig:
    def test_defaults_follow_published_values(self):
        cfg = PipelineConfig()
        assert cfg.exclusion_window == 50
        assert cfg.warmup_target == 5
        assert cfg.retrieval_k == 5
        assert cfg.ransac.min_inliers == 30

    def test_hash_changes_with_content(self):
        a = PipelineConfig()
        b = PipelineConfig(retrieval_k=7)
        assert a.hash != b.hash
        assert a.hash == PipelineConfig().hash

    def test_validation(self):
        with pytest.raises(InvalidConfig):
            PipelineConfig(exclusion_window=-1)
        with pytest.raises(InvalidConfig):
            PipelineConfig(warmup_target=0)
        with pytest.raises(InvalidConfig):
            PipelineConfig(fixed_threshold=float("nan"))

    def test_event_kind_checked(self):
        with pytest.raises(ValueError):
            PipelineEvent("Banana", 0, {})
