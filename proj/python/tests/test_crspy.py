"""Smoke tests for the crspy bindings, run from the repository root."""

import math
import os

import pytest

crspy = pytest.importorskip("crspy")

ROOT = os.path.normpath(os.path.join(os.path.dirname(__file__), "..", ".."))


@pytest.fixture(autouse=True)
def repo_root(monkeypatch):
    monkeypatch.chdir(ROOT)


def test_default_params():
    p = crspy.ModelParams()
    assert p.m == pytest.approx(0.19)
    p.validate()
    q = crspy.ModelParams.load("params/chronos_default")
    assert q.l_f == pytest.approx(p.l_f)


def test_kinematic_straight_line():
    model = crspy.VehicleModel(crspy.ModelType.kinematic, crspy.ModelParams())
    x = model.step_rk4([0.0, 0.0, 0.0, 1.0], [0.0, 0.0], 0.1)
    assert x[0] == pytest.approx(0.1)
    assert x[1] == 0.0


def test_track_queries():
    track = crspy.Track.load("tracks/icra_oval")
    assert track.closed
    assert track.total_length > 1.0
    pt = track.centerline(0.0)
    proj = track.project(pt, 0.0)
    assert proj.s_star == pytest.approx(0.0, abs=1e-9)
    assert proj.e_lat == pytest.approx(0.0, abs=1e-9)
    assert track.half_width_at(0.0) > 0.0


def test_episode_runs_and_is_deterministic():
    cfg = crspy.PipelineConfig()
    cfg.controller = crspy.ControllerKind.path_pid
    cfg.estimator = crspy.EstimatorKind.full_state
    cfg.duration_s = 1.0
    cfg.validate()

    log = crspy.run_episode(cfg)
    assert not log.aborted
    mat = log.matrix()
    assert mat.shape == (30, len(crspy.EpisodeLog.columns()))
    assert all(math.isfinite(v) for v in mat[-1])

    again = crspy.run_episode(cfg)
    assert again.to_csv() == log.to_csv()


def test_summary_of_lapped_run():
    cfg = crspy.PipelineConfig()
    cfg.controller = crspy.ControllerKind.ffpid
    cfg.estimator = crspy.EstimatorKind.full_state
    cfg.lap_target = 1
    summary = crspy.summarize(crspy.run_episode(cfg))
    assert summary.has_laps
    assert summary.lap_count >= 1
    assert summary.lap_time_mean > 0.0


def test_bad_config_rejected():
    cfg = crspy.PipelineConfig()
    cfg.est_cutoff_hz = 1000.0  # at or above the pose Nyquist rate
    with pytest.raises(ValueError):
        cfg.validate()
    with pytest.raises(crspy.ParseError):
        crspy.Track.load("configs/safety_demo.cfg")  # wrong schema
