import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tailsim.simcore import ConfigurationError, ServerState, Task, make_rng
from tailsim.vr_arcade import (
    NOT_DELIVERED,
    VR_SCHEMES,
    ArcadeConfig,
    FogCache,
    FrameJob,
    PredictionModel,
    ap_positions,
    build_world,
    communication_delay,
    computing_delay,
    proactive_render,
    run_all,
    run_scheme,
    sfn_rate,
    total_delay,
)


def job(**kw):
    base = dict(user=0, frame=0, size_hd=1e6, size_lq=1e5)
    base.update(kw)
    return FrameJob(**base)


# ---------------------------------------------------------------- computing delay

def test_computing_delay_exact_division():
    assert computing_delay(job(), ServerState(capability=1e9), kappa=1000) == 1


def test_cached_frame_costs_no_compute():
    assert computing_delay(job(cached=1), ServerState(capability=1.0), kappa=1000) == 0


def test_unscheduled_frame_costs_no_compute():
    assert computing_delay(job(scheduled=0), ServerState(capability=1.0), kappa=1000) == 0


def test_computing_delay_counts_queue_ahead():
    server = ServerState(capability=1e9)
    server.enqueue(Task(0, 10 ** 6, 1500.0))  # 1.5 slots of work already queued
    assert computing_delay(job(), server, kappa=1000) == 3  # ceil(1 + 1.5)


def test_frame_job_validation():
    with pytest.raises(ConfigurationError):
        job(size_lq=2e6)
    with pytest.raises(ConfigurationError):
        job(cached=2)


# ---------------------------------------------------------------- communication delay

def test_communication_delay_one_slot():
    assert communication_delay(job(), lambda t: 1e6, start=5) == 1


def test_communication_delay_three_slots():
    assert communication_delay(job(), lambda t: 1e6 / 3, start=0) == 3


def test_zero_rate_misses_and_downgrades():
    j = job()
    assert communication_delay(j, lambda t: 0.0, start=0, deadline=20) == NOT_DELIVERED
    assert j.hd_flag == 0


def test_communication_delay_uses_slots_after_start():
    rates = {1: 0.0, 2: 0.0, 3: 5e5, 4: 5e5}
    assert communication_delay(1e6, lambda t: rates.get(t, 0.0), start=0, deadline=10) == 4
    assert communication_delay(1e6, lambda t: rates.get(t, 0.0), start=2, deadline=10) == 2


@settings(max_examples=50, deadline=None)
@given(st.floats(1e3, 1e7), st.floats(1e2, 1e7))
def test_constant_rate_delay_is_ceiling(size, rate):
    d = communication_delay(size, lambda t: rate, start=0)
    assert d == max(1, math.ceil(size / rate - 1e-9))


# ---------------------------------------------------------------- total delay

def test_total_delay_examples():
    assert total_delay(1, 2, 3, 1) == 6
    assert total_delay(0, 2, 3, 1) == 0
    assert total_delay(1, 0, 1, 1) == 2


# ---------------------------------------------------------------- proactive rendering

def test_prediction_hit_fraction():
    frames = [job(frame=f) for f in range(10_000)]
    hits = proactive_render(PredictionModel(0.9), make_rng(0, "prediction"), frames)
    assert abs(hits.mean() - 0.9) <= 0.01
    assert sum(f.cached for f in frames) == hits.sum()


def test_prediction_extremes():
    frames = [job(frame=f) for f in range(100)]
    assert proactive_render(PredictionModel(1.0), make_rng(0, 4), frames).all()
    assert not proactive_render(PredictionModel(0.0), make_rng(0, 4), frames).any()


def test_prediction_model_validation():
    with pytest.raises(ConfigurationError):
        PredictionModel(1.5)


def test_cache_evicts_oldest():
    c = FogCache(2)
    c.put((0, 0), True)
    c.put((0, 1), False)
    c.put((0, 2), True)
    assert c.evictions == 1
    assert c.pop((0, 0)) is None
    assert c.pop((0, 1)) is False
    assert len(c) == 1


# ---------------------------------------------------------------- SFN

def test_single_ap_is_single_link():
    sinr, rate, used = sfn_rate(np.array([0.5]), np.array([True]), noise=1.0, directionality=0.1,
                                threshold_db=30.0, bandwidth=1e6)
    assert sinr == pytest.approx(0.5)
    assert rate == pytest.approx(1e6 * 1e-3 * math.log2(1.5))
    assert used == (0,)


def test_equal_powers_double_the_sinr():
    one, _, _ = sfn_rate(np.array([1.0, 1.0]), np.array([True, False]), 1.0, 0.0, 30.0, sfn_size=1)
    two, _, used = sfn_rate(np.array([1.0, 1.0]), np.array([True, False]), 1.0, 0.0, 30.0, sfn_size=2)
    assert two == pytest.approx(2 * one)
    assert set(used) == {0, 1}


def test_above_threshold_stays_single():
    sinr, _, used = sfn_rate(np.array([100.0, 50.0]), np.array([True, True]), 1.0, 0.0, 5.0)
    assert used == (0,) and sinr == pytest.approx(100.0)


def test_blocked_primary_gains_from_secondary():
    signal = np.array([0.2, 1.5])  # serving AP is shaded, neighbour clear
    active = np.array([True, True])
    secondary, r2, _ = sfn_rate(signal, active, 1.0, 0.5, 5.0, sfn_size=1, serving=1)
    combined, rc, used = sfn_rate(signal, active, 1.0, 0.5, 5.0, sfn_size=2, serving=0)
    assert used == (0, 1)
    assert combined >= secondary and rc >= r2


# ---------------------------------------------------------------- topology and world

def test_ap_grid_covers_room():
    pts = ap_positions(16, 20.0)
    assert pts.shape == (16, 2)
    assert pts.min() == pytest.approx(2.5) and pts.max() == pytest.approx(17.5)


def test_config_validation():
    for bad in [dict(p_hit=1.2), dict(p_block=1.0), dict(size_lq=2e7), dict(c_e=0.0), dict(deadline=0)]:
        with pytest.raises(ConfigurationError):
            ArcadeConfig(**bad)


def test_unknown_scheme():
    with pytest.raises(ConfigurationError):
        run_scheme("BASELINE-3", ArcadeConfig(horizon=10))


def test_larger_roster_extends_smaller_world():
    small = build_world(ArcadeConfig(n_users=3, horizon=300, seed=5))
    big = build_world(ArcadeConfig(n_users=6, horizon=300, seed=5))
    np.testing.assert_array_equal(small.signal, big.signal[:, :3])
    np.testing.assert_array_equal(small.hits, big.hits[:3])


# ---------------------------------------------------------------- scheme runs

def test_zero_horizon_gives_empty_statistics():
    res = run_scheme("PROPOSED", ArcadeConfig(horizon=0))
    assert res.frames == []
    assert res.stats()["mean_cm_delay"] == 0.0


@pytest.fixture(scope="module")
def blocked_runs():
    return run_all(ArcadeConfig(n_users=8, horizon=3000, seed=1))


def test_decomposition_is_exact_per_frame(blocked_runs):
    for res in blocked_runs.values():
        for r in res.frames:
            assert r.total == total_delay(r.hd, r.cp, r.cm, r.tau_ep)
            if r.hd:
                assert r.total == r.components_sum()
                assert r.total <= 20


def test_cached_frames_have_zero_compute(blocked_runs):
    for name in ("BASELINE-2", "PROPOSED"):
        frames = blocked_runs[name].frames
        assert any(r.cached for r in frames)
        assert all(r.cp == 0 for r in frames if r.cached)
        assert all(r.cp >= 1 for r in frames if not r.cached)
    assert not any(r.cached for r in blocked_runs["BASELINE-1"].frames)


def test_scheme_orderings_under_blockage(blocked_runs):
    s = {k: v.stats() for k, v in blocked_runs.items()}
    assert s["BASELINE-2"]["mean_cp_delay"] <= s["BASELINE-1"]["mean_cp_delay"]
    assert s["PROPOSED"]["mean_cp_delay"] <= s["BASELINE-1"]["mean_cp_delay"]
    assert s["BASELINE-2"]["mean_cm_delay"] >= s["BASELINE-1"]["mean_cm_delay"]
    assert s["PROPOSED"]["mean_cm_delay"] <= s["BASELINE-2"]["mean_cm_delay"]
    assert blocked_runs["PROPOSED"].counters["sfn_user_slots"] > 0


def test_proactive_never_slows_any_real_time_render(blocked_runs):
    # the proactive real-time stream is a subset of the reactive one at each server
    reactive = {(r.user, r.frame): r.cp for r in blocked_runs["BASELINE-1"].frames}
    for r in blocked_runs["BASELINE-2"].frames:
        assert r.cp <= reactive[(r.user, r.frame)]


def test_perfect_prediction_without_blockage_isolates_compute():
    cfg = ArcadeConfig(n_users=6, horizon=2000, p_hit=1.0, p_block=0.0, p_body_block=0.0, seed=2)
    res = run_all(cfg)
    s = {k: v.stats() for k, v in res.items()}
    assert s["BASELINE-1"]["mean_cm_delay"] == s["BASELINE-2"]["mean_cm_delay"] == s["PROPOSED"]["mean_cm_delay"]
    assert s["BASELINE-1"]["mean_cp_delay"] > s["BASELINE-2"]["mean_cp_delay"]
    # once a full prediction window has passed every frame is pre-rendered
    warm = [r for r in res["BASELINE-2"].frames if r.release >= cfg.pred_horizon]
    assert all(r.cached and r.cp == 0 for r in warm)


def test_zero_hit_rate_matches_reactive_compute():
    cfg = ArcadeConfig(n_users=6, horizon=2000, p_hit=0.0, seed=3)
    res = run_all(cfg, ("BASELINE-1", "BASELINE-2"))
    cp1 = [r.cp for r in res["BASELINE-1"].frames]
    cp2 = [r.cp for r in res["BASELINE-2"].frames]
    assert cp1 == cp2
    assert res["BASELINE-2"].counters["wasted_renders"] > 0


def test_end_to_end_delay_grows_with_players():
    # paired worlds: the first four players are identical in every roster
    prev = None
    for n in (4, 8, 16):
        res = run_all(ArcadeConfig(n_users=n, horizon=3000, seed=0))
        e2e = {k: np.mean([r.cp + r.cm for r in v.frames if r.user < 4]) for k, v in res.items()}
        if prev is not None:
            for k in VR_SCHEMES:
                assert e2e[k] >= prev[k]
        prev = e2e


def test_run_is_deterministic():
    cfg = ArcadeConfig(n_users=4, horizon=1000, seed=9)
    a = run_scheme("PROPOSED", cfg).stats()
    b = run_scheme("PROPOSED", cfg).stats()
    assert a == b
