import numpy as np
import pytest
from hypothesis import given, strategies as st

from tailsim.evt import GpdParams, gpd_gradient, gpd_sample
from tailsim.fed_evt import (
    CentralEstimator,
    FedConfig,
    GlobalModel,
    LocalModel,
    PayloadLedger,
    cen_update,
    federate,
    local_update,
    power_control,
    simulate_fed,
    synthetic_agreement,
)
from tailsim.simcore import ConfigurationError, QueueState, make_rng

TRUE = GpdParams(1.0, 0.2)


def _draws(n, seed=0, params=TRUE):
    return gpd_sample(params, n, make_rng(seed, 0))


# ---------------------------------------------------------------- local update

def test_local_update_without_exceedances_is_identity():
    m = LocalModel(GpdParams(2.0, 0.1))
    out = local_update(m, np.array([0.5, 1.0, 3.0]), d=5.0)
    assert out is m


def test_local_update_counts_new_exceedances():
    m = local_update(LocalModel(GpdParams(1.0, 0.0)), np.array([1.0, 6.0, 7.5, 2.0]), d=5.0)
    assert m.sample_count == 2
    np.testing.assert_allclose(m.exceedances, [1.0, 2.5])
    m2 = local_update(m, np.array([9.0]), d=5.0)
    assert m2.sample_count == 3


def test_repeated_local_updates_converge_to_truth():
    m = LocalModel(GpdParams(3.0, 0.0))
    rng = make_rng(1, 0)
    for _ in range(200):
        m = local_update(m, gpd_sample(TRUE, 500, rng), d=0.0)
    assert m.params.sigma_tilde == pytest.approx(1.0, rel=0.05)
    assert m.params.xi == pytest.approx(0.2, rel=0.05)


def test_gradient_nearly_stationary_at_truth():
    y = _draws(200_000, seed=2)
    at_truth = np.linalg.norm(gpd_gradient(y, 1.0, 0.2))
    perturbed = np.linalg.norm(gpd_gradient(y, 1.5, 0.4))
    assert at_truth < 0.01 * perturbed


def test_local_update_uplinks_nothing():
    ledger = PayloadLedger()
    local_update(LocalModel(GpdParams(1.0, 0.0)), _draws(100), d=0.0)
    assert (ledger.uplink_units, ledger.downlink_units) == (0, 0)


def test_local_model_rejects_bad_state():
    with pytest.raises(ValueError):
        LocalModel(GpdParams(1.0, 0.0), gradient=[np.nan, 0.0])
    with pytest.raises(ValueError):
        LocalModel(GpdParams(1.0, 0.0), sample_count=-1)


# ---------------------------------------------------------------- federation

def test_federate_identical_models():
    m = LocalModel(GpdParams(1.3, 0.05), sample_count=10)
    g = federate([m, m])
    assert g.params.sigma_tilde == pytest.approx(1.3)
    assert g.params.xi == pytest.approx(0.05)
    assert g.contributors == 2


def test_federate_weighted_mean():
    a = LocalModel(GpdParams(1.0, 0.0), sample_count=100)
    b = LocalModel(GpdParams(3.0, 0.2), sample_count=300)
    g = federate([a, b])
    assert g.params.sigma_tilde == pytest.approx(2.5)
    assert g.params.xi == pytest.approx(0.15)


def test_federate_single_contributor():
    m = LocalModel(GpdParams(0.7, -0.1), sample_count=4)
    g = federate([m], previous=GlobalModel(GpdParams(1.0, 0.0), round=6))
    assert (g.params.sigma_tilde, g.params.xi) == (0.7, -0.1)
    assert g.round == 7


def test_federate_all_zero_counts_is_unweighted():
    g = federate([LocalModel(GpdParams(1.0, 0.0)), LocalModel(GpdParams(2.0, 0.3))])
    assert g.params.sigma_tilde == pytest.approx(1.5)
    assert g.params.xi == pytest.approx(0.15)


def test_federate_charges_ledger():
    ledger = PayloadLedger()
    models = [LocalModel(GpdParams(1.0, 0.0), sample_count=1)] * 3
    federate(models, ledger=ledger, n_vehicles=5)
    assert (ledger.uplink_units, ledger.downlink_units) == (6, 10)


def test_federate_requires_models():
    with pytest.raises(ValueError):
        federate([])


# ---------------------------------------------------------------- centralized baseline

def test_cen_pooled_fit_recovers_truth():
    rng = make_rng(4, 0)
    samples = [gpd_sample(TRUE, 20_000, rng) for _ in range(5)]
    g = cen_update(samples, 0.0)
    assert g.params.sigma_tilde == pytest.approx(1.0, rel=0.05)
    assert g.params.xi == pytest.approx(0.2, rel=0.05)


@pytest.mark.parametrize("V,S", [(1, 1), (4, 25), (10, 100)])
def test_cen_payload_arithmetic(V, S):
    ledger = PayloadLedger()
    cen_update([np.zeros(S)] * V, 1.0, ledger=ledger)
    assert ledger.uplink_units == V * S
    assert ledger.downlink_units == 2 * V


def test_cen_keeps_previous_model_without_data():
    prev = GlobalModel(GpdParams(2.0, 0.1), round=3)
    g = cen_update([np.zeros(10)], 1.0, previous=prev)
    assert g.params == prev.params
    assert g.round == 4


def test_cen_matches_single_vehicle_extfl():
    rng = make_rng(5, 0)
    est = CentralEstimator(0.0, GpdParams(1.0, 0.0))
    glob = GlobalModel(GpdParams(1.0, 0.0))
    local = LocalModel(glob.params)
    for _ in range(300):
        batch = gpd_sample(TRUE, 100, rng)
        local = local_update(local.synced(glob.params), batch, 0.0)
        glob = federate([local], glob)
        est.update([batch])
    for a, b in [(glob.params.sigma_tilde, est.model.params.sigma_tilde), (glob.params.xi, est.model.params.xi)]:
        assert a == pytest.approx(b, rel=0.10)


@given(st.integers(1, 20), st.integers(1, 300))
def test_payload_separation(V, S):
    # extFL ships two scalars per vehicle; CEN ships every raw sample
    ext, cen = PayloadLedger(), PayloadLedger()
    models = [LocalModel(GpdParams(1.0, 0.0))] * V
    federate(models, ledger=ext, n_vehicles=V)
    cen_update([np.zeros(S)] * V, 1.0, ledger=cen)
    assert (ext.uplink_units < cen.uplink_units) == (S > 2)


def test_ledger_rejects_negative_charge():
    with pytest.raises(ValueError):
        PayloadLedger().charge(uplink=-1)


# ---------------------------------------------------------------- power control

def test_power_empty_queue_is_minimum():
    assert power_control(QueueState(0), GlobalModel(TRUE), 100.0, 1.0) == pytest.approx(0.1)


def test_power_above_bound_is_maximum():
    assert power_control(101.0, TRUE, 100.0, 1.0) == 1.0


def test_power_rejects_nonpositive_budget():
    with pytest.raises(ConfigurationError):
        power_control(1.0, TRUE, 10.0, 0.0)


@given(st.floats(0, 200), st.floats(0, 200), st.floats(-0.5, 0.9))
def test_power_monotone_in_backlog(q1, q2, xi):
    lo, hi = sorted((q1, q2))
    g = GpdParams(1.0, xi)
    assert power_control(lo, g, 100.0, 2.0) <= power_control(hi, g, 100.0, 2.0)


@given(st.floats(0.01, 0.99), st.floats(-0.5, 0.9), st.floats(-0.5, 0.9))
def test_power_heavier_tail_lower_below_bound(frac, xa, xb):
    lo_xi, hi_xi = sorted((xa, xb))
    d = 100.0
    assert power_control(frac * d, GpdParams(1.0, hi_xi), d, 1.0) <= power_control(frac * d, GpdParams(1.0, lo_xi), d, 1.0)


# ---------------------------------------------------------------- scenario

def test_synthetic_agreement_small():
    ext, cen, el, cl = synthetic_agreement(TRUE, n_vues=4, samples_per_round=50, rounds=60, seed=3)
    assert ext.params.sigma_tilde == pytest.approx(cen.params.sigma_tilde, rel=0.1)
    assert ext.params.xi == pytest.approx(cen.params.xi, rel=0.1)
    assert el.uplink_units == 60 * 4 * 2
    assert cl.uplink_units == 60 * 4 * 50


def test_fed_config_validation():
    for bad in [dict(n_vues=0), dict(arrival_prob=1.5), dict(d=0.0), dict(round_slots=0), dict(p_max=0.0)]:
        with pytest.raises(ConfigurationError):
            FedConfig(**bad)
    with pytest.raises(ConfigurationError):
        simulate_fed(FedConfig(horizon=10), "bogus")


def test_simulate_rows_and_determinism():
    cfg = FedConfig(n_vues=3, horizon=1000, seed=9)
    a, b = simulate_fed(cfg, "extFL"), simulate_fed(cfg, "extFL")
    assert a.rows == b.rows
    assert len(a.rows) == 10
    assert list(a.rows[0]) == ["round", "scheme", "uplink_units", "downlink_units", "sigma_tilde", "xi",
                               "reliability", "excess_mean", "excess_var"]
    ups = [r["uplink_units"] for r in a.rows]
    assert ups == sorted(ups)
    assert a.rows[-1]["uplink_units"] == 10 * 3 * 2
    c = simulate_fed(cfg, "CEN")
    assert c.rows[-1]["uplink_units"] == 1000 * 3
    assert all(np.isfinite([r["excess_mean"], r["excess_var"]]).all() for r in a.rows + c.rows)
