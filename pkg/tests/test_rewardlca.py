import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_episode, co2e_tonnes
from pavrl.exceptions import ConfigurationError, SequencingError, ValidationError
from pavrl.rewardlca import (
    GWP, LEDGER_COLUMNS, POLLUTANTS, CostCatalog, CostEntry, EmissionsInventory, RewardLedger, combine_effcost,
    discounted_step_cost, eff_cost, env_cost, final_effcost, gwp_co2e, ledger_to_csv, reward, step_area,
    update_ledger,
)

ZERO = {"IRI": 0.0, "RD": 0.0}


def catalog(cost=100.0, co2_kg=0.0, **extra):
    entries = {0: CostEntry(0.0, EmissionsInventory()), 1: CostEntry(cost, EmissionsInventory.single("CO2", co2_kg))}
    entries.update(extra)
    return CostCatalog(entries)


# -- emissions ---------------------------------------------------------------


@pytest.mark.parametrize("pollutant,expected", [("CH4", 21.0), ("N2O", 310.0), ("CO", 3.0), ("CO2", 1.0),
                                                ("SO2", 0.0), ("NOx", 0.0), ("PM2.5", 0.0)])
def test_gwp_of_unit_inventories(pollutant, expected):
    assert gwp_co2e(EmissionsInventory.single(pollutant, 1000.0)) == expected


def test_blank_factor_is_tracked_but_not_counted():
    e = EmissionsInventory.single("SO2", 500.0, "transportation")
    assert gwp_co2e(e) == 0.0 and e.total()["SO2"] == 500.0


def test_negative_mass_is_rejected():
    with pytest.raises(ValidationError):
        EmissionsInventory.single("CO2", -1.0)
    with pytest.raises(ValidationError):
        EmissionsInventory({"use": {"CO2": 1.0}})


mass = st.floats(0.0, 1e5, allow_nan=False)
inventory = st.builds(
    lambda v: EmissionsInventory({s: dict(zip(POLLUTANTS, v[i * 7:(i + 1) * 7]))
                                  for i, s in enumerate(("production", "transportation", "construction"))}),
    st.lists(mass, min_size=21, max_size=21))


@settings(max_examples=100, deadline=None)
@given(inventory, inventory)
def test_gwp_is_linear_and_matches_oracle(e1, e2):
    assert gwp_co2e(e1 + e2) == pytest.approx(gwp_co2e(e1) + gwp_co2e(e2), rel=1e-12, abs=1e-12)
    assert gwp_co2e(e1) == pytest.approx(co2e_tonnes(e1.masses), rel=1e-12, abs=1e-12)


def test_gwp_override_hook():
    e = EmissionsInventory.single("CH4", 1000.0)
    assert gwp_co2e(e, {**GWP, "CH4": 28.0}) == 28.0


# -- costs --------------------------------------------------------------------


def test_env_cost_examples():
    cat = catalog(co2_kg=10_000.0)
    assert env_cost(0, cat) == 0.0
    assert env_cost(1, cat, 50.0) == 500.0
    assert env_cost(1, cat, 0.0) == 0.0


def test_missing_action_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        env_cost(5, catalog())


def test_discounted_cost_examples():
    cat = catalog(cost=100.0)
    assert discounted_step_cost(1, cat, 0.0, 0) == 100.0
    assert discounted_step_cost(1, cat, 0.0, 2) == pytest.approx(92.45562130177515, rel=1e-15)
    assert discounted_step_cost(0, cat, 50.0, 7) == 0.0
    with pytest.raises(ValidationError):
        discounted_step_cost(1, cat, 0.0, -1)


def test_consecutive_discount_ratio():
    cat = CostCatalog.default()
    for t in range(20):
        r = discounted_step_cost(12, cat, 50.0, t) / discounted_step_cost(12, cat, 50.0, t + 1)
        assert r == pytest.approx(1.04, rel=1e-15)


def test_zeta_scales_env_cost_exactly():
    cat = catalog(cost=0.0, co2_kg=2000.0)
    for c in (0.5, 2.0, 3.0):
        assert env_cost(1, cat, 50.0 * c) == env_cost(1, cat, 50.0) * c


def test_zeta_scaling_of_effcost_without_economic_cost():
    cat = catalog(cost=0.0, co2_kg=2000.0)
    eff = []
    for z in (50.0, 100.0):
        led = update_ledger(RewardLedger(cat, z), {"IRI": 0.3, "RD": 0.1}, 1, 0)
        eff.append(eff_cost(led, "IRI"))
    assert eff[1] == pytest.approx(eff[0] / 2.0, rel=1e-14)


def test_donothing_must_be_free():
    with pytest.raises(ConfigurationError):
        CostCatalog({0: CostEntry(1.0, EmissionsInventory())})


def test_catalog_file_roundtrip(tmp_path):
    cat = CostCatalog.default()
    path = tmp_path / "cat.json"
    cat.save(path)
    back = CostCatalog.load(path)
    assert back.to_dict() == cat.to_dict() and back.currency == "USD"


# -- areas ----------------------------------------------------------------------


def test_step_area_examples():
    assert step_area((1.0, 1.2), (1.0, 0.8), (0.0, 1.0)) == pytest.approx(0.2, abs=1e-15)
    assert step_area((1.3, 1.5), (1.3, 1.5), (0.0, 3.5)) == 0.0
    assert step_area((1.2, 1.4), (0.8, 1.0), (0.0, 1.0)) == pytest.approx(0.4, abs=1e-15)
    assert step_area((1.0, 1.0), (1.0, 1.5), (0.0, 1.0)) == -0.25
    with pytest.raises(ConfigurationError):
        step_area((1.0, 1.0), (1.0, 1.0), (2.0, 2.0))


# -- ledger -------------------------------------------------------------------


def test_fresh_ledger_with_donothing_stays_zero():
    led = update_ledger(RewardLedger(catalog()), ZERO, 0, 0)
    assert led.total_area == ZERO and led.total_cost == 0.0 and led.effcost_history == [0.0]


def test_areas_accumulate():
    led = RewardLedger(catalog())
    update_ledger(led, {"IRI": 0.2, "RD": 0.0}, 1, 0)
    update_ledger(led, {"IRI": 0.4, "RD": 0.0}, 0, 1)
    assert led.total_area["IRI"] == pytest.approx(0.6, abs=1e-15)


def test_twenty_donothing_updates():
    led = RewardLedger(CostCatalog.default())
    for t in range(20):
        update_ledger(led, ZERO, 0, t)
    assert led.total_cost == 0.0 and led.effcost_history == [0.0] * 20


def test_out_of_order_step_is_rejected():
    led = RewardLedger(catalog())
    with pytest.raises(SequencingError):
        update_ledger(led, ZERO, 0, 1)


def test_eff_cost_examples():
    led = RewardLedger(catalog())
    assert eff_cost(led, "IRI") == 0.0
    led.total_area["IRI"], led.total_cost = 0.6, 0.3
    assert eff_cost(led, "IRI") == 2.0
    led.total_area["IRI"] = -0.6
    assert eff_cost(led, "IRI") == -2.0


def test_combined_effcost_examples():
    assert combine_effcost(2.0, 1.0) == pytest.approx(1.55, abs=1e-15)
    assert combine_effcost(0.0, 0.0) == 0.0
    assert combine_effcost(1.0, 1.0) == pytest.approx(1.0, abs=1e-15)
    led = RewardLedger(catalog())
    led.total_area.update({"IRI": 2.0, "RD": 1.0})
    led.total_cost = 1.0
    assert final_effcost(led) == pytest.approx(1.55, abs=1e-15)


def test_reward_is_a_difference():
    assert reward(0.0, 1.2) == 1.2
    a = RewardLedger(catalog())
    b = update_ledger(a.copy(), {"IRI": 0.5, "RD": 0.5}, 1, 0)
    assert reward(a, b) == final_effcost(b) and a.effcost_history == []


def test_invalid_weights_and_zeta():
    with pytest.raises(ConfigurationError):
        RewardLedger(catalog(), weights={"IRI": 0.6, "RD": 0.6})
    with pytest.raises(ConfigurationError):
        RewardLedger(catalog(), zeta=-1.0)


def _random_episode(env, rng):
    env.reset(seed=int(rng.integers(1 << 31)))
    rewards = []
    done = False
    while not done:
        _, r, done, _ = env.step(int(rng.integers(env.n_actions)))
        rewards.append(r)
    return rewards


def test_episode_matches_brute_force_oracle(env, rng):
    for _ in range(10):
        rewards = _random_episode(env, rng)
        area, cost, history = brute_force_episode(env.trajectory, env.catalog, env.config.zeta, env.ranges)
        led = env.ledger
        assert led.total_cost == pytest.approx(cost, rel=1e-9)
        for ind in ("IRI", "RD"):
            assert led.total_area[ind] == pytest.approx(area[ind], rel=1e-9, abs=1e-12)
        assert np.allclose(led.effcost_history, history, rtol=1e-9, atol=1e-15)
        assert sum(rewards) == pytest.approx(final_effcost(led), rel=1e-9, abs=1e-15)


def test_ledger_csv(env, rng):
    _random_episode(env, rng)
    rows = list(csv.DictReader(io.StringIO(ledger_to_csv(env.ledger))))
    assert tuple(rows[0]) == LEDGER_COLUMNS and len(rows) == env.horizon
    assert float(rows[-1]["effcost"]) == env.ledger.effcost_history[-1]
