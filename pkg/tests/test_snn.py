"""Network-level checks: quantization, level maps, stimulus schedules, membrane
dynamics, STDP arithmetic, and the simulation engine's invariants.

The quantizer range test carries its own sort-and-interpolate percentile
reference so the expected values do not come from the code under test.
"""

import numpy as np
import pytest

from turnspike import snn
from turnspike.errors import ConfigError, DataError, NumericalError


def _percentile_reference(values, pct):
    # plain linear interpolation between order statistics
    s = np.sort(np.asarray(values, dtype=float))
    pos = pct / 100.0 * (s.size - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


# ---------------------------------------------------------------------
# quantizer
# ---------------------------------------------------------------------

def test_fit_quantizer_against_percentile_reference():
    values = np.arange(1.0, 101.0)
    r1, r99 = snn.fit_quantizer(values)
    assert r1 == pytest.approx(_percentile_reference(values, 1.0), abs=1e-12)
    assert r99 == pytest.approx(_percentile_reference(values, 99.0), abs=1e-12)
    assert r1 == pytest.approx(1.99, abs=1e-12)
    assert r99 == pytest.approx(99.01, abs=1e-12)


def test_fit_quantizer_on_gaussian_sample():
    rng = np.random.default_rng(7)
    values = rng.standard_normal(100_000)
    r1, r99 = snn.fit_quantizer(values)
    assert r1 == pytest.approx(_percentile_reference(values, 1.0), abs=1e-12)
    assert r99 == pytest.approx(_percentile_reference(values, 99.0), abs=1e-12)
    # the population 1st/99th percentiles of N(0,1) are at -/+ 2.326
    assert r1 == pytest.approx(-2.326, abs=0.05)
    assert r99 == pytest.approx(2.326, abs=0.05)


def test_fit_quantizer_rejects_bad_input():
    with pytest.raises(DataError):
        snn.fit_quantizer(np.ones(1000))  # degenerate range
    with pytest.raises(DataError):
        snn.fit_quantizer(np.arange(10.0))  # too few samples
    bad = np.arange(200.0)
    bad[3] = np.nan
    with pytest.raises(DataError):
        snn.fit_quantizer(bad)


def test_quantize_fixed_points():
    assert snn.quantize(0.0, -1.0, 1.0, 40) == 20
    assert snn.quantize(-5.0, -1.0, 1.0, 40) == 0
    assert snn.quantize(5.0, -1.0, 1.0, 40) == 39
    assert snn.quantize(1.0 - 1e-9, -1.0, 1.0, 40) == 39
    assert snn.quantize(-1.0, -1.0, 1.0, 40) == 0


def test_quantize_scalar_and_array_forms():
    out = snn.quantize(np.array([-2.0, 0.0, 2.0]), -1.0, 1.0, 40)
    assert out.dtype == np.int64
    assert out.tolist() == [0, 20, 39]
    assert isinstance(snn.quantize(0.3, -1.0, 1.0, 40), int)


def test_quantize_monotone_in_value():
    rng = np.random.default_rng(5)
    xs = np.sort(rng.uniform(-3.0, 3.0, size=10_000))
    q = snn.quantize(xs, -1.0, 1.0, 40)
    assert np.all(np.diff(q) >= 0)
    assert q.min() >= 0 and q.max() <= 39


def test_quantize_rejects_bad_ranges():
    with pytest.raises(ConfigError):
        snn.quantize(0.0, 1.0, 1.0, 40)
    with pytest.raises(ConfigError):
        snn.quantize(0.0, -1.0, 1.0, 1)


# ---------------------------------------------------------------------
# level maps and stimulus schedules
# ---------------------------------------------------------------------

def test_map_levels_partitions_excitatory_population():
    lm = snn.map_levels(40, seed=2)
    assert lm.levels.shape == (40, 5)
    assert sorted(lm.levels.ravel().tolist()) == list(range(200))


def test_map_levels_seed_determinism():
    a = snn.map_levels(40, seed=9)
    b = snn.map_levels(40, seed=9)
    c = snn.map_levels(40, seed=10)
    assert np.array_equal(a.levels, b.levels)
    assert not np.array_equal(a.levels, c.levels)


def test_map_levels_rejects_uneven_split():
    with pytest.raises(ConfigError):
        snn.map_levels(41)


def test_schedule_full_column_spans_200ms():
    lm = snn.map_levels(40, seed=0)
    sch = snn.schedule_stimuli(np.zeros(40, dtype=int), lm)
    assert sch.duration == 200
    assert sch.times.tolist() == list(range(1, 201))
    assert sch.current == snn.STIM_CURRENT


def test_schedule_single_row_drives_one_level_group():
    lm = snn.map_levels(40, seed=0)
    q = 17
    sch = snn.schedule_stimuli(np.array([q]), lm)
    assert sch.times.tolist() == [1, 2, 3, 4, 5]
    assert sorted(sch.neurons.tolist()) == sorted(lm.levels[q].tolist())


def test_schedule_rejects_out_of_range_levels_and_long_events():
    lm = snn.map_levels(40, seed=0)
    with pytest.raises(DataError):
        snn.schedule_stimuli(np.array([40]), lm)
    with pytest.raises(DataError):
        snn.schedule_stimuli(np.array([-1]), lm)
    with pytest.raises(DataError):
        snn.schedule_stimuli(np.zeros(41, dtype=int), lm)  # blows the 250 ms budget


# ---------------------------------------------------------------------
# membrane dynamics
# ---------------------------------------------------------------------

def test_membrane_derivatives_at_rest():
    # 0.04 * 65^2 - 5 * 65 + 140 + 13 = -3; u' vanishes since b*v equals u
    dv, du = snn.membrane_derivatives(-65.0, -13.0, 0.0)
    assert dv == pytest.approx(-3.0, abs=1e-12)
    assert du == pytest.approx(0.0, abs=1e-12)


def test_integrate_tick_matches_two_half_steps():
    v = np.array([[-65.0]])
    u = np.array([[-13.0]])
    snn.integrate_tick(v, u, np.array([[0.02]]), np.array([[0.2]]), np.array([[0.0]]))
    ve, ue = -65.0, -13.0
    for _ in range(2):
        ve += 0.5 * (0.04 * ve * ve + 5.0 * ve + 140.0 - ue)
    ue += 0.02 * (0.2 * ve - ue)
    assert v[0, 0] == pytest.approx(ve, abs=1e-12)
    assert u[0, 0] == pytest.approx(ue, abs=1e-12)


def test_simulate_neuron_regular_spiking():
    spikes, trace = snn.simulate_neuron(snn.KERNEL_PRESETS["RS"], current=10.0)
    assert 2 <= len(spikes) <= 60
    assert np.max(trace) <= snn.FIRE_THRESHOLD + 1e-9
    # tonic regime: inter-spike intervals settle down
    isi = np.diff(spikes)
    assert np.all(isi > 1.0)


# ---------------------------------------------------------------------
# STDP arithmetic
# ---------------------------------------------------------------------

def test_stdp_exponential_form_exact():
    rule = snn.StdpRule()
    for dt in (1.0, 5.0, 10.0, 20.0):
        assert rule.potentiation(dt) == pytest.approx(0.1 * np.exp(-dt / 20.0), abs=1e-12)
        assert rule.depression(dt) == pytest.approx(-0.12 * np.exp(-dt / 20.0), abs=1e-12)


def test_stdp_known_magnitudes_at_5ms():
    rule = snn.StdpRule()
    assert rule.potentiation(5.0) == pytest.approx(0.0778801, abs=1e-6)
    assert rule.depression(5.0) == pytest.approx(-0.0934561, abs=1e-6)


def test_stdp_zero_outside_causal_window():
    rule = snn.StdpRule()
    assert rule.potentiation(0.0) == 0.0
    assert rule.potentiation(-3.0) == 0.0
    assert rule.depression(0.0) == 0.0


def test_stdp_magnitude_decreasing_in_lag():
    rule = snn.StdpRule()
    lags = np.arange(1.0, 40.0)
    pot = rule.potentiation(lags)
    dep = np.abs(rule.depression(lags))
    assert np.all(np.diff(pot) < 0)
    assert np.all(np.diff(dep) < 0)


# ---------------------------------------------------------------------
# network topology
# ---------------------------------------------------------------------

def test_build_network_shape_and_weights():
    net = snn.build_network(seed=4)
    assert net.n_total == 250
    assert net.targets.shape == (250, 25)
    assert np.all(net.weights[:200] == snn.INIT_W_EXC)
    assert np.all(net.weights[200:] == snn.INIT_W_INH)
    assert net.w_max == 10.0


def test_build_network_wiring_rules():
    net = snn.build_network(seed=4)
    # inhibitory neurons project only onto excitatory ones
    assert net.targets[200:].max() < 200
    # no self-connections anywhere
    for i in range(250):
        assert i not in set(net.targets[i].tolist())
    assert net.delays.min() >= 1 and net.delays.max() <= 20


def test_build_network_seed_determinism():
    a = snn.build_network(seed=8)
    b = snn.build_network(seed=8)
    c = snn.build_network(seed=9)
    assert np.array_equal(a.targets, b.targets)
    assert np.array_equal(a.delays, b.delays)
    assert not np.array_equal(a.targets, c.targets)


def test_network_round_trip(tmp_path):
    net = snn.build_network(seed=3)
    path = tmp_path / "net.json"
    net.save(path)
    loaded = snn.SpikingNetwork.load(path)
    assert np.array_equal(net.targets, loaded.targets)
    assert np.array_equal(net.delays, loaded.delays)
    assert np.array_equal(net.weights, loaded.weights)
    assert net.kernel_pair == loaded.kernel_pair


# ---------------------------------------------------------------------
# firing maps and rasters
# ---------------------------------------------------------------------

def test_firing_map_validation_and_pairs():
    fmap = snn.FiringMap(250, 100, np.array([3, 1]), np.array([7, 7]))
    assert fmap.n_firings == 2
    assert fmap.pairs() == {(1, 7), (3, 7)}
    with pytest.raises(DataError):
        snn.FiringMap(250, 100, np.array([250]), np.array([5]))
    with pytest.raises(DataError):
        snn.FiringMap(250, 100, np.array([0]), np.array([0]))  # times are 1-based


def test_raster_round_trip(tmp_path):
    fmap = snn.FiringMap.from_pairs({(5, 2), (9, 40), (200, 40)}, 250, 250)
    path = tmp_path / "raster.csv"
    snn.save_raster(fmap, path)
    assert path.read_text().splitlines()[0] == "neuron,time_ms"
    loaded = snn.load_raster(path, n_neurons=250, duration=250)
    assert loaded.pairs() == fmap.pairs()


# ---------------------------------------------------------------------
# simulation engine
# ---------------------------------------------------------------------

def _silent_schedule():
    return snn.StimulusSchedule(np.array([], dtype=np.int32),
                                np.array([], dtype=np.int32))


def test_simulate_without_input_stays_silent():
    net = snn.build_network(seed=1)
    fmap = snn.simulate(net, _silent_schedule(), duration_ms=250)
    assert fmap.n_firings == 0
    assert fmap.n_neurons == 250


def test_simulate_driven_network_fires_and_is_deterministic():
    net = snn.build_network(seed=1)
    lm = snn.map_levels(40, seed=1)
    sch = snn.schedule_stimuli(np.full(20, 10), lm)
    a = snn.simulate(net, sch, duration_ms=250)
    b = snn.simulate(net, sch, duration_ms=250)
    assert a.n_firings > 0
    assert a.pairs() == b.pairs()


def test_simulate_frozen_run_leaves_weights_untouched():
    net = snn.build_network(seed=1)
    before = net.weights.copy()
    lm = snn.map_levels(40, seed=1)
    snn.simulate(net, snn.schedule_stimuli(np.full(20, 10), lm), duration_ms=250)
    assert np.array_equal(net.weights, before)


def test_simulate_batch_matches_single_runs():
    net = snn.build_network(seed=2)
    lm = snn.map_levels(40, seed=2)
    schedules = [snn.schedule_stimuli(np.full(10, q), lm) for q in (0, 15, 39)]
    batch = snn.simulate_batch(net, schedules, duration_ms=150)
    for sch, fmap in zip(schedules, batch):
        assert fmap.pairs() == snn.simulate(net, sch, duration_ms=150).pairs()


def test_plastic_training_respects_weight_bounds_and_topology():
    net = snn.build_network(seed=6)
    lm = snn.map_levels(40, seed=6)
    targets = net.targets.copy()
    delays = net.delays.copy()
    rng = np.random.default_rng(0)
    columns = [rng.integers(0, 40, size=30) for _ in range(4)]
    snn.train_weights(net, columns, lm, presentations=6, seed=1)
    assert np.all(net.weights[:200] >= 0.0)
    assert np.all(net.weights[:200] <= net.w_max)
    # inhibitory weights never move
    assert np.all(net.weights[200:] == snn.INIT_W_INH)
    assert np.array_equal(net.targets, targets)
    assert np.array_equal(net.delays, delays)
    # training actually changed something on the excitatory side
    assert not np.all(net.weights[:200] == snn.INIT_W_EXC)


def test_zero_rule_training_equals_frozen_weights():
    net = snn.build_network(seed=6)
    lm = snn.map_levels(40, seed=6)
    rng = np.random.default_rng(0)
    columns = [rng.integers(0, 40, size=30) for _ in range(2)]
    rule = snn.StdpRule(a_plus=0.0, a_minus=0.0)
    snn.train_weights(net, columns, lm, presentations=4, seed=1, rule=rule)
    assert np.all(net.weights[:200] == snn.INIT_W_EXC)


def test_training_is_seed_deterministic():
    results = []
    for _ in range(2):
        net = snn.build_network(seed=6)
        lm = snn.map_levels(40, seed=6)
        rng = np.random.default_rng(3)
        columns = [rng.integers(0, 40, size=25) for _ in range(3)]
        snn.train_weights(net, columns, lm, presentations=5, seed=2)
        results.append(net.weights.copy())
    assert np.array_equal(results[0], results[1])


def test_divergent_drive_raises_numerical_error():
    net = snn.build_network(seed=1)
    sch = snn.StimulusSchedule(np.arange(1, 6, dtype=np.int32),
                               np.zeros(5, dtype=np.int32), current=1e12)
    with pytest.raises(NumericalError):
        snn.simulate(net, sch, duration_ms=50)
