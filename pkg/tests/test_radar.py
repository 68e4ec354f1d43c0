import math

import numpy as np
import pytest
from scipy import stats

from suptrack.radar import (
    PowerMeasurement,
    RadarSensor,
    SensorGrid,
    amplitude_from_snr,
    deterministic_signal,
    gamma_map,
    log_i0,
    log_likelihood,
    log_likelihood_ratio_cells,
    measurement_coords,
    psf,
    read_grid_json,
    read_measurements_csv,
    simulate_measurement,
    template,
    write_grid_json,
    write_measurements_csv,
)
from suptrack.rfs import Label, LabeledSet, LabeledState, ParticleArray


def state_at(r, b_deg, v=(0.0, 0.0)):
    b = math.radians(b_deg)
    return np.array([r * math.cos(b), v[0], r * math.sin(b), v[1]])


@pytest.fixture(scope="module")
def grid():
    return SensorGrid.regular()


def test_default_grid(grid):
    assert grid.shape == (101, 31)
    assert grid.m == 3131
    assert grid.range_var == 100.0
    assert math.isclose(grid.azimuth_var, math.radians(1.0) ** 2)


def test_grid_validation():
    with pytest.raises(ValueError):
        SensorGrid([1.0, 1.0], [0.0, 1.0], 1.0, 1.0)
    with pytest.raises(ValueError):
        SensorGrid([1.0, 2.0], [0.0, 1.0], 1.0, 1.0, noise_var=0.0)


def test_amplitude_from_snr():
    assert amplitude_from_snr(10.0) == math.sqrt(20.0)
    assert math.isclose(10 * math.log10(amplitude_from_snr(7.0) ** 2 / 2.0), 7.0)


def test_coords():
    r, b, d = measurement_coords([3.0, 3.0, 4.0, 4.0])
    assert r == 5.0 and math.isclose(b, math.atan2(4, 3)) and math.isclose(d, 5.0)


class TestPsf:
    def test_peak_is_one(self, grid):
        h = psf(grid, state_at(1500.0, 45.0))
        assert max(h.values()) == pytest.approx(1.0, abs=1e-12)

    def test_half_power_offset(self, grid):
        # range offset with offset^2 = 2 R ln 2 gives h = 0.5 at the centroid cell
        off = math.sqrt(2 * grid.range_var * math.log(2))
        h = psf(grid, state_at(1500.0 + off, 45.0), gate_cells=3)
        cell = int(np.ravel_multi_index((50, 15), grid.shape))
        assert h[cell] == pytest.approx(0.5, rel=1e-9)

    def test_template_sizes(self, grid):
        assert template(grid, state_at(1500.0, 45.0), 3).cell_indices.size == 49
        assert template(grid, state_at(1500.0, 45.0), 0).cell_indices.size == 1
        edge = template(grid, state_at(1000.0, 30.0), 3).cell_indices
        assert edge.size == 16 and edge.min() >= 0 and edge.max() < grid.m

    def test_doppler_axis(self):
        g = SensorGrid.regular(range_limits=(1400, 1600), azimuth_limits_deg=(40, 50), doppler_limits=(-20, 0))
        x = state_at(1500.0, 45.0, v=(-10 / math.sqrt(2), -10 / math.sqrt(2)))
        assert template(g, x, 1).cell_indices.size == 27
        assert max(psf(g, x).values()) == pytest.approx(1.0)


class TestLikelihood:
    def test_ratio_matches_noncentral_chi2(self):
        zhat = np.array([0.5, 4.0, 20.0])
        z = np.array([0.3, 5.0, 30.0])
        want = np.log(stats.ncx2.pdf(z, 2, zhat) / stats.chi2.pdf(z, 2))
        np.testing.assert_allclose(log_likelihood_ratio_cells(z, zhat), want, rtol=1e-10)

    def test_log_i0_large_argument(self):
        assert np.isfinite(log_i0(1e5))
        assert log_i0(0.0) == 0.0

    def test_empty_set_is_zero(self, grid):
        z = PowerMeasurement(np.ones(grid.m))
        assert log_likelihood(grid, z, LabeledSet(), 4.0) == 0.0

    def test_cells_outside_template_irrelevant(self, grid, rng):
        X = LabeledSet([LabeledState(state_at(1500.0, 45.0), Label(1, 0))])
        z = rng.exponential(2.0, grid.m)
        a = log_likelihood(grid, z, X, 4.0)
        far = np.setdiff1d(np.arange(grid.m), template(grid, X[Label(1, 0)].x).cell_indices)
        z[far] = rng.exponential(2.0, far.size)
        assert log_likelihood(grid, z, X, 4.0) == a

    def test_batch_matches_scalar(self, grid, rng):
        sensor = RadarSensor(grid, amplitude_from_snr(10.0))
        sets = [
            LabeledSet([LabeledState(state_at(1500.0, 45.0), Label(1, 0)), LabeledState(state_at(1520.0, 45.3), Label(2, 0))]),
            LabeledSet([LabeledState(state_at(1200.0, 40.0), Label(2, 0))]),
            LabeledSet(),
        ]
        z = sensor.simulate(sets[0], rng)
        batch = sensor.log_likelihood_batch(z, ParticleArray.from_sets(sets, 4))
        np.testing.assert_allclose(batch, [sensor.log_likelihood(z, X) for X in sets], rtol=1e-10)


class TestSimulation:
    def test_noise_only_exponential(self, grid):
        rng = np.random.default_rng(0)
        z = np.concatenate([simulate_measurement(grid, LabeledSet(), 4.0, rng).values for _ in range(320)])
        assert z.size >= 10**6
        assert z.mean() == pytest.approx(2.0, rel=0.01)
        assert stats.kstest(z[:20000], "expon", args=(0, 2.0)).pvalue > 1e-3

    def test_peak_cell_mean(self, grid):
        A = amplitude_from_snr(10.0)
        x = state_at(1500.0, 45.0)
        X = LabeledSet([LabeledState(x, Label(1, 0))])
        zhat = deterministic_signal(grid, X, A)
        cell = int(np.argmax(zhat))
        rng = np.random.default_rng(1)
        vals = np.array([simulate_measurement(grid, X, A, rng).values[cell] for _ in range(20000)])
        assert vals.mean() == pytest.approx(zhat[cell] + 2.0, rel=0.01)

    def test_common_phase_is_coherent(self, grid):
        A = 4.0
        X = LabeledSet([LabeledState(state_at(1500.0, 45.0), Label(1, 0)), LabeledState(state_at(1500.0, 45.0), Label(2, 0))])
        z = simulate_measurement(SensorGrid(grid.range_centroids, grid.azimuth_centroids, grid.range_var,
                                            grid.azimuth_var, noise_var=1e-12), X, A, np.random.default_rng(0),
                                 phase_mode="common")
        cell = int(np.argmax(z.values))
        assert z.values[cell] == pytest.approx((2 * A) ** 2, rel=1e-6)

    def test_unknown_phase_mode(self, grid, rng):
        with pytest.raises(ValueError):
            simulate_measurement(grid, LabeledSet(), 1.0, rng, phase_mode="nope")

    def test_negative_power_rejected(self):
        with pytest.raises(ValueError):
            PowerMeasurement(np.array([-1.0]))


def test_gamma_map_is_incoherent_power(grid):
    A = amplitude_from_snr(10.0)
    x = state_at(1500.0, 45.0)
    g = gamma_map(grid, x, A)
    h = psf(grid, x)
    for c, v in h.items():
        assert g[c] == pytest.approx(A**2 * v**2)
    sensor = RadarSensor(grid, A)
    cells, vals = sensor.gamma_sparse(x[None])
    assert vals.sum() == pytest.approx(g.sum())
    assert sensor.preprocess(np.full(grid.m, 2.0)).max() == 0.0


def test_csv_round_trip(tmp_path, rng):
    g = SensorGrid.regular(range_limits=(1400, 1500), azimuth_limits_deg=(40, 45))
    scans = [simulate_measurement(g, LabeledSet(), 1.0, rng, time_index=k) for k in (1, 2)]
    write_measurements_csv(tmp_path / "m.csv", g, scans)
    write_grid_json(tmp_path / "g.json", g)
    g2 = read_grid_json(tmp_path / "g.json")
    back = read_measurements_csv(tmp_path / "m.csv", g2)
    assert [s.time_index for s in back] == [1, 2]
    for a, b in zip(scans, back):
        np.testing.assert_array_equal(a.values, b.values)
