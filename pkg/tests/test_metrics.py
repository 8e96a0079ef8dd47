import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from romuq.datagen import ParamPoint
from romuq.metrics import (MetricReport, ZeroVarianceError, crps,
                           kinetic_energy, pearson, relative_mse, scaled_mse)

# ------------------------------------------------------------- kinetic energy


def test_kinetic_energy_constant_field():
    # u = c everywhere: k = c^2 / 2
    states = np.full((5, 8), 3.0)
    np.testing.assert_allclose(kinetic_energy(states), 4.5)


def test_kinetic_energy_unit_sine_mean():
    x = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    k = kinetic_energy(np.sin(x)[None, :])
    assert abs(k[0] - 0.25) < 1e-12


def test_kinetic_energy_two_channels():
    u = np.full(4, 1.0)
    v = np.full(4, 2.0)
    states = np.concatenate([u, v])[None, :]
    np.testing.assert_allclose(kinetic_energy(states, channels=2), 2.5)
    with pytest.raises(ValueError):
        kinetic_energy(np.zeros((1, 5)), channels=2)
    with pytest.raises(ValueError):
        kinetic_energy(np.zeros((1, 4)), channels=3)


def test_kinetic_energy_non_negative_and_scales_quadratically():
    rng = np.random.default_rng(0)
    states = rng.standard_normal((10, 16))
    k1 = kinetic_energy(states)
    k2 = kinetic_energy(2 * states)
    assert np.all(k1 >= 0)
    np.testing.assert_allclose(k2, 4 * k1)


# --------------------------------------------------------------- relative MSE


def test_relative_mse_exact_match_is_zero():
    truth = np.random.default_rng(1).standard_normal((4, 4))
    assert relative_mse(truth, truth) == 0.0


def test_relative_mse_one_percent_perturbation():
    # pred = 1.01 * truth gives exactly 0.01% relative MSE... no: the error
    # energy is (0.01)^2 of the truth energy, so 0.01 percent
    truth = np.random.default_rng(2).standard_normal((6, 3)) + 5
    val = relative_mse(1.01 * truth, truth)
    assert val == pytest.approx(0.01, rel=1e-10)


def test_relative_mse_orthogonal_error_energy():
    truth = np.array([1.0, 0.0])
    pred = np.array([1.0, 0.5])
    assert relative_mse(pred, truth) == pytest.approx(25.0)


def test_relative_mse_zero_truth_raises():
    with pytest.raises(ZeroVarianceError):
        relative_mse(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        relative_mse(np.ones(3), np.ones(4))


# ----------------------------------------------------------------- scaled MSE


def test_scaled_mse_known_values():
    truth = np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 1.0]])
    pred = truth + np.array([[1.0, 0.0]] * 3)
    per_point, mean = scaled_mse(pred, truth)
    # point 0: mse 1, range 4 -> 1/16; point 1: constant truth, zero error
    assert per_point[0] == pytest.approx(1.0 / (16.0 + 1e-8))
    assert per_point[1] == pytest.approx(0.0)
    assert mean == pytest.approx(per_point.mean())


def test_scaled_mse_constant_truth_uses_floor():
    truth = np.full((4, 1), 2.0)
    pred = truth + 1e-3
    per_point, _ = scaled_mse(pred, truth)
    assert per_point[0] == pytest.approx(1e-6 / 1e-8)


def test_scaled_mse_scale_invariance_away_from_floor():
    rng = np.random.default_rng(3)
    truth = rng.standard_normal((20, 5))
    pred = truth + 0.1 * rng.standard_normal((20, 5))
    _, m1 = scaled_mse(pred, truth)
    _, m2 = scaled_mse(1e3 * pred, 1e3 * truth)
    assert m2 == pytest.approx(m1, rel=1e-6)


# ----------------------------------------------------------------------- CRPS


def test_crps_symmetric_pair_printed_form():
    # members {t + d, t - d}: term1 = d^2, pair spread term = d^2 -> 0
    ens = np.array([[1.5], [0.5]])
    truth = np.array([1.0])
    assert crps(ens, truth, form="printed") == pytest.approx(0.0, abs=1e-12)
    # abs form: term1 = d, spread term = d/2 -> d/2
    assert crps(ens, truth, form="abs") == pytest.approx(0.25)


def test_crps_degenerate_ensemble():
    # all members equal e: printed (e-t)^2, abs |e-t|
    ens = np.full((8, 3), 2.0)
    truth = np.full(3, 0.5)
    assert crps(ens, truth, form="printed") == pytest.approx(2.25)
    assert crps(ens, truth, form="abs") == pytest.approx(1.5)


def test_crps_printed_matches_brute_force():
    rng = np.random.default_rng(4)
    ens = rng.standard_normal((7, 5))
    truth = rng.standard_normal(5)
    got = crps(ens, truth, form="printed")
    n = 7
    t1 = np.mean((ens - truth[None]) ** 2, axis=0)
    t2 = np.zeros(5)
    for i in range(n):
        for j in range(n):
            t2 += (ens[i] - ens[j]) ** 2
    expected = np.mean(t1 - t2 / (2 * n * n))
    assert got == pytest.approx(expected, rel=1e-12)


def test_crps_abs_matches_brute_force():
    rng = np.random.default_rng(5)
    ens = rng.standard_normal((6, 4))
    truth = rng.standard_normal(4)
    got = crps(ens, truth, form="abs")
    n = 6
    t1 = np.mean(np.abs(ens - truth[None]), axis=0)
    t2 = np.zeros(4)
    for i in range(n):
        for j in range(n):
            t2 += np.abs(ens[i] - ens[j])
    expected = np.mean(t1 - t2 / (2 * n * n))
    assert got == pytest.approx(expected, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12),
       st.floats(-50, 50))
def test_crps_abs_non_negative_property(members, truth):
    val = crps(np.array(members)[:, None], np.array([truth]), form="abs")
    assert val >= -1e-9


def test_crps_validates_input():
    with pytest.raises(ValueError):
        crps(np.zeros((1, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        crps(np.zeros((4, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        crps(np.zeros((4, 3)), np.zeros(3), form="nope")


# -------------------------------------------------------------------- Pearson


def test_pearson_perfect_and_inverted():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    assert pearson(x, 5 * x + 2) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)


def test_pearson_known_intermediate_value():
    x = np.array([-1.0, 0.0, 1.0])
    y = np.array([0.0, 1.0, 1.0])
    # cov terms: sum xc*yc = 1, |xc| = sqrt 2, |yc| = sqrt(2/3)
    assert pearson(x, y) == pytest.approx(np.sqrt(3) / 2)


def test_pearson_zero_variance_raises():
    with pytest.raises(ZeroVarianceError):
        pearson(np.ones(4), np.arange(4.0))
    with pytest.raises(ValueError):
        pearson(np.arange(3.0), np.arange(4.0))


def test_pearson_clipped_to_unit_interval():
    rng = np.random.default_rng(6)
    for _ in range(50):
        x = rng.standard_normal(5)
        y = rng.standard_normal(5)
        assert -1.0 <= pearson(x, y) <= 1.0


# --------------------------------------------------------------------- report


def test_metric_report_csv(tmp_path):
    report = MetricReport()
    report.add(ParamPoint.of(nu=0.9), 1.5, 0.01, 0.02, 0.003)
    report.write_csv(tmp_path / "metrics.csv")
    lines = (tmp_path / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "nu,relative_mse_percent,crps_printed,crps_abs,scaled_mse_mean"
    assert lines[1] == "0.9,1.5,0.01,0.02,0.003"
    empty = MetricReport()
    with pytest.raises(ValueError):
        empty.write_csv(tmp_path / "empty.csv")
