import math

import numpy as np
import pytest

from edafm.features import (
    EDA_NAMES,
    GENERIC_NAMES,
    eda_features,
    feature_matrix,
    generic_features,
    peaks,
    read_matrix,
    write_matrix,
)
from edafm.segment import WINDOW, Window

from oracles import naive_dft, naive_eda_row


def _named(fv):
    return dict(zip(fv.names, fv.values))


def test_dims():
    x = np.zeros((3, WINDOW))
    assert len(generic_features(x).values) == len(GENERIC_NAMES) == 12
    assert len(eda_features(x).values) == len(EDA_NAMES) == 45


def test_generic_constant():
    f = generic_features(np.full((3, WINDOW), 1.25)).values.reshape(3, 4)
    np.testing.assert_array_equal(f, [[1.25, 0.0, 1.25, 1.25]] * 3)


def test_generic_alternating():
    x = np.tile([0.0, 1.0], 120)
    f = _named(generic_features(Window(np.stack([x, x, x]))))
    assert f["phasic_mean"] == 0.5
    assert f["phasic_min"] == 0.0 and f["phasic_max"] == 1.0
    assert f["phasic_std"] == pytest.approx(math.sqrt(0.25 * 240 / 239), rel=1e-12)


def test_ramp():
    x = np.arange(1, 241) / 4.0
    f = _named(eda_features(np.stack([x, x, x])))
    assert f["original_slope"] == pytest.approx(0.25, rel=1e-12)
    assert f["original_mean_diff"] == pytest.approx(0.25, rel=1e-12)
    assert f["original_n_peaks"] == 0 and f["original_peak_amplitude"] == 0


def test_constant_spectrum():
    f = _named(eda_features(np.full((3, WINDOW), 2.0)))
    assert f["tonic_dc"] == pytest.approx(480.0, rel=1e-12)
    assert f["tonic_sum_abs_fft"] == pytest.approx(0.0, abs=1e-9)
    assert f["tonic_spectral_energy"] == pytest.approx(0.0, abs=1e-9)
    assert f["tonic_spectral_entropy"] == 0.0


def test_sine_concentration():
    x = np.sin(2 * np.pi * 10 * np.arange(WINDOW) / WINDOW)
    X = naive_dft(x)
    power = np.abs(X[1:]) ** 2
    share = power[9] / power.sum()  # bin 10 (index 9 after dropping DC)
    assert share >= 0.49  # bins 10 and 230 carry the sine equally
    assert (power[9] + power[229]) / power.sum() >= 0.99
    f = _named(eda_features(np.stack([x, x, x])))
    assert f["phasic_spectral_energy"] == pytest.approx(power.sum(), rel=1e-9)


def test_entropy_bounds(rng):
    for _ in range(20):
        f = _named(eda_features(rng.normal(size=(3, WINDOW))))
        assert 0 <= f["original_spectral_entropy"] <= math.log2(239) + 1e-12
    impulse = np.zeros(WINDOW)
    impulse[0] = 1.0  # flat nonzero spectrum
    f = _named(eda_features(np.stack([impulse] * 3)))
    assert f["original_spectral_entropy"] == pytest.approx(math.log2(239), rel=1e-12)


def test_energy_shift_invariance(rng):
    x = rng.normal(size=WINDOW)
    a = _named(eda_features(np.stack([x] * 3)))["original_spectral_energy"]
    b = _named(eda_features(np.stack([np.roll(x, 37)] * 3)))["original_spectral_energy"]
    assert a == pytest.approx(b, rel=1e-9)


def test_against_naive(rng):
    for _ in range(5):
        x = rng.normal(2.0, 0.3, size=(3, WINDOW))
        got = eda_features(x).values
        want = np.concatenate([naive_eda_row(list(row)) for row in x])
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_peaks_strict_and_threshold():
    x = np.array([0, 1, 1, 0, 2, 0, 3, 3.5, 0.0])
    assert peaks(x).tolist() == [4, 7]
    assert peaks(x, min_amplitude=3.0).tolist() == [7]
    assert peaks(np.array([5.0, 1.0, 5.0])).tolist() == []


def test_bit_stable(rng):
    x = rng.normal(size=(3, WINDOW))
    assert eda_features(x).values.tobytes() == eda_features(x.copy()).values.tobytes()


def test_matrix_round_trip(tmp_path, rng):
    x = rng.normal(size=(4, 3, WINDOW))
    values = feature_matrix(x, "generic")
    meta = {"dataset_id": ["d"] * 4, "user_id": ["a", "a", "b", "b"], "t_start": [0.0, 60.0, 0.0, 60.0],
            "label": [0, 1, -1, 1]}
    write_matrix(tmp_path / "m.csv", meta, GENERIC_NAMES, values)
    m, names, back = read_matrix(tmp_path / "m.csv")
    assert names == list(GENERIC_NAMES)
    assert back.tobytes() == values.tobytes()
    assert m["label"].tolist() == [0, 1, -1, 1]
    assert m["user_id"].tolist() == ["a", "a", "b", "b"]
