import numpy as np
import pytest

from modekit import dmd, experiments, metrics, synth
from modekit.datamodel import Realization, SnapshotEnsemble
from modekit.errors import InvalidInput


def _system(freqs, n_space=8, seed=0, n_real=3, t_end=1.0):
    rng = np.random.default_rng(seed)
    modes = rng.standard_normal((n_space, len(freqs))) + 1j * rng.standard_normal((n_space, len(freqs)))
    eig = [2j * np.pi * f for f in freqs]
    return synth.generate_linear_system(eig, modes, synth.uniform_times(0.01, t_end), 1.0, n_real, seed)


def test_constructed_spectrum():
    ens, truth = _system([3.1, 5.2])
    ms = dmd.fit_dmd_ensemble(ens, 4)
    order = np.argsort(ms.frequencies)
    assert np.allclose(ms.frequencies[order], [3.1, 5.2], atol=1e-8)
    assert np.allclose(ms.growth_rates, 0.0, atol=1e-8)
    for f in (3.1, 5.2):
        got = ms.modes[:, ms.select_near(f, 1)]
        ref = truth.modes[:, truth.select_near(f, 1)]
        assert metrics.grassmann_distance(ref, got) < 1e-6


def test_discrete_eigenvalues_on_unit_circle():
    ens, _ = _system([1.0, 2.5, 4.0], n_space=10)
    X, Y, _ = dmd.ensemble_matrices(ens)
    mu, _ = dmd.dmd_spectrum(X, Y, 6)
    assert np.allclose(np.abs(mu), 1.0, atol=1e-8)


def test_static_data():
    x = np.random.default_rng(0).standard_normal((5, 1))
    X = np.repeat(x, 4, axis=1)
    ms = dmd.fit_dmd(X, X, 0.1, 1)
    assert ms.n_modes == 1
    assert ms.frequencies[0] == 0.0 and abs(ms.growth_rates[0]) < 1e-12


def test_harmonics_are_integer_multiples():
    ens, _ = _system([1.5, 3.0, 4.5], n_space=12, t_end=2.0)
    ms = dmd.fit_dmd_ensemble(ens, 6)
    f = np.sort(ms.frequencies)
    assert np.allclose(f / f[0], [1, 2, 3], atol=1e-8)


def test_problem_two_ensemble(problem2):
    _, ens, truth = problem2
    X, Y, _ = dmd.ensemble_matrices(ens)
    mu, _ = dmd.dmd_spectrum(X, Y, 8)
    assert mu.size == 8
    ms = dmd.fit_dmd_ensemble(ens, 8)
    # four positive-frequency modes, two per frequency
    assert ms.n_modes == 4
    for f in (3.1, 5.2):
        assert np.sum(np.abs(ms.frequencies - f) <= 0.01 * f) == 2
    dist = experiments.per_frequency_distances(truth.modes, ms, 2)
    assert max(dist.values()) < 1e-6


def test_single_trajectory_cannot_separate_modes(problem2):
    _, ens, truth = problem2
    single = SnapshotEnsemble(ens.realizations[:1], ens.spatial_shape)
    with pytest.warns(RuntimeWarning, match="numerical rank"):
        ms = dmd.fit_dmd_ensemble(single, 8)
    # one trajectory spans one complex direction per frequency
    assert ms.n_modes == 2
    dist = experiments.per_frequency_distances(truth.modes, ms, 2)
    assert min(dist.values()) > 0.5


def test_duplicated_realizations_match_single():
    ens, _ = _system([2.0], n_real=1)
    r = ens.realizations[0]
    triple = SnapshotEnsemble((r, r, r), ens.spatial_shape)
    a = dmd.fit_dmd_ensemble(ens, 2)
    b = dmd.fit_dmd_ensemble(triple, 2)
    assert np.allclose(a.frequencies, b.frequencies, atol=1e-10)
    assert metrics.grassmann_distance(a.modes, b.modes) < 1e-8


def test_needs_uniform_sampling():
    r = Realization([0.0, 0.1, 0.3], np.zeros((3, 2)) + [[1, 2]])
    with pytest.raises(InvalidInput):
        dmd.fit_dmd_ensemble(SnapshotEnsemble((r,), (2,)), 1)


def test_shape_mismatch():
    with pytest.raises(InvalidInput):
        dmd.dmd_spectrum(np.ones((3, 4)), np.ones((3, 5)), 1)
