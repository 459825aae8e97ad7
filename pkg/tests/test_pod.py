import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modekit import pod
from modekit.datamodel import Realization, SnapshotEnsemble
from modekit.errors import InvalidInput, ParseError


def _low_rank(rank=3, n_space=20, n_time=40, seed=0):
    rng = np.random.default_rng(seed)
    spatial = rng.standard_normal((n_space, rank))
    reals = []
    for k in range(2):
        coeff = rng.standard_normal((n_time, rank)) * [4.0, 2.0, 1.0][:rank]
        reals.append(Realization(np.arange(n_time) * 0.1, coeff @ spatial.T + 5.0))
    return SnapshotEnsemble(tuple(reals), (n_space,))


def test_exact_low_rank():
    ens = _low_rank()
    basis = pod.fit_pod(ens, energy_target=0.999)
    assert basis.rank == 3
    snaps = ens.stacked()
    recon = pod.unproject(basis, pod.project(basis, snaps))
    assert np.abs(recon - snaps).max() < 1e-8


def test_orthonormal_and_sorted():
    basis = pod.fit_pod(_low_rank(), rank=3)
    assert np.allclose(basis.modes.T @ basis.modes, np.eye(3), atol=1e-10)
    assert np.all(np.diff(basis.singular_values) <= 0)


def test_problem_two_has_eight_coordinates(problem2):
    _, ens, _ = problem2
    # eight real mode shapes; the 99% energy rule alone would stop at five
    assert pod.fit_pod(ens, energy_target=1.0).rank == 8
    assert pod.fit_pod(ens).rank == 5


def test_energy_matches_covariance_eigenvalues():
    ens = _low_rank(rank=3, n_space=12, seed=4)
    basis = pod.fit_pod(ens, rank=3)
    snaps = ens.stacked()
    centered = snaps - snaps.mean(axis=0)
    ev = np.sort(np.linalg.eigvalsh(centered.T @ centered))[::-1][:3]
    assert np.allclose(basis.singular_values**2, ev, rtol=1e-8)


def test_mode_plus_mean_projects_to_unit_coordinate():
    basis = pod.fit_pod(_low_rank(), rank=3)
    coords = pod.project(basis, basis.modes[:, 0] + basis.mean_field)
    expect = np.zeros(3)
    expect[0] = 1.0 / basis.scale[0]
    assert np.allclose(coords, expect, atol=1e-12)


def test_zero_coords_give_mean():
    basis = pod.fit_pod(_low_rank(), rank=3)
    assert np.allclose(pod.unproject(basis, np.zeros(3)), basis.mean_field)


def test_uncentered_projection_is_linear():
    basis = pod.fit_pod(_low_rank(), rank=3)
    a, b = np.random.default_rng(0).standard_normal((2, 20))
    pa, pb = pod.project(basis, a, center=False), pod.project(basis, b, center=False)
    assert np.allclose(pod.project(basis, 2 * a - b, center=False), 2 * pa - pb)


@given(st.integers(0, 10_000))
def test_round_trip_in_span(seed):
    basis = pod.fit_pod(_low_rank(), rank=3)
    rng = np.random.default_rng(seed)
    x = basis.mean_field + basis.modes @ rng.standard_normal(3)
    assert np.allclose(pod.unproject(basis, pod.project(basis, x)), x, atol=1e-9)


def test_bad_rank():
    with pytest.raises(InvalidInput):
        pod.fit_pod(_low_rank(), rank=0)


def test_basis_io(tmp_path):
    basis = pod.fit_pod(_low_rank(), rank=2)
    pod.write_basis(tmp_path / "b", basis)
    back = pod.read_basis(tmp_path / "b")
    assert np.array_equal(back.modes, basis.modes) and np.array_equal(back.scale, basis.scale)
    (tmp_path / "b" / "meta.json").write_text("[]")
    with pytest.raises(ParseError):
        pod.read_basis(tmp_path / "b")
