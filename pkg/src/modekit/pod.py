"""Snapshot POD used to reduce fields to a handful of standardized coordinates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _container
from .datamodel import SnapshotEnsemble
from .errors import InvalidInput, ParseError

BASIS_KIND = "modekit-pod-basis"
DEFAULT_ENERGY_TARGET = 0.99
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class PodBasis:
    """Orthonormal spatial modes (``n_space x r``) plus the mean field and the
    per-coordinate scale applied after projection."""

    modes: np.ndarray
    singular_values: np.ndarray
    mean_field: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        for name in ("modes", "singular_values", "mean_field", "scale"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r = self.modes.shape[1]
        if self.singular_values.size != r or self.scale.size != r:
            raise InvalidInput("basis rank inconsistent across fields")
        if self.mean_field.size != self.modes.shape[0]:
            raise InvalidInput("mean field length must equal n_space")

    @property
    def rank(self):
        return self.modes.shape[1]

    @property
    def n_space(self):
        return self.modes.shape[0]

    def energy_fractions(self):
        s2 = self.singular_values**2
        return s2 / s2.sum()

    def lift(self, directions):
        """Map reduced-coordinate *directions* (no mean) to full space; this is
        the ``P^+`` used to recover spatial modes."""
        directions = np.asarray(directions)
        if directions.shape[0] != self.rank:
            raise InvalidInput(f"expected {self.rank} reduced rows, got {directions.shape[0]}")
        scale = self.scale if directions.ndim == 1 else self.scale[:, None]
        return self.modes @ (scale * directions)


def fit_pod(ensemble: SnapshotEnsemble, energy_target=DEFAULT_ENERGY_TARGET, rank=None) -> PodBasis:
    """Mean-subtracted thin SVD of all snapshots of all realizations.

    The rank is ``rank`` if given, else the smallest ``r`` whose cumulative
    squared singular values reach ``energy_target``. Directions with singular
    value below ``1e-10 * s_max`` are never kept.
    """
    if rank is None and not (0 < energy_target <= 1):
        raise InvalidInput("energy_target must lie in (0, 1]")
    snaps = ensemble.stacked()
    if rank is not None and not (1 <= rank <= min(snaps.shape)):
        raise InvalidInput(f"rank {rank} not in [1, {min(snaps.shape)}]")
    mean = snaps.mean(axis=0)
    centered = snaps - mean
    # thin SVD; numpy picks the cheap orientation internally
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    numeric = int(np.sum(s > _RANK_TOL * s[0])) if s[0] > 0 else 0
    if numeric == 0:
        raise InvalidInput("snapshots carry no variance about their mean")
    if rank is None:
        frac = np.cumsum(s[:numeric] ** 2) / np.sum(s[:numeric] ** 2)
        r = int(np.searchsorted(frac, energy_target - 1e-15) + 1)
        r = min(r, numeric)
    else:
        r = rank
        if r > numeric:
            warnings.warn(f"rank {r} exceeds numerical rank {numeric}; truncating", RuntimeWarning, stacklevel=2)
            r = numeric
    modes = vt[:r].T.copy()
    # sign convention: largest-magnitude entry of each mode positive
    flip = np.sign(modes[np.argmax(np.abs(modes), axis=0), np.arange(r)])
    modes *= flip
    coords = centered @ modes
    scale = coords.std(axis=0)
    scale[scale == 0] = 1.0
    return PodBasis(modes, s[:r], mean, scale)


def project(basis: PodBasis, snapshots, center=True):
    """Standardized reduced coordinates of ``snapshots`` (rows are snapshots).

    ``center=False`` skips mean-field removal, giving the linear (not affine)
    observable that DMD expects.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.shape[-1] != basis.n_space:
        raise InvalidInput(f"snapshot length {snapshots.shape[-1]} != basis n_space {basis.n_space}")
    data = snapshots - basis.mean_field if center else snapshots
    return (data @ basis.modes) / basis.scale


def unproject(basis: PodBasis, coords):
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != basis.rank:
        raise InvalidInput(f"coordinate length {coords.shape[-1]} != basis rank {basis.rank}")
    return (coords * basis.scale) @ basis.modes.T + basis.mean_field


def project_ensemble(basis: PodBasis, ensemble: SnapshotEnsemble, center=True) -> SnapshotEnsemble:
    return ensemble.map_snapshots(lambda s: project(basis, s, center=center))


def write_basis(path, basis: PodBasis):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _container.write_array(path / "modes.bin", basis.modes)
    _container.write_array(path / "mean_field.bin", basis.mean_field)
    _container.write_meta(
        path,
        {
            "kind": BASIS_KIND,
            "version": 1,
            "dtype": _container.DTYPE_TAG,
            "endianness": _container.ENDIAN_TAG,
            "n_space": basis.n_space,
            "rank": basis.rank,
            "singular_values": [float(v) for v in basis.singular_values],
            "scale": [float(v) for v in basis.scale],
        },
    )
    return path


def read_basis(path) -> PodBasis:
    path = Path(path)
    meta = _container.read_meta(path, BASIS_KIND)
    n_space = _container.require(meta, "n_space", path, int)
    rank = _container.require(meta, "rank", path, int)
    modes = _container.read_array(path / "modes.bin", (n_space, rank), label="modes")
    mean = _container.read_array(path / "mean_field.bin", (n_space,), label="mean_field")
    try:
        return PodBasis(modes, meta["singular_values"], mean, meta["scale"])
    except (InvalidInput, KeyError) as exc:
        raise ParseError(f"inconsistent basis header: {exc}", path=path / "meta.json") from None


def lift_modeset(basis: PodBasis, modeset):
    """Same mode set with reduced-coordinate modes mapped to full space."""
    from .modeset import ModeSet

    return ModeSet(
        basis.lift(modeset.modes),
        modeset.frequencies,
        modeset.growth_rates,
        modeset.weights,
        modeset.method_tag,
        modeset.ordering,
    )
