"""Snapshot containers, coordinate normalization, training-pair extraction and
the dataset directory format."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _container
from .errors import InvalidInput, ParseError

DATASET_KIND = "modekit-dataset"


def _frozen(array, dtype=np.float64):
    arr = np.array(array, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Realization:
    """One trajectory: strictly increasing ``times`` and ``snapshots`` of shape
    ``(n_time, n_space)``."""

    times: np.ndarray
    snapshots: np.ndarray
    phase_label: Optional[float] = None

    def __post_init__(self):
        times = _frozen(self.times)
        snaps = _frozen(self.snapshots)
        if times.ndim != 1:
            raise InvalidInput("times must be a vector")
        if snaps.ndim == 1:
            snaps = _frozen(snaps[:, None])
        if snaps.ndim != 2 or snaps.shape[0] != times.size:
            raise InvalidInput(
                f"snapshots shape {snaps.shape} does not match {times.size} timestamps"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(snaps))):
            raise InvalidInput("times and snapshots must be finite")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidInput("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "snapshots", snaps)
        if self.phase_label is not None:
            object.__setattr__(self, "phase_label", float(self.phase_label))

    @property
    def n_time(self):
        return self.times.size

    @property
    def n_space(self):
        return self.snapshots.shape[1]

    def uniform_dt(self, rtol=1e-6):
        """Return the common time step, or ``None`` if sampling is irregular."""
        if self.times.size < 2:
            return None
        steps = np.diff(self.times)
        dt = float(np.mean(steps))
        if np.max(np.abs(steps - dt)) > rtol * dt:
            return None
        return dt


@dataclass(frozen=True)
class SnapshotEnsemble:
    realizations: tuple
    spatial_shape: tuple
    field_dim: int = 1

    def __post_init__(self):
        reals = tuple(self.realizations)
        shape = tuple(int(s) for s in self.spatial_shape)
        if not reals:
            raise InvalidInput("an ensemble needs at least one realization")
        if not shape or any(s <= 0 for s in shape) or int(self.field_dim) <= 0:
            raise InvalidInput("spatial_shape and field_dim must be positive")
        n_space = math.prod(shape) * int(self.field_dim)
        for k, real in enumerate(reals):
            if not isinstance(real, Realization):
                raise InvalidInput(f"realization {k} is not a Realization")
            if real.n_space != n_space:
                raise InvalidInput(
                    f"realization {k} has {real.n_space} values per snapshot, expected {n_space}"
                )
            if real.n_time < 2:
                raise InvalidInput(f"realization {k} has fewer than 2 snapshots")
        object.__setattr__(self, "realizations", reals)
        object.__setattr__(self, "spatial_shape", shape)
        object.__setattr__(self, "field_dim", int(self.field_dim))

    @property
    def n_space(self):
        return math.prod(self.spatial_shape) * self.field_dim

    def __len__(self):
        return len(self.realizations)

    def __iter__(self):
        return iter(self.realizations)

    def stacked(self):
        """All snapshots row-stacked, shape ``(total_time, n_space)``."""
        return np.vstack([r.snapshots for r in self.realizations])

    def common_dt(self):
        """Shared uniform time step across realizations, or ``None``."""
        dts = [r.uniform_dt() for r in self.realizations]
        if any(d is None for d in dts):
            return None
        if max(dts) - min(dts) > 1e-6 * max(dts):
            return None
        return dts[0]

    def map_snapshots(self, func, spatial_shape=None, field_dim=None):
        """New ensemble with ``func`` applied to every snapshot matrix."""
        reals = [
            Realization(r.times, func(r.snapshots), r.phase_label) for r in self.realizations
        ]
        if spatial_shape is None:
            spatial_shape = (reals[0].n_space,)
            field_dim = 1
        return SnapshotEnsemble(tuple(reals), spatial_shape, field_dim or 1)


@dataclass(frozen=True)
class TrainingPair:
    anchor: np.ndarray
    lag: float
    target: np.ndarray
    realization_id: int

    def __post_init__(self):
        anchor = _frozen(self.anchor)
        target = _frozen(self.target)
        if anchor.shape != target.shape:
            raise InvalidInput("anchor and target dimensions differ")
        if self.lag < 0:
            raise InvalidInput("lag must be non-negative")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "lag", float(self.lag))


@dataclass(frozen=True)
class PairArrays:
    """Column-stacked view of a list of :class:`TrainingPair`."""

    anchors: np.ndarray
    lags: np.ndarray
    targets: np.ndarray
    realization_ids: np.ndarray = field(default=None)

    @property
    def n(self):
        return self.lags.size

    @property
    def dim(self):
        return self.anchors.shape[1]


def stack_pairs(pairs: Sequence[TrainingPair]) -> PairArrays:
    if isinstance(pairs, PairArrays):
        return pairs
    if not pairs:
        raise InvalidInput("no training pairs")
    return PairArrays(
        anchors=np.array([p.anchor for p in pairs]),
        lags=np.array([p.lag for p in pairs]),
        targets=np.array([p.target for p in pairs]),
        realization_ids=np.array([p.realization_id for p in pairs], dtype=int),
    )


@dataclass(frozen=True)
class ColumnStats:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray


def normalize_coordinatewise(data):
    """Standardize each column to zero mean and unit population std.

    Returns ``(normalized, stats)``. Constant columns keep scale 1 and are
    flagged in ``stats.constant`` (a warning is also emitted).
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise InvalidInput("normalize_coordinatewise needs a non-empty 2-D array")
    if data.shape[0] < 2:
        raise InvalidInput("need at least 2 rows to estimate a scale")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    constant = std <= 1e-14 * np.maximum(np.abs(mean), 1.0)
    if np.any(constant):
        warnings.warn(
            f"constant columns passed through unscaled: {np.flatnonzero(constant).tolist()}",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(constant, 1.0, std)
    return (data - mean) / scale, ColumnStats(mean, scale, constant)


def denormalize(normalized, stats: ColumnStats):
    return np.asarray(normalized) * stats.scale + stats.mean


def extract_training_pairs(ensemble: SnapshotEnsemble, max_lag=None, max_pairs_per_realization=None):
    """Anchor every realization at its first snapshot and pair it with the
    snapshots at lags ``t_i - t_0 <= max_lag``.

    When a realization offers more pairs than ``max_pairs_per_realization``,
    the kept ones are spread uniformly in index (first pair always kept).
    """
    if max_lag is not None and max_lag <= 0:
        raise InvalidInput("max_lag must be positive")
    if max_pairs_per_realization is not None and max_pairs_per_realization < 1:
        raise InvalidInput("max_pairs_per_realization must be >= 1")
    pairs = []
    for rid, real in enumerate(ensemble.realizations):
        lags = real.times - real.times[0]
        idx = np.arange(real.n_time)
        if max_lag is not None:
            idx = idx[lags <= max_lag * (1 + 1e-12)]
        if max_pairs_per_realization is not None and idx.size > max_pairs_per_realization:
            pick = np.round(np.linspace(0, idx.size - 1, max_pairs_per_realization)).astype(int)
            idx = idx[pick]
        anchor = real.snapshots[0]
        pairs.extend(
            TrainingPair(anchor, lags[i], real.snapshots[i], rid) for i in idx
        )
    return pairs


def write_dataset(path, ensemble: SnapshotEnsemble):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, real in enumerate(ensemble.realizations):
        name = f"real_{k}.bin"
        _container.write_array(path / name, real.snapshots)
        entries.append(
            {
                "file": name,
                "n_time": real.n_time,
                "times": [float(t) for t in real.times],
                "phase_label": real.phase_label,
            }
        )
    _container.write_meta(
        path,
        {
            "kind": DATASET_KIND,
            "version": 1,
            "dtype": _container.DTYPE_TAG,
            "endianness": _container.ENDIAN_TAG,
            "spatial_shape": list(ensemble.spatial_shape),
            "field_dim": ensemble.field_dim,
            "realizations": entries,
        },
    )
    return path


def read_dataset(path) -> SnapshotEnsemble:
    path = Path(path)
    meta = _container.read_meta(path, DATASET_KIND)
    shape = _container.require(meta, "spatial_shape", path, list)
    field_dim = _container.require(meta, "field_dim", path, int)
    entries = _container.require(meta, "realizations", path, list)
    if not shape or not all(isinstance(s, int) and s > 0 for s in shape) or field_dim <= 0:
        raise ParseError("invalid spatial_shape/field_dim", path=path / "meta.json")
    n_space = math.prod(shape) * field_dim
    reals = []
    for k, entry in enumerate(entries):
        label = f"realization {k}"
        if not isinstance(entry, dict) or "times" not in entry or "file" not in entry:
            raise ParseError(f"{label}: malformed header entry", path=path / "meta.json")
        times = np.asarray(entry["times"], dtype=float)
        if times.ndim != 1 or entry.get("n_time", times.size) != times.size:
            raise ParseError(f"{label}: time vector length disagrees with n_time", path=path / "meta.json")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            bad = int(np.flatnonzero(np.diff(times) <= 0)[0]) + 1
            raise ParseError(f"{label}: times not strictly increasing at index {bad}", path=path / "meta.json")
        snaps = _container.read_array(path / entry["file"], (times.size, n_space), label=label)
        try:
            reals.append(Realization(times, snaps, entry.get("phase_label")))
        except InvalidInput as exc:
            raise ParseError(f"{label}: {exc}", path=path / entry["file"]) from None
    try:
        return SnapshotEnsemble(tuple(reals), tuple(shape), field_dim)
    except InvalidInput as exc:
        raise ParseError(str(exc), path=path / "meta.json") from None
