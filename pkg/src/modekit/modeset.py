"""ModeSet: the common output of DMD, SPOD and MVGPR."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _container
from .errors import InvalidInput, ParseError

MODESET_KIND = "modekit-modeset"
METHOD_TAGS = ("DMD", "SPOD", "MVGPR", "TRUTH")


@dataclass(frozen=True)
class ModeSet:
    """Complex spatial modes with one frequency (Hz) and growth rate (1/s) per
    column. Conjugate pairs are stored once, with non-negative frequency.

    ``weights`` ranks the modes (may be empty); ``ordering`` says how the
    columns were sorted, e.g. ``"amplitude-heuristic"`` for DMD.
    """

    modes: np.ndarray
    frequencies: np.ndarray
    growth_rates: np.ndarray
    weights: np.ndarray
    method_tag: str
    ordering: str = "none"

    def __post_init__(self):
        modes = np.array(self.modes, dtype=np.complex128)
        if modes.ndim == 1:
            modes = modes[:, None]
        freqs = np.array(self.frequencies, dtype=float).ravel()
        growth = np.array(self.growth_rates, dtype=float).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if not (modes.shape[1] == freqs.size == growth.size):
            raise InvalidInput("mode count, frequencies and growth rates disagree")
        if weights.size not in (0, freqs.size):
            raise InvalidInput("weights must be empty or one per mode")
        if self.method_tag not in METHOD_TAGS:
            raise InvalidInput(f"unknown method tag {self.method_tag!r}")
        for arr in (modes, freqs, growth, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "growth_rates", growth)
        object.__setattr__(self, "weights", weights)

    @property
    def n_modes(self):
        return self.frequencies.size

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return ModeSet(
            self.modes[:, index],
            self.frequencies[index],
            self.growth_rates[index],
            self.weights[index] if self.weights.size else [],
            self.method_tag,
            self.ordering,
        )

    def select_near(self, frequency, k, exclude=()):
        """Indices of the ``k`` modes closest in frequency to ``frequency``;
        ties broken by larger weight."""
        if k > self.n_modes - len(exclude):
            raise InvalidInput(f"asked for {k} modes near {frequency} Hz, only {self.n_modes} available")
        dist = np.abs(self.frequencies - frequency)
        w = self.weights if self.weights.size else np.zeros(self.n_modes)
        order = np.lexsort((-w, dist))
        skip = {int(i) for i in exclude}
        chosen = [int(i) for i in order if int(i) not in skip]
        return np.array(chosen[:k], dtype=int)


def as_real_subspace(modes):
    """Interleave real and imaginary parts: ``[Re m1, Im m1, Re m2, ...]``.

    A complex mode and its conjugate span the same real 2-plane, which is the
    object compared across methods.
    """
    modes = np.asarray(modes)
    if not np.iscomplexobj(modes):
        return np.asarray(modes, dtype=float)
    out = np.empty((modes.shape[0], 2 * modes.shape[1]))
    out[:, 0::2] = modes.real
    out[:, 1::2] = modes.imag
    return out


def from_real_pairs(real):
    """Inverse of :func:`as_real_subspace`."""
    real = np.asarray(real, dtype=float)
    return real[:, 0::2] + 1j * real[:, 1::2]


def write_modeset(path, modeset: ModeSet, extra: Optional[dict] = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _container.write_complex(path / "modes.bin", modeset.modes)
    meta = {
        "kind": MODESET_KIND,
        "version": 1,
        "dtype": _container.DTYPE_TAG,
        "endianness": _container.ENDIAN_TAG,
        "method": modeset.method_tag,
        "ordering": modeset.ordering,
        "n_rows": int(modeset.modes.shape[0]),
        "frequencies": [float(f) for f in modeset.frequencies],
        "growth_rates": [float(g) for g in modeset.growth_rates],
        "weights": [float(w) for w in modeset.weights],
    }
    if extra:
        meta["extra"] = extra
    _container.write_meta(path, meta)
    return path


def read_modeset(path) -> ModeSet:
    path = Path(path)
    meta = _container.read_meta(path, MODESET_KIND)
    freqs = _container.require(meta, "frequencies", path, list)
    growth = _container.require(meta, "growth_rates", path, list)
    n_rows = _container.require(meta, "n_rows", path, int)
    modes = _container.read_complex(path / "modes.bin", (n_rows, len(freqs)), label="modes")
    try:
        return ModeSet(
            modes,
            freqs,
            growth,
            meta.get("weights", []),
            _container.require(meta, "method", path, str),
            meta.get("ordering", "none"),
        )
    except InvalidInput as exc:
        raise ParseError(str(exc), path=path / "meta.json") from None
