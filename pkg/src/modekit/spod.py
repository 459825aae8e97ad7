"""Spectral POD with one non-overlapping block per realization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _container
from .datamodel import SnapshotEnsemble
from .errors import InvalidInput, ParseError
from .modeset import ModeSet

SPOD_KIND = "modekit-spod"
WINDOWS = ("rectangular", "hamming")


@dataclass(frozen=True)
class SpodResult:
    """Per-bin eigenvalues (``n_freq x k``, descending) and orthonormal modes
    (``n_freq x r x k``) of the cross-spectral density."""

    frequencies: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray
    dt: float
    n_blocks: int
    window: str = "rectangular"

    @property
    def bin_width(self):
        return float(self.frequencies[1] - self.frequencies[0]) if self.frequencies.size > 1 else np.inf

    @property
    def nyquist(self):
        return 0.5 / self.dt

    def nearest_bin(self, frequency):
        return int(np.argmin(np.abs(self.frequencies - frequency)))

    def peak_frequencies(self, n_peaks, skip_dc=True):
        """Bins of the ``n_peaks`` largest local maxima of the leading
        eigenvalue spectrum."""
        lead = self.eigenvalues[:, 0]
        start = 1 if skip_dc else 0
        peaks = [
            k
            for k in range(start, lead.size)
            if (k == 0 or lead[k] >= lead[k - 1]) and (k == lead.size - 1 or lead[k] >= lead[k + 1])
        ]
        peaks.sort(key=lambda k: -lead[k])
        return self.frequencies[np.sort(peaks[:n_peaks])]


def _window(name, n):
    if name == "rectangular":
        return np.ones(n)
    if name == "hamming":
        return np.hamming(n)
    raise InvalidInput(f"unknown window {name!r}; expected one of {WINDOWS}")


def cross_spectral_density(ensemble: SnapshotEnsemble, window="rectangular"):
    """One-sided CSD estimate ``S(f) = kappa / n_b * sum_b q_b q_b^H``.

    ``kappa = dt / sum(w^2)``; interior bins are doubled, DC and (even-length)
    Nyquist are not, so that ``sum_f trace(S) * df`` equals the mean squared
    signal for a rectangular window.
    Returns ``(frequencies, S)`` with ``S`` shaped ``(n_freq, r, r)``.
    """
    dt = ensemble.common_dt()
    lengths = {r.n_time for r in ensemble.realizations}
    if dt is None or len(lengths) != 1:
        raise InvalidInput("SPOD needs uniformly sampled realizations of equal length and dt")
    n = lengths.pop()
    w = _window(window, n)
    blocks = np.stack([r.snapshots for r in ensemble.realizations])  # (b, n, r)
    qhat = np.fft.rfft(w[None, :, None] * blocks, axis=1)  # (b, f, r)
    freqs = np.fft.rfftfreq(n, dt)
    kappa = dt / np.sum(w**2)
    onesided = np.full(freqs.size, 2.0)
    onesided[0] = 1.0
    if n % 2 == 0:
        onesided[-1] = 1.0
    S = np.einsum("bfi,bfj->fij", qhat, qhat.conj()) * (kappa / blocks.shape[0])
    S *= onesided[:, None, None]
    return freqs, S


def fit_spod(ensemble: SnapshotEnsemble, window="rectangular") -> SpodResult:
    freqs, S = cross_spectral_density(ensemble, window)
    n_blocks = len(ensemble)
    r = S.shape[1]
    k = min(r, n_blocks)
    eigvals = np.empty((freqs.size, k))
    modes = np.empty((freqs.size, r, k), dtype=complex)
    for f in range(freqs.size):
        # enforce exact Hermitian symmetry before eigh
        Sf = 0.5 * (S[f] + S[f].conj().T)
        lam, vec = np.linalg.eigh(Sf)
        order = np.argsort(-lam, kind="stable")[:k]
        eigvals[f] = np.clip(lam[order], 0.0, None)
        vec = vec[:, order]
        # phase convention: largest entry of each eigenvector real positive
        piv = vec[np.argmax(np.abs(vec), axis=0), np.arange(k)]
        modes[f] = vec * (np.abs(piv) / piv)
    return SpodResult(freqs, eigvals, modes, float(ensemble.common_dt()), n_blocks, window)


def spod_mode_subspace(result: SpodResult, target_freq, n_modes):
    """Leading ``n_modes`` eigenvectors at the bin nearest ``target_freq``."""
    if target_freq < 0 or target_freq > result.nyquist:
        raise InvalidInput(f"target frequency {target_freq} Hz outside [0, {result.nyquist}] Hz")
    if not (1 <= n_modes <= result.modes.shape[2]):
        raise InvalidInput(f"n_modes must be in [1, {result.modes.shape[2]}]")
    return result.modes[result.nearest_bin(target_freq), :, :n_modes]


def write_spod(path, result: SpodResult):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n_f, r, k = result.modes.shape
    _container.write_complex(path / "modes.bin", result.modes)
    with open(path / "eigenvalues.csv", "w", encoding="utf-8") as fh:
        fh.write("frequency," + ",".join(f"lambda_{j + 1}" for j in range(k)) + "\n")
        for f, row in zip(result.frequencies, result.eigenvalues):
            fh.write(f"{f:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
    _container.write_meta(
        path,
        {
            "kind": SPOD_KIND,
            "version": 1,
            "dtype": _container.DTYPE_TAG,
            "endianness": _container.ENDIAN_TAG,
            "dt": result.dt,
            "n_blocks": result.n_blocks,
            "window": result.window,
            "bin_width": result.bin_width,
            "shape": [n_f, r, k],
            "frequencies": [float(f) for f in result.frequencies],
            "eigenvalues": result.eigenvalues.tolist(),
        },
    )
    return path


def read_spod(path) -> SpodResult:
    path = Path(path)
    meta = _container.read_meta(path, SPOD_KIND)
    shape = _container.require(meta, "shape", path, list)
    modes = _container.read_complex(path / "modes.bin", tuple(shape), label="modes")
    try:
        return SpodResult(
            np.asarray(meta["frequencies"], dtype=float),
            np.asarray(meta["eigenvalues"], dtype=float).reshape(shape[0], shape[2]),
            modes,
            float(meta["dt"]),
            int(meta["n_blocks"]),
            meta.get("window", "rectangular"),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"inconsistent SPOD header: {exc}", path=path / "meta.json") from None


def spod_modeset(result: SpodResult, frequencies, n_modes, basis=None) -> ModeSet:
    """Leading ``n_modes`` SPOD modes at the bins nearest ``frequencies``,
    optionally lifted through a POD basis, as a :class:`ModeSet`."""
    cols, freqs, weights = [], [], []
    for f in frequencies:
        k = result.nearest_bin(f)
        modes = spod_mode_subspace(result, f, n_modes)
        cols.append(basis.lift(modes) if basis is not None else modes)
        freqs += [float(result.frequencies[k])] * n_modes
        weights += [float(v) for v in result.eigenvalues[k, :n_modes]]
    return ModeSet(np.hstack(cols), freqs, np.zeros(len(freqs)), weights, "SPOD", "eigenvalue-per-bin")
