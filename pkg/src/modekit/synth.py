"""Benchmark data: the two-frequency synthesized flow, coupled harmonic
oscillators, linear systems with a prescribed imaginary spectrum, irregular
subsampling and the cubic-spline resampling baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .datamodel import Realization, SnapshotEnsemble
from .errors import InvalidInput
from .modeset import ModeSet


def uniform_times(dt, t_end):
    n = int(np.floor(t_end / dt + 1e-9)) + 1
    return np.arange(n) * dt


def _child_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# synthesized flow


def default_mode_functions(nx, ny):
    """The eight fixed mode shapes on an ``nx x ny`` grid over [0, 1]^2.

    Returns ``(real, imag)``, each a list over frequencies of arrays shaped
    ``(terms, nx * ny)``; terms 1-2 belong to the first frequency, 3-4 to the
    second.
    """
    x, y = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny), indexing="ij")
    e_center = np.exp((x - 0.5) ** 2 + (y - 0.5) ** 2)
    e_corner = np.exp((x - 0.2) ** 2 + (y - 0.2) ** 2)
    m_r = [
        e_center,
        np.sin(2 * x) * np.sin(2 * y),
        np.sin(4 * x) * np.sin(4 * y) * e_center,
        np.sin(4 * x) * np.sin(2 * y),
    ]
    m_c = [
        e_corner,
        np.cos(2 * x) * np.cos(2 * y),
        np.cos(4 * x) * np.cos(4 * y) * e_corner,
        np.cos(4 * x) * np.cos(2 * y),
    ]
    real = [np.stack([m.ravel() for m in m_r[0:2]]), np.stack([m.ravel() for m in m_r[2:4]])]
    imag = [np.stack([m.ravel() for m in m_c[0:2]]), np.stack([m.ravel() for m in m_c[2:4]])]
    return real, imag


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthesized flow
    ``g = sum_i M_ir cos(w_i (t + a_i)) + M_ic sin(w_i (t + a_i))``.

    ``modes_real``/``modes_imag`` hold, per frequency, an array
    ``(terms, nx * ny)``; ``None`` selects the default eight shapes.
    """

    frequencies: Sequence[float] = (3.1, 5.2)
    grid: tuple = (32, 32)
    n_realizations: int = 5
    phase_sigma: float = 1.0
    dt: float = 0.01
    t_end: float = 3.0
    seed: int = 0
    modes_real: Optional[list] = field(default=None, compare=False)
    modes_imag: Optional[list] = field(default=None, compare=False)

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        if freqs.ndim != 1 or freqs.size == 0 or np.any(freqs <= 0):
            raise InvalidInput("frequencies must be positive")
        if np.unique(freqs).size != freqs.size:
            raise InvalidInput("frequencies must be distinct")
        nx, ny = self.grid
        if nx < 2 or ny < 2:
            raise InvalidInput("grid needs at least 2 points per axis")
        if self.dt <= 0 or self.t_end < self.dt:
            raise InvalidInput("need dt > 0 and t_end >= dt")
        if self.n_realizations < 1:
            raise InvalidInput("n_realizations must be >= 1")
        if self.phase_sigma < 0:
            raise InvalidInput("phase_sigma must be >= 0")
        if (self.modes_real is None) != (self.modes_imag is None):
            raise InvalidInput("give both modes_real and modes_imag, or neither")
        real, imag = self.mode_arrays()
        if len(real) != freqs.size or len(imag) != freqs.size:
            raise InvalidInput("need one mode block per frequency")
        for mr, mi in zip(real, imag):
            if mr.shape != mi.shape or mr.shape[1] != nx * ny:
                raise InvalidInput("mode arrays must be (terms, nx*ny) and match real/imag")

    def mode_arrays(self):
        if self.modes_real is None:
            return default_mode_functions(*self.grid)
        real = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.modes_real]
        imag = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.modes_imag]
        return real, imag

    def term_frequencies(self):
        real, _ = self.mode_arrays()
        return np.concatenate([np.full(m.shape[0], f) for f, m in zip(self.frequencies, real)])

    def times(self):
        return uniform_times(self.dt, self.t_end)


def draw_phases(spec: SynthSpec):
    """Per-realization phase offsets (seconds), one per term."""
    n_terms = spec.term_frequencies().size
    return np.array([rng.normal(0.0, spec.phase_sigma, n_terms) for rng in _child_rngs(spec.seed, spec.n_realizations)])


def generate_synthesized_flow(spec: SynthSpec) -> SnapshotEnsemble:
    real, imag = spec.mode_arrays()
    m_r = np.vstack(real)
    m_c = np.vstack(imag)
    omega = 2 * np.pi * spec.term_frequencies()
    t = spec.times()
    reals = []
    for alpha in draw_phases(spec):
        arg = omega[None, :] * (t[:, None] + alpha[None, :])
        snaps = np.cos(arg) @ m_r + np.sin(arg) @ m_c
        reals.append(Realization(t, snaps, phase_label=float(alpha[0])))
    return SnapshotEnsemble(tuple(reals), tuple(spec.grid), 1)


@dataclass(frozen=True)
class SynthTruth:
    modes: ModeSet
    phases: np.ndarray
    energy_fractions: np.ndarray

    def to_json(self):
        return {
            "frequencies": [float(f) for f in self.modes.frequencies],
            "phases": self.phases.tolist(),
            "energy_fractions": [float(e) for e in self.energy_fractions],
        }


def synthesized_flow_truth(spec: SynthSpec) -> SynthTruth:
    """Ground-truth complex modes ``M_r - i M_c`` (one per term, positive
    frequency), their per-term energy fractions and the drawn phases."""
    real, imag = spec.mode_arrays()
    m_r = np.vstack(real)
    m_c = np.vstack(imag)
    modes = (m_r - 1j * m_c).T
    energy = np.sum(m_r**2 + m_c**2, axis=1)
    freqs = spec.term_frequencies()
    ms = ModeSet(modes, freqs, np.zeros_like(freqs), energy / energy.sum(), "TRUTH", "term-order")
    return SynthTruth(ms, draw_phases(spec), energy / energy.sum())


# ---------------------------------------------------------------------------
# linear systems


def rotation_blocks(omegas, t):
    """Block-diagonal rotation ``D_t`` for angular frequencies ``omegas``."""
    omegas = np.asarray(omegas, dtype=float)
    d = np.zeros((2 * omegas.size, 2 * omegas.size))
    for k, w in enumerate(omegas):
        c, s = np.cos(w * t), np.sin(w * t)
        d[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = [[c, -s], [s, c]]
    return d


def generate_linear_system(eigvals, modes, times, init_cov, n_realizations, seed):
    """Trajectories ``g_t = G D_t phi`` of a stationary linear system.

    ``eigvals`` are the positive-frequency eigenvalues ``i w_k`` (one per
    conjugate pair), ``modes`` the matching complex modes (``n x N_k``). The
    real mode matrix is ``G = sqrt(2) [Re g_1, Im g_1, ...]`` and the modal
    coordinates ``phi ~ N(0, init_cov)`` (vector of per-pair variances, or a
    full ``2N_k x 2N_k`` covariance).

    Returns ``(ensemble, truth)`` where ``truth`` lists the complex mode that
    belongs to ``+i w_k`` under this rotation convention (``Re g - i Im g``).
    """
    lam = np.atleast_1d(np.asarray(eigvals, dtype=complex))
    if np.any(np.abs(lam.real) > 1e-12 * np.maximum(np.abs(lam), 1.0)):
        raise InvalidInput("stationary systems need purely imaginary eigenvalues")
    if np.any(lam.imag <= 0):
        raise InvalidInput("pass one eigenvalue per conjugate pair, with positive imaginary part")
    modes = np.asarray(modes, dtype=complex)
    if modes.ndim == 1:
        modes = modes[:, None]
    if modes.shape[1] != lam.size:
        raise InvalidInput("need one complex mode per eigenvalue")
    times = np.asarray(times, dtype=float)
    omegas = lam.imag
    g_real = np.sqrt(2.0) * np.column_stack([c for m in modes.T for c in (m.real, m.imag)])
    cov = np.asarray(init_cov, dtype=float)
    if cov.ndim == 0:
        cov = np.full(lam.size, float(cov))
    if cov.ndim == 1:
        cov = np.diag(np.repeat(cov, 2))
    if cov.shape != (2 * lam.size, 2 * lam.size):
        raise InvalidInput("init_cov has the wrong shape")
    chol = np.linalg.cholesky(cov + 0.0)
    rotations = np.array([rotation_blocks(omegas, t) for t in times])
    reals = []
    for rng in _child_rngs(seed, n_realizations):
        phi = chol @ rng.standard_normal(2 * lam.size)
        traj = np.einsum("tij,j->ti", rotations, phi) @ g_real.T
        reals.append(Realization(times, traj))
    ens = SnapshotEnsemble(tuple(reals), (modes.shape[0],), 1)
    truth_modes = g_real[:, 0::2] - 1j * g_real[:, 1::2]
    truth = ModeSet(truth_modes / np.sqrt(2.0), omegas / (2 * np.pi), np.zeros(lam.size), np.diag(cov)[0::2], "TRUTH")
    return ens, truth


def generate_coupled_oscillator(omega0, j, sigma, n_samples, dt, t_end, seed):
    """Exact solutions of ``x' = -j w0 y, y' = j w0 x`` from ``N(0, sigma^2 I)``
    initial states; each realization is a 2-component field ``(x, y)``."""
    if omega0 <= 0 or sigma <= 0:
        raise InvalidInput("omega0 and sigma must be positive")
    mode = np.array([1.0, 1j]) / np.sqrt(2.0)
    ens, _ = generate_linear_system(
        [1j * j * omega0], mode[:, None], uniform_times(dt, t_end), sigma**2, n_samples, seed
    )
    return ens


# ---------------------------------------------------------------------------
# irregular sampling


def _round_half_away(x):
    return int(np.floor(abs(x) + 0.5) * np.sign(x))


def subsample_irregular(ensemble: SnapshotEnsemble, retain_fraction, seed) -> SnapshotEnsemble:
    """Keep the first snapshot of each realization plus a uniform random
    subset, ``round(fraction * n)`` snapshots in total."""
    if not (0 < retain_fraction <= 1):
        raise InvalidInput("retain_fraction must lie in (0, 1]")
    reals = []
    for real, rng in zip(ensemble.realizations, _child_rngs(seed, len(ensemble))):
        n_keep = min(real.n_time, max(2, _round_half_away(retain_fraction * real.n_time)))
        rest = rng.choice(np.arange(1, real.n_time), size=n_keep - 1, replace=False)
        idx = np.concatenate([[0], np.sort(rest)])
        reals.append(Realization(real.times[idx], real.snapshots[idx], real.phase_label))
    return SnapshotEnsemble(tuple(reals), ensemble.spatial_shape, ensemble.field_dim)


def interpolate_cubic_uniform(realization: Realization, dt_out, t_end=None) -> Realization:
    """Natural cubic spline per coordinate, sampled every ``dt_out`` from the
    first timestamp up to ``t_end`` (default: the last timestamp)."""
    if realization.n_time < 4:
        raise InvalidInput("cubic interpolation needs at least 4 snapshots")
    if dt_out <= 0:
        raise InvalidInput("dt_out must be positive")
    t0 = realization.times[0]
    t1 = realization.times[-1] if t_end is None else float(t_end)
    if t1 > realization.times[-1] + 1e-12 or t1 <= t0:
        raise InvalidInput("t_end must lie inside the sampled range")
    grid = t0 + uniform_times(dt_out, t1 - t0)
    spline = CubicSpline(realization.times, realization.snapshots, axis=0, bc_type="natural")
    values = spline(grid)
    # exact knot values where the grid hits a sample
    hit = np.searchsorted(realization.times, grid)
    ok = hit < realization.n_time
    exact = ok & np.isclose(realization.times[np.minimum(hit, realization.n_time - 1)], grid, rtol=0, atol=1e-12)
    values[exact] = realization.snapshots[hit[exact]]
    return Realization(grid, values, realization.phase_label)


def interpolate_ensemble(ensemble: SnapshotEnsemble, dt_out, common_length=True) -> SnapshotEnsemble:
    """Resample every realization; with ``common_length`` all are cut to the
    shortest span so blocked FFTs see equal-length records."""
    t_end = None
    if common_length:
        t_end = min(r.times[-1] - r.times[0] for r in ensemble.realizations)
    reals = [
        interpolate_cubic_uniform(r, dt_out, None if t_end is None else r.times[0] + t_end)
        for r in ensemble.realizations
    ]
    if common_length:
        n = min(r.n_time for r in reals)
        reals = [Realization(r.times[:n], r.snapshots[:n], r.phase_label) for r in reals]
    return SnapshotEnsemble(tuple(reals), ensemble.spatial_shape, ensemble.field_dim)
