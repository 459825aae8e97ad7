"""Exact DMD and ensemble DMD."""

from __future__ import annotations

import warnings

import numpy as np

from .datamodel import SnapshotEnsemble
from .errors import InvalidInput
from .modeset import ModeSet

_RANK_TOL = 1e-10


def dmd_spectrum(X, Y, rank):
    """Discrete eigenvalues and exact-DMD modes of ``Y ~ A X``.

    Returns ``(mu, modes)`` for all ``rank`` eigenvalues, before any
    conjugate de-duplication. Columns of ``X``/``Y`` are snapshots.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape:
        raise InvalidInput(f"X {X.shape} and Y {Y.shape} differ in shape")
    if not (1 <= rank <= min(X.shape)):
        raise InvalidInput(f"rank {rank} not in [1, {min(X.shape)}]")
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    numeric = int(np.sum(s > _RANK_TOL * s[0])) if s[0] > 0 else 0
    if numeric == 0:
        raise InvalidInput("X is identically zero")
    if rank > numeric:
        warnings.warn(f"DMD rank reduced from {rank} to numerical rank {numeric}", RuntimeWarning, stacklevel=2)
        rank = numeric
    U_r, s_r, V_r = U[:, :rank], s[:rank], Vh[:rank].conj().T
    YVS = Y @ V_r / s_r
    A_bar = U_r.conj().T @ YVS
    mu, W = np.linalg.eig(A_bar)
    modes = YVS @ W
    norms = np.linalg.norm(modes, axis=0)
    # a zero eigenvalue gives a zero exact mode; fall back to the projected one
    small = norms < 1e-12 * max(norms.max(), 1.0)
    if np.any(small):
        modes[:, small] = U_r @ W[:, small]
        norms = np.linalg.norm(modes, axis=0)
    return mu, modes / norms


def fit_dmd(X, Y, dt, rank) -> ModeSet:
    """Exact DMD of snapshot pairs one step ``dt`` apart.

    Continuous eigenvalues use the principal branch of ``log(mu) / dt``, so
    content above Nyquist aliases. For real data only the non-negative
    frequency member of each conjugate pair is kept. Modes are ranked by the
    magnitude of a least-squares fit of ``X[:, 0]`` onto all modes; this
    ordering is a heuristic and tagged as such.
    """
    if dt <= 0:
        raise InvalidInput("dt must be positive")
    mu, modes = dmd_spectrum(X, Y, rank)
    lam = np.log(mu.astype(complex)) / dt
    amps = np.linalg.lstsq(modes, np.asarray(X)[:, 0].astype(complex), rcond=None)[0]
    if np.isrealobj(X) and np.isrealobj(Y):
        tol = 1e-9 * np.maximum(np.abs(lam), 1.0 / dt)
        keep = lam.imag >= -tol
        # two copies of a real eigenvalue are legitimate; only drop negatives
        lam, modes, amps = lam[keep], modes[:, keep], amps[keep]
        lam = np.where(np.abs(lam.imag) <= tol[keep], lam.real + 0j, lam)
    weights = np.abs(amps)
    order = np.argsort(-weights, kind="stable")
    return ModeSet(
        modes[:, order],
        lam.imag[order] / (2 * np.pi),
        lam.real[order],
        weights[order],
        "DMD",
        "amplitude-heuristic",
    )


def ensemble_matrices(ensemble: SnapshotEnsemble):
    """Stack consecutive-snapshot pairs of every realization as columns.

    Returns ``(X, Y, dt)``; all realizations must share one uniform step.
    """
    dt = ensemble.common_dt()
    if dt is None:
        raise InvalidInput("ensemble DMD needs every realization sampled with one common uniform dt")
    X = np.hstack([r.snapshots[:-1].T for r in ensemble.realizations])
    Y = np.hstack([r.snapshots[1:].T for r in ensemble.realizations])
    return X, Y, dt


def fit_dmd_ensemble(ensemble: SnapshotEnsemble, rank) -> ModeSet:
    X, Y, dt = ensemble_matrices(ensemble)
    return fit_dmd(X, Y, dt, rank)
