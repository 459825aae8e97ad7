"""Subspace distances, mode alignment and forecast error."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy.linalg import orthogonal_procrustes, qr, subspace_angles

from .errors import AlignmentError, InvalidInput
from .modeset import ModeSet, as_real_subspace, from_real_pairs

RANK_TOL = 1e-10


def orthonormal_basis(A, name="A"):
    """Orthonormal basis of ``span(A)`` by column-pivoted QR; raises if
    ``A`` is rank deficient relative to ``1e-10 * ||A||``."""
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    if np.iscomplexobj(A):
        A = as_real_subspace(A)
    if A.shape[1] == 0 or A.shape[1] > A.shape[0]:
        raise InvalidInput(f"{name} must have between 1 and {A.shape[0]} columns")
    q, r, _ = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= RANK_TOL * max(np.linalg.norm(A), np.finfo(float).tiny):
        raise InvalidInput(f"{name} is rank deficient")
    return q


def principal_angles(A, B):
    """Principal angles (ascending) between ``span(A)`` and ``span(B)``.

    Small angles come from sines and large ones from cosines (scipy's
    ``subspace_angles``), so identical subspaces give exactly zero rather
    than the ``1e-8`` floor of ``arccos`` near 1.
    """
    qa = orthonormal_basis(A, "A")
    qb = orthonormal_basis(B, "B")
    if qa.shape != qb.shape:
        raise InvalidInput(f"A spans {qa.shape[1]} dimensions, B spans {qb.shape[1]}")
    return np.sort(subspace_angles(qa, qb))


def principal_cosines(A, B):
    return np.cos(principal_angles(A, B))


def grassmann_distance(A, B):
    """``sqrt(sum theta_i^2)`` over the principal angles of the two spans.

    Complex inputs are compared as real subspaces ``[Re, Im]``.
    """
    return float(np.sqrt(np.sum(principal_angles(A, B) ** 2)))


def nrmse(truth, estimate):
    """Frobenius-norm error relative to the truth, in percent."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise InvalidInput(f"shapes differ: {truth.shape} vs {estimate.shape}")
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise InvalidInput("truth has zero norm")
    return float(100.0 * np.linalg.norm(truth - estimate) / denom)


def pairwise_correlation(A, B):
    """``|<a_i, b_j>| / (||a_i|| ||b_j||)`` for every column pair."""
    a = A.modes if isinstance(A, ModeSet) else np.asarray(A)
    b = B.modes if isinstance(B, ModeSet) else np.asarray(B)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        raise InvalidInput("zero-norm mode")
    return np.clip(np.abs(a.conj().T @ b) / np.outer(na, nb), 0.0, 1.0)


def frequency_tolerance(frequency, bin_width=None):
    tol = 0.01 * abs(frequency)
    if bin_width is not None and np.isfinite(bin_width):
        tol = max(tol, 0.5 * bin_width)
    return tol


def _groups(freqs):
    """Distinct frequencies (exact duplicates merged) in ascending order."""
    out = []
    for f in np.sort(freqs):
        if not out or not np.isclose(f, out[-1], rtol=1e-9, atol=0.0):
            out.append(f)
    return out


def match_groups(reference: ModeSet, candidate: ModeSet, bin_width=None):
    """Pair each distinct reference frequency with the candidate columns in
    tolerance, keeping the highest-weight ones when there are too many.

    Returns ``{ref_frequency: (ref_idx, cand_idx)}``; raises
    :class:`AlignmentError` when a group has too few candidates.
    """
    groups = {}
    orphans = []
    used = set()
    for f in _groups(reference.frequencies):
        ref_idx = np.flatnonzero(np.isclose(reference.frequencies, f, rtol=1e-9, atol=0.0))
        tol = frequency_tolerance(f, bin_width)
        cand = [i for i in np.flatnonzero(np.abs(candidate.frequencies - f) <= tol) if i not in used]
        if len(cand) < ref_idx.size:
            orphans.append(float(f))
            continue
        if candidate.weights.size:
            cand.sort(key=lambda i: (-candidate.weights[i], abs(candidate.frequencies[i] - f)))
        else:
            cand.sort(key=lambda i: abs(candidate.frequencies[i] - f))
        cand = np.array(cand[: ref_idx.size], dtype=int)
        used.update(int(i) for i in cand)
        groups[float(f)] = (ref_idx, cand)
    if orphans:
        raise AlignmentError(f"no candidate modes within tolerance of {orphans} Hz", orphans)
    return groups


def align_modes(reference: ModeSet, candidate: ModeSet, bin_width=None) -> ModeSet:
    """Rotate the candidate modes of each matched frequency group onto the
    reference by real orthogonal Procrustes on the ``[Re, Im]`` columns.

    The span of each group is unchanged, so Grassmann distances are too.
    Only matched candidate columns are returned, in reference order.
    """
    groups = match_groups(reference, candidate, bin_width)
    columns = np.empty((candidate.modes.shape[0], reference.n_modes), dtype=complex)
    freqs = np.empty(reference.n_modes)
    weights = np.zeros(reference.n_modes)
    for ref_idx, cand_idx in groups.values():
        ref_real = as_real_subspace(reference.modes[:, ref_idx])
        cand_real = as_real_subspace(candidate.modes[:, cand_idx])
        rot, _ = orthogonal_procrustes(cand_real, ref_real)
        columns[:, ref_idx] = from_real_pairs(cand_real @ rot)
        freqs[ref_idx] = candidate.frequencies[cand_idx]
        if candidate.weights.size:
            weights[ref_idx] = candidate.weights[cand_idx]
    return ModeSet(columns, freqs, np.zeros(reference.n_modes), weights, candidate.method_tag, "aligned")


@dataclass
class ComparisonReport:
    grassmann_per_frequency: Dict[float, float]
    grassmann_total: float
    nrmse_percent: float = float("nan")
    pairwise_costheta: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    matched_frequencies: Dict[float, list] = field(default_factory=dict)

    def to_json(self):
        return {
            "grassmann_per_frequency": {repr(k): v for k, v in self.grassmann_per_frequency.items()},
            "grassmann_total": self.grassmann_total,
            "nrmse_percent": None if np.isnan(self.nrmse_percent) else self.nrmse_percent,
            "matched_frequencies": {repr(k): v for k, v in self.matched_frequencies.items()},
        }


def compare_modesets(reference: ModeSet, candidate: ModeSet, bin_width=None, nrmse_percent=float("nan")):
    """Per-frequency Grassmann distances (combined by Euclidean norm) plus the
    pairwise correlation of the aligned modes."""
    groups = match_groups(reference, candidate, bin_width)
    per = {}
    matched = {}
    for f, (ref_idx, cand_idx) in groups.items():
        per[f] = grassmann_distance(reference.modes[:, ref_idx], candidate.modes[:, cand_idx])
        matched[f] = [float(v) for v in candidate.frequencies[cand_idx]]
    aligned = align_modes(reference, candidate, bin_width)
    total = float(np.sqrt(np.sum(np.square(list(per.values())))))
    return ComparisonReport(per, total, nrmse_percent, pairwise_correlation(reference, aligned), matched)


SWEEP_COLUMNS = ("method", "fraction", "seed", "grassmann_f1", "grassmann_f2", "grassmann_total", "nrmse")


def sweep_report(rows: Sequence[dict]):
    """Aggregate sweep rows to mean/min/max per ``(method, fraction)``.

    Each row carries the :data:`SWEEP_COLUMNS` keys. Returns a list of dicts
    sorted by method then fraction.
    """
    cells = {}
    for row in rows:
        cells.setdefault((row["method"], float(row["fraction"])), []).append(row)
    out = []
    metrics = [c for c in SWEEP_COLUMNS if c not in ("method", "fraction", "seed")]
    for (method, fraction), items in sorted(cells.items()):
        agg = {"method": method, "fraction": fraction, "n_seeds": len(items)}
        for m in metrics:
            vals = np.array([float(it.get(m, np.nan)) for it in items])
            agg[f"{m}_mean"] = float(np.mean(vals))
            agg[f"{m}_min"] = float(np.min(vals))
            agg[f"{m}_max"] = float(np.max(vals))
        out.append(agg)
    return out


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def write_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def aggregate_columns():
    cols = ["method", "fraction", "n_seeds"]
    for m in SWEEP_COLUMNS[3:]:
        cols += [f"{m}_mean", f"{m}_min", f"{m}_max"]
    return cols
