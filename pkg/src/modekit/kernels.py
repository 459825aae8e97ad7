"""Cosine/linear kernel primitives and the (phase-aware) LMC kernel.

For pair ``k`` with frequency ``w_k``, variance ``s_k^2`` and linear weights
``v_k``, the phase-aware kernel between (lag ``l_a``, anchor ``g_a``) and
(``l_b``, ``g_b``) is::

    K_ab = sum_k  s_k^2 cos(w_k (l_a - l_b)) (v_k.g_a)(v_k.g_b)
                  (c_{2k-1} c_{2k-1}^T + c_{2k} c_{2k}^T)

with ``c_j`` the columns of the mixing matrix. Dropping the linear factor
gives the plain LMC kernel. Because ``cos(w(l_a - l_b))`` splits into
``cos cos + sin sin``, the whole Gram matrix is ``Phi Phi^T`` for a feature
matrix with ``4 N_k`` columns; :class:`FeatureMap` exposes that
factorization and its reverse-mode derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _container
from .datamodel import PairArrays, stack_pairs
from .errors import InvalidInput, NumericalError, ParseError

MODEL_KIND = "modekit-lmc-model"
JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class CosineKernel:
    sigma2: float
    omega: float

    def __call__(self, tau):
        return self.sigma2 * np.cos(self.omega * np.asarray(tau))


@dataclass(frozen=True)
class LinearKernel:
    w: np.ndarray

    def __call__(self, g_a, g_b):
        return float(np.dot(self.w, g_a) * np.dot(self.w, g_b))


def _ro(x):
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LmcModel:
    """MVGPR hyperparameters.

    ``gamma`` is ``r x 2N_k``; columns ``2k`` and ``2k+1`` (0-based) form the
    conjugate pair ``k`` and share ``omega[k]``, ``sigma2[k]`` and the linear
    weights ``weights[k]``. Storing one value per pair makes the tying
    structural. Scalars are kept in log space.
    """

    gamma: np.ndarray
    log_sigma2: np.ndarray
    log_omega: np.ndarray
    weights: np.ndarray
    log_noise: float
    phase_aware: bool = True
    cross_terms: bool = False

    def __post_init__(self):
        gamma = _ro(self.gamma)
        ls = _ro(np.atleast_1d(self.log_sigma2))
        lw = _ro(np.atleast_1d(self.log_omega))
        nk = lw.size
        w = _ro(np.reshape(self.weights, (nk, -1)) if np.size(self.weights) else np.zeros((nk, gamma.shape[0])))
        if gamma.ndim != 2 or gamma.shape[1] != 2 * nk or ls.size != nk:
            raise InvalidInput("gamma must be r x 2N_k with one sigma2/omega per pair")
        if w.shape != (nk, gamma.shape[0]):
            raise InvalidInput("linear weights must be N_k x r")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(ls)) and np.all(np.isfinite(lw))):
            raise InvalidInput("non-finite hyperparameters")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "log_sigma2", ls)
        object.__setattr__(self, "log_omega", lw)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "log_noise", float(self.log_noise))

    @classmethod
    def from_natural(cls, gamma, sigma2, omega, weights, noise_var, phase_aware=True, cross_terms=False):
        sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        if np.any(sigma2 <= 0) or np.any(omega <= 0) or noise_var < 0:
            raise InvalidInput("variances and frequencies must be positive")
        log_noise = np.log(noise_var) if noise_var > 0 else -np.inf
        if not np.isfinite(log_noise):
            log_noise = np.log(1e-300)
        return cls(gamma, np.log(sigma2), np.log(omega), weights, log_noise, phase_aware, cross_terms)

    @property
    def n_pairs(self):
        return self.log_omega.size

    @property
    def dim(self):
        return self.gamma.shape[0]

    @property
    def sigma2(self):
        return np.exp(self.log_sigma2)

    @property
    def omega(self):
        return np.exp(self.log_omega)

    @property
    def frequencies(self):
        return self.omega / (2 * np.pi)

    @property
    def noise_var(self):
        return float(np.exp(self.log_noise))

    @property
    def cosine_kernels(self):
        return [CosineKernel(float(s), float(w)) for s, w in zip(self.sigma2, self.omega)]

    @property
    def linear_kernels(self):
        return [LinearKernel(w) for w in self.weights]

    def mode_weights(self):
        """Ranking ``sigma_k^2 ||w_k||^2`` per pair (``sigma_k^2`` for the plain model)."""
        if not self.phase_aware:
            return self.sigma2.copy()
        return self.sigma2 * np.sum(self.weights**2, axis=1)

    def replace(self, **changes):
        fields = dict(
            gamma=self.gamma,
            log_sigma2=self.log_sigma2,
            log_omega=self.log_omega,
            weights=self.weights,
            log_noise=self.log_noise,
            phase_aware=self.phase_aware,
            cross_terms=self.cross_terms,
        )
        fields.update(changes)
        return LmcModel(**fields)

    # flat parameter vector used by the optimizers
    def pack(self):
        parts = [self.log_sigma2, self.log_omega, [self.log_noise], self.gamma.ravel()]
        if self.phase_aware:
            parts.append(self.weights.ravel())
        return np.concatenate([np.ravel(p) for p in parts])

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        nk, r = self.n_pairs, self.dim
        i = 0
        ls = theta[i : i + nk]
        i += nk
        lw = theta[i : i + nk]
        i += nk
        ln = theta[i]
        i += 1
        gamma = theta[i : i + 2 * nk * r].reshape(r, 2 * nk)
        i += 2 * nk * r
        w = theta[i : i + nk * r].reshape(nk, r) if self.phase_aware else self.weights
        return self.replace(gamma=gamma, log_sigma2=ls, log_omega=lw, weights=w, log_noise=ln)

    def pack_grad(self, grads):
        parts = [grads["log_sigma2"], grads["log_omega"], [grads["log_noise"]], grads["gamma"].ravel()]
        if self.phase_aware:
            parts.append(grads["weights"].ravel())
        return np.concatenate([np.ravel(p) for p in parts])


def _check_anchor(model, g):
    g = np.asarray(g, dtype=float)
    if g.shape != (model.dim,):
        raise InvalidInput(f"anchor has shape {g.shape}, model dimension is {model.dim}")
    return g


def eval_block(model: LmcModel, tau, g_a, g_b):
    """``r x r`` covariance block between outputs at lag difference ``tau``
    (``lag_a - lag_b``) given anchors ``g_a`` and ``g_b``."""
    g_a = _check_anchor(model, g_a)
    g_b = _check_anchor(model, g_b)
    r = model.dim
    block = np.zeros((r, r))
    for k in range(model.n_pairs):
        amp = model.sigma2[k]
        if model.phase_aware:
            amp *= np.dot(model.weights[k], g_a) * np.dot(model.weights[k], g_b)
        theta = model.omega[k] * tau
        c1 = model.gamma[:, 2 * k]
        c2 = model.gamma[:, 2 * k + 1]
        if model.cross_terms:
            rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            pair = np.column_stack([c1, c2])
            block += amp * pair @ rot @ pair.T
        else:
            block += amp * np.cos(theta) * (np.outer(c1, c1) + np.outer(c2, c2))
    return block


def _scalar_kernels(model, pairs: PairArrays):
    """``(N_k, n, n)`` scalar kernel values ``s^2 c_a c_b`` and the lag-difference matrix."""
    amp = np.tile(model.sigma2[:, None], (1, pairs.n))
    if model.phase_aware:
        c = pairs.anchors @ model.weights.T  # (n, N_k)
        amp = amp * c.T
        amp_b = c.T
    else:
        amp_b = np.ones((model.n_pairs, pairs.n))
    dl = pairs.lags[:, None] - pairs.lags[None, :]
    return amp[:, :, None] * amp_b[:, None, :], dl


def assemble_gram(model: LmcModel, pairs, return_cholesky=False):
    """Dense ``(n r) x (n r)`` Gram matrix of the training pairs.

    Block ``(a, b)`` is ``eval_block(model, lag_a - lag_b, anchor_a,
    anchor_b)``; ``noise_var`` plus a jitter of ``1e-10 * trace / (n r)`` is
    added to the diagonal. If Cholesky fails the jitter grows tenfold up to
    ``1e-6 * trace / (n r)`` before :class:`NumericalError` is raised.
    """
    pairs = stack_pairs(pairs)
    if pairs.dim != model.dim:
        raise InvalidInput(f"pair dimension {pairs.dim} != model dimension {model.dim}")
    n, r = pairs.n, model.dim
    amp, dl = _scalar_kernels(model, pairs)
    K = np.zeros((n, r, n, r))
    for k in range(model.n_pairs):
        theta = model.omega[k] * dl
        c1 = model.gamma[:, 2 * k]
        c2 = model.gamma[:, 2 * k + 1]
        if model.cross_terms:
            cos, sin = amp[k] * np.cos(theta), amp[k] * np.sin(theta)
            sym = np.outer(c1, c1) + np.outer(c2, c2)
            skew = np.outer(c2, c1) - np.outer(c1, c2)
            K += np.einsum("ab,pq->apbq", cos, sym) + np.einsum("ab,pq->apbq", sin, skew)
        else:
            s = amp[k] * np.cos(theta)
            K += np.einsum("ab,pq->apbq", s, np.outer(c1, c1) + np.outer(c2, c2))
    K = K.reshape(n * r, n * r)
    base = np.trace(K) / K.shape[0]
    jitter = JITTER_START * base
    diag = np.diag_indices_from(K)
    K[diag] += model.noise_var
    while True:
        trial = K.copy()
        trial[diag] += jitter
        try:
            chol = np.linalg.cholesky(trial)
        except np.linalg.LinAlgError:
            if jitter >= JITTER_MAX * base * (1 - 1e-12):
                min_eig = float(np.linalg.eigvalsh(K).min())
                raise NumericalError(
                    f"Gram matrix not positive definite after jitter {jitter:.3g}; smallest eigenvalue {min_eig:.3g}"
                ) from None
            jitter *= 10
            continue
        return (trial, chol) if return_cholesky else trial


class FeatureMap:
    """Low-rank factor ``Phi`` with ``K = Phi Phi^T + (noise + jitter) I``.

    ``Phi`` has shape ``(n, r, M)``: ``M = 4 N_k`` without cross terms
    (independent cos/sin latent per column), ``M = 2 N_k`` with them (one
    rotating 2-vector per pair).
    """

    def __init__(self, model: LmcModel, anchors, lags):
        self.model = model
        self.anchors = np.asarray(anchors, dtype=float)
        self.lags = np.asarray(lags, dtype=float)
        if self.anchors.ndim != 2 or self.anchors.shape[1] != model.dim:
            raise InvalidInput(f"anchors must be n x {model.dim}")
        nk = model.n_pairs
        self.sigma = np.sqrt(model.sigma2)
        if model.phase_aware:
            self.c = self.anchors @ model.weights.T  # (n, N_k)
        else:
            self.c = np.ones((self.lags.size, nk))
        self.amp = self.c * self.sigma  # (n, N_k)
        self.theta = self.lags[:, None] * model.omega[None, :]  # (n, N_k)
        self.cos = np.cos(self.theta)
        self.sin = np.sin(self.theta)
        g = model.gamma.reshape(model.dim, nk, 2)  # (r, k, column-in-pair)
        if model.cross_terms:
            # rotated pair columns: s=0 -> c1 cos + c2 sin, s=1 -> -c1 sin + c2 cos
            rot0 = g[None, :, :, 0] * self.cos[:, None, :] + g[None, :, :, 1] * self.sin[:, None, :]
            rot1 = -g[None, :, :, 0] * self.sin[:, None, :] + g[None, :, :, 1] * self.cos[:, None, :]
            phi = np.stack([rot0, rot1], axis=-1) * self.amp[:, None, :, None]
        else:
            trig = np.stack([self.cos, self.sin], axis=-1)  # (n, k, s)
            phi = (
                g[None, :, :, :, None]
                * (self.amp[:, None, :, None, None] * trig[:, None, :, None, :])
            )  # (n, r, k, q, s)
        self.phi = phi.reshape(self.lags.size, model.dim, -1)

    @property
    def matrix(self):
        return self.phi.reshape(-1, self.phi.shape[-1])

    def backward(self, grad_phi):
        """Chain ``dL/dPhi`` (same shape as ``phi``) to the model parameters."""
        m = self.model
        nk, r, n = m.n_pairs, m.dim, self.lags.size
        g = m.gamma.reshape(r, nk, 2)
        if m.cross_terms:
            G = grad_phi.reshape(n, r, nk, 2)
            # R(theta)[q, s] entries per pair
            R = np.empty((n, nk, 2, 2))
            R[..., 0, 0] = self.cos
            R[..., 1, 0] = self.sin
            R[..., 0, 1] = -self.sin
            R[..., 1, 1] = self.cos
            dR = np.empty_like(R)
            dR[..., 0, 0] = -self.sin
            dR[..., 1, 0] = self.cos
            dR[..., 0, 1] = -self.cos
            dR[..., 1, 1] = -self.sin
            d_gamma = np.einsum("apks,ak,akqs->pkq", G, self.amp, R, optimize=True)
            H = np.einsum("apks,pkq->akqs", G, g, optimize=True)
            d_amp = np.einsum("akqs,akqs->ak", H, R, optimize=True)
            d_theta = np.einsum("akqs,akqs->ak", H, dR) * self.amp
        else:
            G = grad_phi.reshape(n, r, nk, 2, 2)  # (a, p, k, q, s)
            trig = np.stack([self.cos, self.sin], axis=-1)
            # batched over pairs: contract (anchor, trig) against amp * trig
            E = (self.amp[:, :, None] * trig).transpose(1, 0, 2).reshape(nk, 1, 2 * n)
            Gk = G.transpose(2, 0, 4, 1, 3).reshape(nk, 2 * n, 2 * r)
            d_gamma = np.matmul(E, Gk).reshape(nk, r, 2).transpose(1, 0, 2)
            H = np.einsum("apkqs,pkq->akqs", G, g, optimize=True)
            d_amp = np.einsum("akqs,aks->ak", H, trig, optimize=True)
            d_trig = np.einsum("akqs->aks", H) * self.amp[:, :, None]
            d_theta = -d_trig[..., 0] * self.sin + d_trig[..., 1] * self.cos
        grads = {"gamma": d_gamma.reshape(r, 2 * nk)}
        d_omega = np.einsum("ak,a->k", d_theta, self.lags, optimize=True)
        grads["log_omega"] = d_omega * m.omega
        d_sigma = np.einsum("ak,ak->k", d_amp, self.c, optimize=True)
        grads["log_sigma2"] = 0.5 * d_sigma * self.sigma
        if m.phase_aware:
            d_c = d_amp * self.sigma[None, :]
            grads["weights"] = d_c.T @ self.anchors
        else:
            grads["weights"] = np.zeros_like(m.weights)
        return grads


@dataclass(frozen=True)
class SpectralEntry:
    frequency: float
    mode: np.ndarray
    weight: float
    prunable: bool
    grid_index: int = -1


def implied_spectral_density(model: LmcModel, omega_grid=None, prune_floor=1e-8):
    """Delta-spectrum implied by the cosine kernels: per pair the complex mode
    ``c_{2k-1} + i c_{2k}`` with weight ``2 pi sigma_k^2``.

    With ``omega_grid`` (rad/s) each entry also records the nearest grid index.
    """
    weights = 2 * np.pi * model.sigma2
    floor = prune_floor * max(weights.max(), np.finfo(float).tiny)
    out = []
    for k in range(model.n_pairs):
        idx = -1
        if omega_grid is not None:
            idx = int(np.argmin(np.abs(np.asarray(omega_grid) - model.omega[k])))
        mode = model.gamma[:, 2 * k] + 1j * model.gamma[:, 2 * k + 1]
        out.append(SpectralEntry(float(model.frequencies[k]), mode, float(weights[k]), bool(weights[k] <= floor), idx))
    return out


def write_model(path, model: LmcModel, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _container.write_array(path / "gamma.bin", model.gamma)
    _container.write_array(path / "weights.bin", model.weights)
    meta = {
        "kind": MODEL_KIND,
        "version": 1,
        "dtype": _container.DTYPE_TAG,
        "endianness": _container.ENDIAN_TAG,
        "dim": model.dim,
        "n_pairs": model.n_pairs,
        "log_sigma2": [float(v) for v in model.log_sigma2],
        "log_omega": [float(v) for v in model.log_omega],
        "log_noise": model.log_noise,
        "phase_aware": model.phase_aware,
        "cross_terms": model.cross_terms,
    }
    if extra:
        meta["extra"] = extra
    _container.write_meta(path, meta)
    return path


def read_model(path) -> LmcModel:
    path = Path(path)
    meta = _container.read_meta(path, MODEL_KIND)
    r = _container.require(meta, "dim", path, int)
    nk = _container.require(meta, "n_pairs", path, int)
    gamma = _container.read_array(path / "gamma.bin", (r, 2 * nk), label="gamma")
    weights = _container.read_array(path / "weights.bin", (nk, r), label="weights")
    try:
        return LmcModel(
            gamma,
            meta["log_sigma2"],
            meta["log_omega"],
            weights,
            meta["log_noise"],
            bool(meta.get("phase_aware", True)),
            bool(meta.get("cross_terms", False)),
        )
    except (KeyError, InvalidInput) as exc:
        raise ParseError(f"inconsistent model header: {exc}", path=path / "meta.json") from None
