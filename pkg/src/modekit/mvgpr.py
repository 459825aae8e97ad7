"""Multivariate GP regression with the phase-aware LMC kernel: training,
prediction and mode extraction.

The Gram matrix is never formed during training. With the feature map of
:class:`~modekit.kernels.FeatureMap`, ``K = Phi Phi^T + s I`` where ``Phi``
has only ``4 N_k`` columns, so the likelihood and its gradient go through the
Woodbury identity with ``B = Phi^T Phi + s I``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, signal

from .datamodel import PairArrays, SnapshotEnsemble, extract_training_pairs, stack_pairs
from .errors import InvalidInput, NumericalError, TrainingError
from .kernels import JITTER_START, FeatureMap, LmcModel, assemble_gram
from .modeset import ModeSet
from .pod import PodBasis

OPTIMIZERS = ("adam", "lbfgs")
_HYPERPRIOR_KEYS = ("sigma2", "omega", "noise")


@dataclass(frozen=True)
class TrainConfig:
    """Training options.

    ``freq_init`` (Hz) may be empty, in which case initial frequencies are
    the strongest peaks of a Lomb-Scargle periodogram pooled over all
    realizations and coordinates. Explicit guesses are moved by
    ``freq_init_jitter`` (a relative offset with a seeded random sign) and,
    when ``refine_init`` is set, snapped to the strongest periodogram peak
    within 10%. ``pairs_per_frequency`` conjugate pairs share each initial
    frequency.
    """

    n_pairs: int = 4
    freq_init: Sequence[float] = ()
    freq_init_jitter: float = 0.0
    lambda_reg: float = 0.0
    max_iters: int = 3000
    seed: int = 0
    optimizer: str = "adam"
    learning_rate: float = 0.01
    pairs_per_frequency: int = 1
    refine_init: bool = True
    phase_aware: bool = True
    cross_terms: bool = False
    noise_init: float = 1e-2
    max_pairs_per_realization: Optional[int] = None
    hyperprior: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "freq_init", tuple(float(f) for f in self.freq_init))
        if self.n_pairs < 1:
            raise InvalidInput("n_pairs must be >= 1")
        if any(f <= 0 for f in self.freq_init):
            raise InvalidInput("freq_init must be positive")
        if self.lambda_reg < 0:
            raise InvalidInput("lambda_reg must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInput(f"optimizer must be one of {OPTIMIZERS}")
        if self.max_iters < 1 or self.learning_rate <= 0:
            raise InvalidInput("max_iters and learning_rate must be positive")
        if self.pairs_per_frequency < 1 or self.n_pairs % self.pairs_per_frequency:
            raise InvalidInput("n_pairs must be a multiple of pairs_per_frequency")
        if self.freq_init and len(self.freq_init) not in (self.n_pairs, self.n_pairs // self.pairs_per_frequency):
            raise InvalidInput("freq_init needs one value per pair or per frequency group")
        if self.noise_init <= 0:
            raise InvalidInput("noise_init must be positive")
        if self.hyperprior:
            bad = set(self.hyperprior) - set(_HYPERPRIOR_KEYS)
            if bad:
                raise InvalidInput(f"unknown hyperprior keys {sorted(bad)}")

    @property
    def n_frequencies(self):
        return self.n_pairs // self.pairs_per_frequency

    def to_json(self):
        out = asdict(self)
        out["freq_init"] = list(self.freq_init)
        return out


@dataclass(frozen=True)
class Posterior:
    """Predictive mean and per-coordinate variance of the latent outputs.

    Rows follow the queries in order; ``query_ids`` says which query each
    row belongs to.
    """

    mean: np.ndarray
    variance: np.ndarray
    query_ids: np.ndarray


@dataclass(frozen=True)
class TrainResult:
    """Best model, its loss trace and the training pairs that prediction
    conditions on. Unpacks as ``model, loss_trace``."""

    model: LmcModel
    loss_trace: np.ndarray
    grad_norms: np.ndarray
    pairs: PairArrays
    config: TrainConfig
    init_frequencies: np.ndarray = field(default=None)

    def __iter__(self):
        return iter((self.model, self.loss_trace))


# ---------------------------------------------------------------------------
# objective


def orthonormal_penalty(gamma):
    """``||G_R^T G_R + G_I^T G_I - I||^2 + ||G_R^T G_I - G_I^T G_R||^2``, the
    real form of ``||G^H G - I||_F^2`` for ``G = G_R + i G_I``; returns
    ``(value, gradient)``."""
    gamma = np.asarray(gamma, dtype=float)
    gr, gi = gamma[:, 0::2], gamma[:, 1::2]
    a = gr.T @ gr + gi.T @ gi - np.eye(gr.shape[1])
    b = gr.T @ gi - gi.T @ gr
    value = float(np.sum(a**2) + np.sum(b**2))
    grad = np.empty_like(gamma)
    grad[:, 0::2] = 4 * (gr @ a - gi @ b)
    grad[:, 1::2] = 4 * (gi @ a + gr @ b)
    return value, grad


def _hyperprior_terms(model, hyperprior):
    grads = {"log_sigma2": np.zeros(model.n_pairs), "log_omega": np.zeros(model.n_pairs), "log_noise": 0.0}
    if not hyperprior:
        return 0.0, grads
    value = 0.0
    for key, target, x in (
        ("sigma2", "log_sigma2", model.log_sigma2),
        ("omega", "log_omega", model.log_omega),
        ("noise", "log_noise", model.log_noise),
    ):
        if key not in hyperprior:
            continue
        mu, sd = hyperprior[key]
        z = (np.asarray(x) - mu) / sd
        value += 0.5 * float(np.sum(z**2))
        grads[target] = grads[target] + z / sd
    return value, grads


class _Woodbury:
    """Factorization of ``Phi Phi^T + s I`` reused by likelihood and prediction."""

    def __init__(self, fmap: FeatureMap, noise_var):
        phi = fmap.matrix
        self.phi = phi
        self.n_obs, self.m = phi.shape
        self.frob = float(np.sum(phi**2))
        # same relative jitter as the dense Gram assembly
        self.s = noise_var + JITTER_START * self.frob / self.n_obs
        B = phi.T @ phi + self.s * np.eye(self.m)
        try:
            self.chol = np.linalg.cholesky(B)
        except np.linalg.LinAlgError:
            raise NumericalError("feature Gram not positive definite") from None

    def solve(self, rhs):
        z = np.linalg.solve(self.chol, rhs)
        return np.linalg.solve(self.chol.T, z)

    def logdet(self):
        return (self.n_obs - self.m) * np.log(self.s) + 2 * np.sum(np.log(np.diag(self.chol)))


def _nlml_and_grad(model: LmcModel, pa: PairArrays, need_grad=True):
    fmap = FeatureMap(model, pa.anchors, pa.lags)
    wb = _Woodbury(fmap, model.noise_var)
    y = pa.targets.ravel()
    beta = wb.phi.T @ y
    u = wb.solve(beta)
    alpha = (y - wb.phi @ u) / wb.s
    n = wb.n_obs
    value = 0.5 * float(y @ alpha) + 0.5 * wb.logdet() + 0.5 * n * np.log(2 * np.pi)
    if not need_grad:
        return value, None
    b_inv = wb.solve(np.eye(wb.m))
    d_s = 0.5 * ((n - wb.m) / wb.s + np.trace(b_inv) - float(alpha @ alpha))
    d_phi = wb.phi @ b_inv - np.outer(alpha, alpha @ wb.phi)
    d_phi += d_s * (2 * JITTER_START / n) * wb.phi
    grads = fmap.backward(d_phi.reshape(fmap.phi.shape))
    grads["log_noise"] = d_s * model.noise_var
    return value, grads


def negative_log_posterior(model: LmcModel, pairs, lambda_reg=0.0, hyperprior=None, return_grad=False):
    """Gaussian NLML of the stacked targets plus ``lambda_reg`` times the
    orthonormal penalty (and optional log-normal hyperprior terms).

    All training pairs form one joint Gaussian; realizations couple through
    the anchor-dependent linear kernel.
    """
    pa = stack_pairs(pairs)
    if pa.dim != model.dim:
        raise InvalidInput(f"pair dimension {pa.dim} != model dimension {model.dim}")
    value, grads = _nlml_and_grad(model, pa, need_grad=return_grad)
    if lambda_reg:
        reg, reg_grad = orthonormal_penalty(model.gamma)
        value += lambda_reg * reg
        if return_grad:
            grads["gamma"] = grads["gamma"] + lambda_reg * reg_grad
    prior, prior_grads = _hyperprior_terms(model, hyperprior)
    value += prior
    if not return_grad:
        return value
    for key, g in prior_grads.items():
        grads[key] = grads[key] + g
    return value, grads


def dense_nlml(model: LmcModel, pairs):
    """Reference NLML through the explicit Gram matrix (small problems)."""
    pa = stack_pairs(pairs)
    K, chol = assemble_gram(model, pa, return_cholesky=True)
    y = pa.targets.ravel()
    z = np.linalg.solve(chol, y)
    return 0.5 * float(z @ z) + float(np.sum(np.log(np.diag(chol)))) + 0.5 * y.size * np.log(2 * np.pi)


# ---------------------------------------------------------------------------
# initialization


def pooled_periodogram(pa: PairArrays, oversample=10, f_max=None):
    """Lomb-Scargle power summed over realizations and coordinates.

    Returns ``(frequencies_hz, power)`` on a grid from ``1 / span`` to the
    Nyquist frequency of the median sampling step.
    """
    ids = pa.realization_ids if pa.realization_ids is not None else np.zeros(pa.n, dtype=int)
    span = float(pa.lags.max() - pa.lags.min())
    steps = []
    for rid in np.unique(ids):
        lags = np.sort(pa.lags[ids == rid])
        steps.extend(np.diff(lags)[np.diff(lags) > 0])
    if span <= 0 or not steps:
        raise InvalidInput("periodogram needs at least two distinct lags")
    if f_max is None:
        f_max = 0.5 / float(np.median(steps))
    df = 1.0 / (span * oversample)
    freqs = np.arange(1.0 / span, f_max + 0.5 * df, df)
    power = np.zeros(freqs.size)
    for rid in np.unique(ids):
        sel = ids == rid
        if np.count_nonzero(sel) < 3:
            continue
        t = pa.lags[sel]
        for col in pa.targets[sel].T:
            y = col - col.mean()
            if np.any(y):
                power += signal.lombscargle(t, y, 2 * np.pi * freqs)
    return freqs, power


def _local_peaks(power):
    idx = np.flatnonzero((power[1:-1] >= power[:-2]) & (power[1:-1] >= power[2:])) + 1
    return idx[np.argsort(-power[idx], kind="stable")]


def initial_frequencies(pa: PairArrays, config: TrainConfig, rng):
    """One initial frequency (Hz) per pair, grouped by ``pairs_per_frequency``."""
    freqs, power = pooled_periodogram(pa)
    peaks = _local_peaks(power)
    span = float(pa.lags.max() - pa.lags.min())
    n_groups = config.n_frequencies
    if config.freq_init:
        guesses = np.asarray(config.freq_init, dtype=float)
        if config.freq_init_jitter:
            signs = rng.choice([-1.0, 1.0], size=guesses.size)
            guesses = guesses * (1 + signs * config.freq_init_jitter)
        if config.refine_init:
            snapped = []
            for g in guesses:
                near = [p for p in peaks if abs(freqs[p] - g) <= 0.1 * g]
                snapped.append(freqs[near[0]] if near else g)
            guesses = np.array(snapped)
        if guesses.size == n_groups:
            guesses = np.repeat(guesses, config.pairs_per_frequency)
        return guesses
    chosen = []
    for p in peaks:
        # skip sidelobes of peaks already taken
        if all(abs(freqs[p] - c) > 2.0 / span for c in chosen):
            chosen.append(freqs[p])
        if len(chosen) == n_groups:
            break
    if len(chosen) < n_groups:
        raise InvalidInput(f"periodogram has only {len(chosen)} separated peaks, need {n_groups}")
    return np.repeat(np.sort(chosen), config.pairs_per_frequency)


def initial_model(pa: PairArrays, config: TrainConfig, rng=None):
    rng = np.random.default_rng(config.seed) if rng is None else rng
    r = pa.dim
    f0 = initial_frequencies(pa, config, rng)
    gamma = rng.standard_normal((r, 2 * config.n_pairs)) / np.sqrt(r)
    weights = rng.standard_normal((config.n_pairs, r)) / np.sqrt(r)
    return LmcModel.from_natural(
        gamma,
        np.ones(config.n_pairs),
        2 * np.pi * f0,
        weights,
        config.noise_init,
        phase_aware=config.phase_aware,
        cross_terms=config.cross_terms,
    )


# ---------------------------------------------------------------------------
# training

_STALL_WINDOW = 50
_STALL_RTOL = 1e-9
_LBFGS_LOG_OMEGA_BOUND = np.log(1.2)


def _objective(template: LmcModel, pa, config):
    def fun(theta):
        model = template.unpack(theta)
        value, grads = negative_log_posterior(
            model, pa, config.lambda_reg, config.hyperprior, return_grad=True
        )
        return value, model.pack_grad(grads)

    return fun


def _stalled(trace):
    if len(trace) <= _STALL_WINDOW:
        return False
    old, new = trace[-1 - _STALL_WINDOW], trace[-1]
    return abs(old - new) <= _STALL_RTOL * max(abs(new), 1.0)


def _run_adam(fun, theta, config, template):
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta, best = theta.copy(), np.inf
    trace, norms = [], []
    for it in range(1, config.max_iters + 1):
        try:
            value, grad = fun(theta)
        except NumericalError as exc:
            raise TrainingError(f"iteration {it}: {exc}", template.unpack(best_theta)) from None
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingError(f"non-finite loss at iteration {it}", template.unpack(best_theta))
        trace.append(value)
        norms.append(float(np.linalg.norm(grad)))
        if value < best:
            best, best_theta = value, theta.copy()
        if _stalled(trace):
            break
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        theta = theta - config.learning_rate * (m / (1 - b1**it)) / (np.sqrt(v / (1 - b2**it)) + eps)
    return best_theta, trace, norms


def _run_lbfgs(fun, theta, config, template):
    trace, norms = [], []
    state = {"best": np.inf, "theta": theta.copy()}

    def wrapped(x):
        try:
            value, grad = fun(x)
        except NumericalError:
            # steer the line search away from singular regions
            return np.inf, np.zeros_like(x)
        if np.isfinite(value) and value < state["best"]:
            state["best"], state["theta"] = value, x.copy()
        return value, grad

    def callback(xk):
        value, grad = fun(xk)
        trace.append(value)
        norms.append(float(np.linalg.norm(grad)))

    # quasi-Newton steps in log-frequency can leap between periodogram
    # peaks; keep each frequency within 20% of its initial value
    bounds = [(None, None)] * theta.size
    start = template.n_pairs
    for k in range(template.n_pairs):
        w0 = theta[start + k]
        bounds[start + k] = (w0 - _LBFGS_LOG_OMEGA_BOUND, w0 + _LBFGS_LOG_OMEGA_BOUND)
    res = optimize.minimize(
        wrapped, theta, jac=True, method="L-BFGS-B", callback=callback, bounds=bounds,
        options={"maxiter": config.max_iters, "ftol": _STALL_RTOL, "gtol": 1e-10},
    )
    if not np.isfinite(state["best"]):
        raise TrainingError(f"L-BFGS-B never reached a finite loss: {res.message}", template)
    return state["theta"], trace, norms


def train(ensemble, config: TrainConfig, pairs=None) -> TrainResult:
    """Fit an :class:`LmcModel` to an ensemble of reduced coordinates.

    Training pairs anchor each realization at its first snapshot (pass
    ``pairs`` to override). Returns the best-loss model; the trace records
    the objective at every accepted step.
    """
    if pairs is None:
        if not isinstance(ensemble, SnapshotEnsemble) or len(ensemble) == 0:
            raise InvalidInput("train needs a non-empty SnapshotEnsemble")
        pairs = extract_training_pairs(ensemble, max_pairs_per_realization=config.max_pairs_per_realization)
    pa = stack_pairs(pairs)
    rng = np.random.default_rng(config.seed)
    template = initial_model(pa, config, rng)
    init_freqs = template.frequencies.copy()
    fun = _objective(template, pa, config)
    run = _run_adam if config.optimizer == "adam" else _run_lbfgs
    best_theta, trace, norms = run(fun, template.pack(), config, template)
    model = template.unpack(best_theta)
    return TrainResult(model, np.asarray(trace), np.asarray(norms), pa, config, init_freqs)


def write_loss_trace(path, result: TrainResult):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss,grad_norm\n")
        for i, (loss, g) in enumerate(zip(result.loss_trace, result.grad_norms)):
            fh.write(f"{i},{loss:.17g},{g:.17g}\n")


# ---------------------------------------------------------------------------
# prediction and modes


def _queries(queries, dim):
    anchors, lags, ids = [], [], []
    for q, (g, ls) in enumerate(queries):
        g = np.asarray(g, dtype=float)
        if g.shape != (dim,):
            raise InvalidInput(f"query {q} anchor has shape {g.shape}, expected ({dim},)")
        ls = np.atleast_1d(np.asarray(ls, dtype=float))
        anchors.append(np.tile(g, (ls.size, 1)))
        lags.append(ls)
        ids.append(np.full(ls.size, q))
    return np.vstack(anchors), np.concatenate(lags), np.concatenate(ids)


def predict(model, queries, pairs=None) -> Posterior:
    """Posterior mean and variance at ``queries``, a list of ``(anchor, lags)``.

    ``model`` may be a :class:`TrainResult`, whose training pairs are used;
    a bare :class:`LmcModel` needs ``pairs``. A full trajectory forecast only
    needs the initial snapshot as anchor.
    """
    if isinstance(model, TrainResult):
        pairs = model.pairs if pairs is None else pairs
        model = model.model
    if pairs is None:
        raise InvalidInput("predict needs the training pairs")
    pa = stack_pairs(pairs)
    if pa.dim != model.dim:
        raise InvalidInput(f"pair dimension {pa.dim} != model dimension {model.dim}")
    anchors, lags, ids = _queries(queries, model.dim)
    wb = _Woodbury(FeatureMap(model, pa.anchors, pa.lags), model.noise_var)
    u = wb.solve(wb.phi.T @ pa.targets.ravel())
    phi_q = FeatureMap(model, anchors, lags).matrix
    mean = (phi_q @ u).reshape(lags.size, model.dim)
    var = wb.s * np.sum(phi_q * wb.solve(phi_q.T).T, axis=1)
    if np.any(var < -1e-10):
        warnings.warn("negative predictive variance beyond round-off", RuntimeWarning, stacklevel=2)
    var = np.clip(var, 0.0, None).reshape(lags.size, model.dim)
    return Posterior(mean, var, ids)


def extract_modes(model: LmcModel, basis: Optional[PodBasis] = None) -> ModeSet:
    """Complex modes ``c_{2k-1} + i c_{2k}`` lifted to full space, ranked by
    ``sigma_k^2 ||w_k||^2`` (descending)."""
    if isinstance(model, TrainResult):
        model = model.model
    modes = model.gamma[:, 0::2] + 1j * model.gamma[:, 1::2]
    if basis is not None:
        modes = basis.lift(modes)
    weights = model.mode_weights()
    order = np.argsort(-weights, kind="stable")
    return ModeSet(
        modes[:, order],
        model.frequencies[order],
        np.zeros(model.n_pairs),
        weights[order],
        "MVGPR",
        "lambda-tilde",
    )


def normalized_cumulative_weights(modes: ModeSet, frequency=None, k=None):
    """Cumulative ``lambda~`` profile normalized to end at 1, optionally
    restricted to the ``k`` modes nearest ``frequency``."""
    w = modes.weights
    if frequency is not None:
        idx = modes.select_near(frequency, k or modes.n_modes)
        w = w[idx]
    w = np.sort(w)[::-1]
    return np.cumsum(w) / np.sum(w)


def group_frequencies(frequencies, rtol=0.01):
    """Cluster frequencies that lie within ``rtol`` of the running group mean;
    returns a group label per entry (groups ordered by frequency)."""
    freqs = np.asarray(frequencies, dtype=float)
    order = np.argsort(freqs, kind="stable")
    labels = np.empty(freqs.size, dtype=int)
    group, members = -1, []
    for i in order:
        if not members or abs(freqs[i] - np.mean(freqs[members])) > rtol * np.mean(freqs[members]):
            group += 1
            members = []
        members.append(i)
        labels[i] = group
    return labels


def frequency_group_modes(model, basis: Optional[PodBasis] = None, n_modes=None, rtol=0.01) -> ModeSet:
    """Orthonormal modes per frequency group.

    Pairs whose frequencies agree within ``rtol`` describe one group. The
    group's zero-lag covariance ``sum_k lambda~_k (c_{2k-1} c_{2k-1}^T +
    c_{2k} c_{2k}^T)`` (in full-space units when ``basis`` is given) is
    diagonalized. Consecutive eigenvectors are paired into complex modes,
    weighted by the sum of their two eigenvalues. With one pair per mode this
    reproduces the span of :func:`extract_modes`; with redundant pairs it
    gives their common dominant subspace.
    """
    if isinstance(model, TrainResult):
        model = model.model
    labels = group_frequencies(model.frequencies, rtol)
    lam = model.mode_weights()
    scale = basis.scale if basis is not None else np.ones(model.dim)
    cols, freqs, weights = [], [], []
    for grp in range(labels.max() + 1):
        idx = np.flatnonzero(labels == grp)
        c = model.gamma[:, np.ravel(np.column_stack([2 * idx, 2 * idx + 1]))] * scale[:, None]
        cov = (c * np.repeat(lam[idx], 2)) @ c.T
        ev, vec = np.linalg.eigh(cov)
        ev, vec = ev[::-1], vec[:, ::-1]
        k = idx.size if n_modes is None else min(n_modes, idx.size, model.dim // 2)
        for j in range(k):
            v = vec[:, 2 * j] + 1j * vec[:, 2 * j + 1]
            cols.append(basis.modes @ v if basis is not None else v)
            weights.append(float(ev[2 * j] + ev[2 * j + 1]))
            freqs.append(float(np.average(model.frequencies[idx], weights=lam[idx])))
    order = np.argsort(-np.asarray(weights), kind="stable")
    return ModeSet(
        np.column_stack(cols)[:, order],
        np.asarray(freqs)[order],
        np.zeros(len(freqs)),
        np.asarray(weights)[order],
        "MVGPR",
        "group-eigenvalue",
    )
