import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modekit.datamodel import PairArrays
from modekit.errors import InvalidInput, NumericalError, ParseError
from modekit.kernels import (
    JITTER_START,
    CosineKernel,
    FeatureMap,
    LinearKernel,
    LmcModel,
    assemble_gram,
    eval_block,
    implied_spectral_density,
    read_model,
    write_model,
)


def random_model(rng, r=3, nk=2, phase_aware=True, cross_terms=False, noise=1e-3):
    return LmcModel.from_natural(
        rng.standard_normal((r, 2 * nk)),
        rng.uniform(0.5, 2.0, nk),
        rng.uniform(2.0, 30.0, nk),
        rng.standard_normal((nk, r)),
        noise,
        phase_aware=phase_aware,
        cross_terms=cross_terms,
    )


def random_pairs(rng, n=6, r=3, n_anchor=2):
    anchors = rng.standard_normal((n_anchor, r))
    ids = np.arange(n) % n_anchor
    return PairArrays(anchors[ids], rng.uniform(0, 1, n), rng.standard_normal((n, r)), ids)


def block_loop_gram(model, pa):
    n, r = pa.n, model.dim
    K = np.zeros((n * r, n * r))
    for a in range(n):
        for b in range(n):
            K[a * r:(a + 1) * r, b * r:(b + 1) * r] = eval_block(
                model, pa.lags[a] - pa.lags[b], pa.anchors[a], pa.anchors[b]
            )
    return K


def test_scalar_kernels():
    k = CosineKernel(omega=2.0, sigma2=3.0)
    assert k(0.5) == pytest.approx(3.0 * np.cos(1.0))
    lin = LinearKernel(np.array([1.0, 2.0]))
    assert lin(np.array([1.0, 1.0]), np.array([0.0, 1.0])) == pytest.approx(6.0)


def test_zero_lag_same_anchor_is_psd(rng):
    model = random_model(rng)
    g = rng.standard_normal(3)
    K = eval_block(model, 0.0, g, g)
    expect = sum(
        model.sigma2[k] * np.dot(model.weights[k], g) ** 2
        * (np.outer(model.gamma[:, 2 * k], model.gamma[:, 2 * k]) + np.outer(model.gamma[:, 2 * k + 1], model.gamma[:, 2 * k + 1]))
        for k in range(model.n_pairs)
    )
    assert np.allclose(K, expect)
    assert np.linalg.eigvalsh(K).min() >= -1e-12


def test_single_pair_closed_form():
    e1 = np.array([1.0, 0.0])
    model = LmcModel.from_natural(np.column_stack([e1, e1]), 1.0, 3.0, [[1.0, 0.0]], 1e-6)
    g = np.array([1.0, 5.0])
    for tau in (0.0, 0.3, 1.1):
        assert np.allclose(eval_block(model, tau, g, g), 2 * np.cos(3.0 * tau) * np.outer(e1, e1))


def test_block_symmetry(rng):
    model = random_model(rng, cross_terms=True)
    ga, gb = rng.standard_normal((2, 3))
    assert np.allclose(eval_block(model, 0.4, ga, gb), eval_block(model, -0.4, gb, ga).T)


def test_stochastic_average_small_sample():
    # anchors g = V phi with W V = I, so that w_k.g = phi_k ~ N(0, 1); then
    # the average kernel is sum_k sigma_k^2 cos(w_k tau)(c c^T + c c^T)
    rng = np.random.default_rng(5)
    r, nk = 4, 2
    V = rng.standard_normal((r, nk))
    W = np.linalg.pinv(V)
    model = LmcModel.from_natural(rng.standard_normal((r, 2 * nk)), [1.5, 0.4], [6.0, 11.0], W, 1e-6)
    n = 20000
    phi = rng.standard_normal((n, nk))
    tau = 0.25
    draws = np.array([eval_block(model, tau, V @ p, V @ p) for p in phi])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(n)
    C = sum(
        model.sigma2[k] * np.cos(model.omega[k] * tau)
        * (np.outer(model.gamma[:, 2 * k], model.gamma[:, 2 * k]) + np.outer(model.gamma[:, 2 * k + 1], model.gamma[:, 2 * k + 1]))
        for k in range(nk)
    )
    assert np.all(np.abs(mean - C) <= 3 * se + 1e-12)


class TestGram:
    def test_one_pair(self, rng):
        model = random_model(rng)
        pa = random_pairs(rng, n=1)
        K = assemble_gram(model, pa)
        raw = eval_block(model, 0.0, pa.anchors[0], pa.anchors[0])
        loading = model.noise_var + JITTER_START * np.trace(raw) / 3
        assert np.allclose(K, raw + loading * np.eye(3), rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("phase_aware", [True, False])
    @pytest.mark.parametrize("cross_terms", [True, False])
    def test_matches_block_loop(self, rng, phase_aware, cross_terms):
        model = random_model(rng, phase_aware=phase_aware, cross_terms=cross_terms)
        pa = random_pairs(rng)
        raw = block_loop_gram(model, pa)
        K = assemble_gram(model, pa)
        loading = model.noise_var + JITTER_START * np.trace(raw) / raw.shape[0]
        assert np.allclose(K, raw + loading * np.eye(raw.shape[0]), atol=1e-12)
        # and the low-rank factor reproduces the same matrix
        F = FeatureMap(model, pa.anchors, pa.lags).matrix
        assert np.allclose(F @ F.T, raw, atol=1e-12)

    def test_shared_anchor_scales_plain_gram(self, rng):
        model = random_model(rng, nk=1)
        plain = model.replace(phase_aware=False)
        g = rng.standard_normal(3)
        pa = PairArrays(np.tile(g, (5, 1)), rng.uniform(0, 1, 5), np.zeros((5, 3)), np.zeros(5, int))
        scale = np.dot(model.weights[0], g) ** 2
        assert np.allclose(block_loop_gram(model, pa), scale * block_loop_gram(plain, pa))

    @settings(max_examples=10)
    @given(st.integers(0, 2**20), st.booleans())
    def test_psd_before_jitter(self, seed, cross):
        rng = np.random.default_rng(seed)
        model = random_model(rng, nk=3, cross_terms=cross)
        pa = random_pairs(rng, n=50, n_anchor=10)
        raw = block_loop_gram(model, pa)
        ev = np.linalg.eigvalsh(raw)
        assert ev.min() >= -1e-8 * np.trace(raw)

    def test_failure_reports_smallest_eigenvalue(self, rng, monkeypatch):
        model = random_model(rng)
        pa = random_pairs(rng)
        calls = []

        def refuse(a):
            calls.append(a)
            raise np.linalg.LinAlgError("not positive definite")

        monkeypatch.setattr(np.linalg, "cholesky", refuse)
        with pytest.raises(NumericalError, match="smallest eigenvalue"):
            assemble_gram(model, pa)
        # jitter ladder 1e-10 .. 1e-6
        assert len(calls) == 5

    def test_dimension_check(self, rng):
        with pytest.raises(InvalidInput):
            assemble_gram(random_model(rng, r=3), random_pairs(rng, r=2))


def test_feature_map_gradient(rng):
    model = random_model(rng, nk=2)
    pa = random_pairs(rng, n=4)
    G = rng.standard_normal((pa.n, model.dim, 8))
    f = lambda m: np.sum(G * FeatureMap(m, pa.anchors, pa.lags).phi)  # noqa: E731
    grads = FeatureMap(model, pa.anchors, pa.lags).backward(G)
    h = 1e-6
    for key, attr in (("gamma", "gamma"), ("log_omega", "log_omega"), ("log_sigma2", "log_sigma2"), ("weights", "weights")):
        base = np.array(getattr(model, attr), dtype=float)
        num = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            up, dn = base.copy(), base.copy()
            up[idx] += h
            dn[idx] -= h
            num[idx] = (f(model.replace(**{attr: up})) - f(model.replace(**{attr: dn}))) / (2 * h)
        assert np.allclose(grads[key], num, rtol=1e-6, atol=1e-6), key


class TestSpectralDensity:
    def test_single_pair(self):
        model = LmcModel.from_natural(np.eye(2), 1.0, 2 * np.pi, [[1.0, 0.0]], 1e-3)
        (entry,) = implied_spectral_density(model)
        assert entry.frequency == pytest.approx(1.0)
        assert entry.weight == pytest.approx(2 * np.pi)
        assert not entry.prunable
        assert np.allclose(entry.mode, [1.0, 1j])

    def test_prunable(self):
        model = LmcModel.from_natural(np.eye(2).repeat(2, axis=1), [1.0, 1e-12], [3.0, 5.0], np.ones((2, 2)), 1e-3)
        entries = implied_spectral_density(model, omega_grid=np.linspace(0, 10, 11))
        assert [e.prunable for e in entries] == [False, True]
        assert entries[0].grid_index == 3 and entries[1].grid_index == 5


def test_model_io(tmp_path, rng):
    model = random_model(rng, cross_terms=True)
    write_model(tmp_path / "m", model)
    back = read_model(tmp_path / "m")
    assert np.array_equal(back.pack(), model.pack())
    assert back.cross_terms and back.phase_aware
    (tmp_path / "m" / "weights.bin").write_bytes(b"\0" * 5)
    with pytest.raises(ParseError):
        read_model(tmp_path / "m")


def test_pack_round_trip(rng):
    model = random_model(rng)
    assert np.array_equal(model.unpack(model.pack()).pack(), model.pack())
