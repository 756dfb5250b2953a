import math

import numpy as np
import pytest

from conftest import BACKENDS, random_diffusion, random_drift
from stochavg.analysis import compute_constants
from stochavg.coefficients import QuasiPeriodicDiffusion, QuasiPeriodicDrift
from stochavg.hilbert import GalerkinModel, substream_seed
from stochavg.solver import (
    NoContraction,
    PathDivergence,
    PathEnsemble,
    SolverConfig,
    burn_in_length,
    integrate_path,
    integrate_with_increments,
    make_solver_config,
    simulate_ensemble,
)


def _zero_diffusion(d, m):
    return QuasiPeriodicDiffusion.constant(np.zeros((d, m)))


def test_pure_decay_is_exact(backend):
    model = GalerkinModel([0.5, 2.0], [1.0])
    F = QuasiPeriodicDrift.from_modes(np.zeros((2, 2)))
    cfg = SolverConfig(0.1, 0.01, (0.0, 3.0), 0.0)
    x0 = np.array([1.0, -2.0])
    ens = simulate_ensemble(model, F, _zero_diffusion(2, 1), cfg, 2, x0=x0, backend=backend)
    want = np.exp(-np.outer(ens.times, model.generator_eigenvalues)) * x0
    np.testing.assert_allclose(ens.values[0], want, rtol=1e-12, atol=1e-15)


def test_constant_forcing_is_exact(backend):
    model = GalerkinModel([0.5, 2.0], [1.0])
    b = np.array([1.0, 3.0])
    F = QuasiPeriodicDrift.from_modes(np.zeros((2, 2)), b)
    cfg = SolverConfig(0.0, 0.05, (0.0, 4.0), 0.0)
    ens = simulate_ensemble(model, F, _zero_diffusion(2, 1), cfg, 1, x0=[2.0, 0.0], backend=backend)
    lam = model.generator_eigenvalues
    E = np.exp(-np.outer(ens.times, lam))
    want = E * np.array([2.0, 0.0]) + (1 - E) * b / lam
    np.testing.assert_allclose(ens.values[0], want, rtol=1e-12, atol=1e-14)


def test_ou_stationary_variance(backend):
    lam, sigma, h = 1.0, 0.3, 0.01
    model = GalerkinModel([lam], [1.0])
    F = QuasiPeriodicDrift.from_modes([[0.0]])
    G = QuasiPeriodicDiffusion.constant([[sigma]])
    cfg = SolverConfig(0.0, h, (0.0, 1.0), 15.0, 100, master_seed=3)
    N = 4000
    ens = simulate_ensemble(model, F, G, cfg, N, backend=backend)
    # stationary variance of x' = e^{-lam h}(x + sigma dW)
    e2 = math.exp(-2 * lam * h)
    exact = e2 * sigma**2 * h / (1 - e2)
    assert exact == pytest.approx(sigma**2 / (2 * lam), rel=0.011)
    for k in (0, 1):
        v = ens.values[:, k, 0].var(ddof=1)
        assert abs(v - exact) <= 4 * exact * math.sqrt(2.0 / (N - 1))


def test_single_path_matches_ensemble(rng, model3, backend):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2)
    cfg = make_solver_config(0.5, (0.0, 2.0), 20, F, G, 0.05, 1.0, master_seed=9)
    ens = simulate_ensemble(model3, F, G, cfg, 3, stream_tag=4, backend=backend)
    for i in range(3):
        path = integrate_path(model3, F, G, cfg, substream_seed(9, i, 4), backend=backend)
        np.testing.assert_array_equal(path, ens.values[i])


def test_seed_and_tag_determinism(rng, model3):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2)
    cfg = make_solver_config(0.5, (0.0, 1.0), 10, F, G, 0.05, 0.0, master_seed=1)
    a = simulate_ensemble(model3, F, G, cfg, 4).values
    assert np.array_equal(a, simulate_ensemble(model3, F, G, cfg, 4).values)
    assert not np.array_equal(a, simulate_ensemble(model3, F, G, cfg, 4, stream_tag=1).values)
    cfg2 = make_solver_config(0.5, (0.0, 1.0), 10, F, G, 0.05, 0.0, master_seed=2)
    assert not np.array_equal(a, simulate_ensemble(model3, F, G, cfg2, 4).values)
    # a larger ensemble extends a smaller one path by path
    np.testing.assert_array_equal(simulate_ensemble(model3, F, G, cfg, 6).values[:4], a)


@pytest.mark.parametrize("eps", [0.25, 0.0])
def test_thread_count_invariance(rng, model3, backend, eps):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2)
    cfg = make_solver_config(eps, (0.0, 1.0), 10, F, G, 0.05, 0.5, master_seed=5)
    a = simulate_ensemble(model3, F, G, cfg, 7, threads=1, backend=backend).values
    b = simulate_ensemble(model3, F, G, cfg, 7, threads=3, backend=backend).values
    assert a.tobytes() == b.tobytes()


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled core not built")
def test_backends_agree(rng, model3):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2)
    cfg = make_solver_config(0.3, (0.0, 2.0), 20, F, G, 0.05, 1.0, master_seed=5)
    a = simulate_ensemble(model3, F, G, cfg, 16, backend="numpy").values
    b = simulate_ensemble(model3, F, G, cfg, 16, backend="cython").values
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_burn_in_length_examples():
    model = GalerkinModel([0.5, 1.0], [1.0])
    c = compute_constants(0.1, 0.5, 1.0)
    M = 1 + c.theta_prime / (1 - c.theta_prime)
    assert burn_in_length(model, c, 1e-3) == pytest.approx(math.log(M / 1e-3) / 0.5, rel=1e-14)
    assert burn_in_length(model, compute_constants(0.0, 0.5, 1.0), 2.0) == 0.0
    with pytest.raises(NoContraction):
        burn_in_length(model, compute_constants(1.0, 0.5, 1.0), 1e-3)
    with pytest.raises(ValueError):
        burn_in_length(model, c, 0.0)


def test_two_start_coupling_contracts(backend):
    # additive noise: the difference of two starts is deterministic
    model = GalerkinModel([1.0, 1.5], [1.0, 1.0])
    B = np.array([[0.0, 0.2], [-0.1, 0.0]])
    F = QuasiPeriodicDrift.from_modes(B, [0.1, 0.0])
    G = QuasiPeriodicDiffusion.constant(0.2 * np.eye(2))
    cfg = SolverConfig(0.0, 0.01, (0.0, 5.0), 0.0, 50, master_seed=2)
    x = simulate_ensemble(model, F, G, cfg, 5, x0=[3.0, -3.0], backend=backend).values
    y = simulate_ensemble(model, F, G, cfg, 5, x0=[-1.0, 2.0], backend=backend).values
    diff = np.linalg.norm(x - y, axis=-1)
    rate = math.exp(-1.0 * 0.01) + (1 - math.exp(-0.01)) * np.linalg.norm(B, 2)
    bound = rate ** (np.arange(11) * 50) * np.linalg.norm([4.0, -5.0])
    assert np.all(diff <= bound[None] * (1 + 1e-12))
    np.testing.assert_allclose(diff, np.broadcast_to(diff[0], diff.shape), rtol=1e-9)


def test_divergence_is_reported(backend):
    model = GalerkinModel([1.0], [1.0])
    F = QuasiPeriodicDrift.from_modes([[1e4]])
    cfg = SolverConfig(0.0, 0.5, (0.0, 100.0), 0.0)
    with pytest.raises(PathDivergence) as info:
        simulate_ensemble(model, F, QuasiPeriodicDiffusion.constant([[0.1]]), cfg, 3, x0=[1.0], backend=backend)
    assert info.value.path == 0 and info.value.step > 0


def test_resolution_is_enforced(rng, model3):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2, freqs=(4.0,))
    cfg = SolverConfig(0.1, 0.05, (0.0, 1.0), 0.0)
    with pytest.raises(ValueError, match="under-resolves"):
        simulate_ensemble(model3, F, G, cfg, 2)
    ok = make_solver_config(0.1, (0.0, 1.0), 10, F, G, 0.05, 0.0)
    assert ok.h <= 0.1 * 2 * math.pi / 4.0 / 20


def test_solver_config_validation():
    for kw in (dict(eps=1.5), dict(h=0.0), dict(window=(1.0, 1.0)), dict(burn_in=-1.0), dict(h=0.3)):
        args = dict(eps=0.1, h=0.1, window=(0.0, 1.0), burn_in=0.0) | kw
        with pytest.raises(ValueError):
            SolverConfig(**args)


def test_averaged_equation_is_time_shift_invariant(rng, model3, backend):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2, linear=False)
    a = simulate_ensemble(model3, F, G, SolverConfig(0.0, 0.025, (0.0, 1.0), 1.0, 4, 8), 4, backend=backend)
    b = simulate_ensemble(model3, F, G, SolverConfig(0.0, 0.025, (5.0, 6.0), 1.0, 4, 8), 4, backend=backend)
    assert a.provenance["noise_mode"] == "auxiliary"
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_allclose(b.times - a.times, 5.0, atol=1e-14)


def test_multiplicative_averaged_equation_uses_state_dependent_factor(rng):
    model = GalerkinModel([1.0, 2.0], [1.0, 0.5])
    F, G = random_drift(rng, 2), random_diffusion(rng, 2, 2)
    cfg = SolverConfig(0.0, 0.05, (0.0, 1.0), 0.0, 2, 1)
    ens = simulate_ensemble(model, F, G, cfg, 3, x0=[1.0, 1.0])
    assert ens.provenance["noise_mode"] == "model"
    assert np.all(np.isfinite(ens.values))


def test_strong_refinement_with_common_noise(rng):
    model = GalerkinModel([1.0, 2.0], [1.0, 0.5])
    F = random_drift(rng, 2, scale=0.3)
    G = random_diffusion(rng, 2, 2, scale=0.3)
    N, n_fine = 400, 1024
    z = np.random.default_rng(7).standard_normal((N, n_fine, 2))
    x0 = [1.0, -1.0]

    def run(n):
        cfg = SolverConfig(1.0, 4.0 / n, (0.0, 4.0), 0.0, n // 4)
        k = n_fine // n
        zc = z.reshape(N, n, k, 2).sum(axis=2) / math.sqrt(k)
        return integrate_with_increments(model, F, G, cfg, zc, x0=x0)

    ref = run(n_fine)
    errs = [np.sqrt(np.mean(np.sum((run(n) - ref) ** 2, axis=-1))) for n in (64, 128, 256)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[2] >= 2.0


def test_increment_shape_is_checked(rng, model3):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2)
    cfg = SolverConfig(1.0, 0.01, (0.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        integrate_with_increments(model3, F, G, cfg, np.zeros((2, 50, 2)))


def test_ensemble_round_trips(tmp_path, rng, model3):
    F, G = random_drift(rng, 3), random_diffusion(rng, 3, 2)
    cfg = make_solver_config(0.5, (0.0, 1.0), 5, F, G, 0.05, 0.0, master_seed=4)
    ens = simulate_ensemble(model3, F, G, cfg, 3)
    ens.to_binary(tmp_path / "e.bin")
    back = PathEnsemble.from_binary(tmp_path / "e.bin")
    np.testing.assert_array_equal(back.values, ens.values)
    np.testing.assert_array_equal(back.seeds, ens.seeds)
    assert back.provenance == ens.provenance
    ens.to_csv(tmp_path / "e.csv")
    data = np.loadtxt(tmp_path / "e.csv", delimiter=",", skiprows=1)
    assert data.shape == (3 * 6, 5)
    np.testing.assert_array_equal(data[:, 2:].reshape(3, 6, 3), ens.values)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        PathEnsemble.from_binary(tmp_path / "bad.bin")


def test_ensemble_needs_paths():
    with pytest.raises(ValueError):
        PathEnsemble(np.zeros(3), np.zeros((0, 3, 1)), [])
