import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochavg.hilbert import (
    GalerkinModel,
    nuclear_norm,
    sample_wiener_increments,
    semigroup_apply,
    stable_hash,
    substream_seed,
)


def test_model_invariants():
    m = GalerkinModel([2.0, 0.5, 3.0], [1.0, 0.0, 0.25])
    assert m.state_dim == 3 and m.noise_dim == 3
    assert m.delta == 0.5
    assert m.trace_q == 1.25


@pytest.mark.parametrize("lam,q", [([0.0], [1.0]), ([-1.0], [1.0]), ([1.0], [-0.1]), ([], [1.0]), ([1.0], [np.nan])])
def test_model_rejects_bad_spectra(lam, q):
    with pytest.raises(ValueError):
        GalerkinModel(lam, q)


def test_model_is_read_only():
    m = GalerkinModel([1.0], [1.0])
    with pytest.raises(ValueError):
        m.generator_eigenvalues[0] = 2.0


def test_semigroup_identity_at_zero(rng):
    m = GalerkinModel([1.0, 2.0], [1.0])
    x = rng.standard_normal(2)
    assert np.array_equal(semigroup_apply(m, 0.0, x), x)


def test_semigroup_exact_values():
    m = GalerkinModel([1.0, 2.0], [1.0])
    np.testing.assert_allclose(semigroup_apply(m, math.log(2.0), [1.0, 1.0]), [0.5, 0.25], rtol=1e-15)


def test_semigroup_contraction_and_equality_on_slowest_mode(rng):
    m = GalerkinModel([0.7, 1.3, 2.0], [1.0])
    for _ in range(100):
        x = rng.standard_normal(3)
        t = rng.uniform(0, 5)
        assert np.linalg.norm(semigroup_apply(m, t, x)) <= math.exp(-m.delta * t) * np.linalg.norm(x) * (1 + 1e-14)
    e = np.array([3.0, 0.0, 0.0])
    assert np.linalg.norm(semigroup_apply(m, 2.0, e)) == pytest.approx(math.exp(-1.4) * 3.0, rel=1e-15)


def test_semigroup_law(rng):
    m = GalerkinModel([0.3, 1.0, 4.0], [1.0])
    for _ in range(100):
        s, t = rng.uniform(0, 3, 2)
        x = rng.standard_normal(3)
        lhs = semigroup_apply(m, s, semigroup_apply(m, t, x))
        np.testing.assert_allclose(lhs, semigroup_apply(m, s + t, x), rtol=1e-12)


def test_semigroup_errors():
    m = GalerkinModel([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        semigroup_apply(m, -0.1, [1.0, 1.0])
    with pytest.raises(ValueError):
        semigroup_apply(m, 1.0, [1.0, 1.0, 1.0])


def test_wiener_degenerate_covariance():
    m = GalerkinModel([1.0], [0.0, 0.0, 0.0])
    assert not np.any(sample_wiener_increments(m, 0.1, 50, seed=3))


def test_wiener_moments():
    m = GalerkinModel([1.0], [1.0, 0.25])
    h, n = 0.01, 1_000_000
    dw = sample_wiener_increments(m, h, n, seed=11)
    for j, q in enumerate(m.q_eigenvalues):
        assert abs(dw[:, j].mean()) <= 4 * math.sqrt(h * q / n)
        assert dw[:, j].var() == pytest.approx(h * q, rel=0.02)


def test_wiener_determinism_and_seed_dependence():
    m = GalerkinModel([1.0], [1.0, 2.0])
    a = sample_wiener_increments(m, 0.1, 100, seed=5)
    assert np.array_equal(a, sample_wiener_increments(m, 0.1, 100, seed=5))
    assert not np.array_equal(a, sample_wiener_increments(m, 0.1, 100, seed=6))


def test_wiener_rejects_nonpositive_step():
    m = GalerkinModel([1.0], [1.0])
    with pytest.raises(ValueError):
        sample_wiener_increments(m, 0.0, 10, seed=1)


def test_wiener_scaling_of_sums():
    m = GalerkinModel([1.0], [1.0, 0.3])
    T, n, reps = 2.0, 50, 4000
    sums = np.array([sample_wiener_increments(m, T / n, n, seed=100 + r).sum(axis=0) for r in range(reps)])
    for j, q in enumerate(m.q_eigenvalues):
        var = sums[:, j].var(ddof=1)
        # standard error of a Gaussian sample variance
        se = T * q * math.sqrt(2.0 / (reps - 1))
        assert abs(var - T * q) <= 3 * se


def test_substreams_are_distinct_and_stable():
    seeds = {substream_seed(7, i, t) for i in range(200) for t in (0, 1, 2)}
    assert len(seeds) == 600
    assert substream_seed(7, 3, 1) == substream_seed(7, 3, 1)
    assert all(0 <= s < 2**64 for s in seeds)


def test_stable_hash_is_order_independent():
    assert stable_hash({"a": 1, "b": [1, 2]}) == stable_hash({"b": [1, 2], "a": 1})
    assert stable_hash({"a": 1}) != stable_hash({"a": 2})


def test_nuclear_norm_examples():
    assert nuclear_norm(np.eye(3)) == pytest.approx(3.0, abs=1e-15)
    assert nuclear_norm(np.diag([1.0, -2.0])) == pytest.approx(3.0, abs=1e-15)


def test_nuclear_norm_matches_svd(rng):
    for _ in range(20):
        A = rng.standard_normal((5, 5))
        S = A + A.T
        assert nuclear_norm(S) == pytest.approx(np.linalg.svd(S, compute_uv=False).sum(), abs=1e-9)


def test_nuclear_norm_rejects_asymmetric():
    with pytest.raises(ValueError):
        nuclear_norm(np.array([[1.0, 2.0], [0.0, 1.0]]))


sym = st.lists(st.floats(-10, 10), min_size=6, max_size=6)


def _sym(v):
    a, b, c, d, e, f = v
    return np.array([[a, b, c], [b, d, e], [c, e, f]])


@settings(max_examples=100, deadline=None)
@given(sym, sym, st.floats(-5, 5))
def test_nuclear_norm_is_a_norm(u, v, c):
    A, B = _sym(u), _sym(v)
    assert nuclear_norm(A + B) <= nuclear_norm(A) + nuclear_norm(B) + 1e-9
    assert nuclear_norm(c * A) == pytest.approx(abs(c) * nuclear_norm(A), abs=1e-9)
