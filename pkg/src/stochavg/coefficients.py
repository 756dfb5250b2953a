"""Quasi-periodic coefficients, their Bohr means and the averaged diffusion.

Coefficients are affine in the state and trigonometric polynomials in
time::

    F(t, x) = (B0 + sum_j Bc_j cos(w_j t) + Bs_j sin(w_j t)) x
              + b0 + sum_j (bc_j cos(w_j t) + bs_j sin(w_j t))

    G(t, x) = A0(x) + sum_j Ac_j(x) cos(w_j t) + As_j(x) sin(w_j t)

where every ``A(x) = C + L x`` is an affine ``d x m`` matrix valued map,
stored as a constant block ``C`` of shape ``(d, m)`` and a linear block
``L`` of shape ``(d, m, d)`` with ``(L x)[i, j] = sum_k L[i, j, k] x[k]``.

Internally both are kept as *stacks* indexed by a "time basis"
``[1, cos w_1 t, ..., cos w_J t, sin w_1 t, ..., sin w_J t]`` so that a
coefficient at time ``t`` is a weighted sum of the stack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .hilbert import GalerkinModel, check_symmetric, nuclear_norm, stable_hash

PINV_RTOL = 1e-12
PSD_TOL = 1e-10
POINTS_PER_PERIOD = 20


class PSDViolation(ValueError):
    """A matrix expected to be positive semidefinite is not, beyond tolerance."""


def _check_frequencies(freqs: np.ndarray) -> None:
    if freqs.ndim != 1:
        raise ValueError("frequencies must be a flat list")
    if np.any(~np.isfinite(freqs)) or np.any(freqs <= 0):
        raise ValueError(f"frequencies must be finite and strictly positive, got {freqs.tolist()}")
    if np.unique(freqs).size != freqs.size:
        raise ValueError(f"frequencies must be pairwise distinct, got {freqs.tolist()}")


def time_basis(freqs: np.ndarray, t) -> np.ndarray:
    """Rows ``[1, cos(w t), sin(w t)]`` for each entry of ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    wt = np.multiply.outer(t, freqs)
    return np.concatenate([np.ones((t.size, 1)), np.cos(wt), np.sin(wt)], axis=1)


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _opnorm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def _lin_opnorm(L: np.ndarray) -> float:
    """Upper bound on ``sup_{|x|=1} |L x|_op`` via the Frobenius-induced norm."""
    d, m, k = L.shape
    if L.size == 0:
        return 0.0
    return _opnorm(L.reshape(d * m, k))


@dataclass(frozen=True)
class AffineMap:
    """``x -> matrix @ x + vector``; accepts batches ``(N, d)``."""

    matrix: np.ndarray
    vector: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.vector


@dataclass(frozen=True, eq=False)
class QuasiPeriodicDrift:
    base_matrix: np.ndarray
    base_vector: np.ndarray
    frequencies: np.ndarray
    cos_matrices: np.ndarray
    cos_vectors: np.ndarray
    sin_matrices: np.ndarray
    sin_vectors: np.ndarray

    def __post_init__(self):
        B0 = _ro(self.base_matrix)
        d = B0.shape[0]
        if B0.shape != (d, d):
            raise ValueError(f"base_matrix must be square, got {B0.shape}")
        freqs = _ro(self.frequencies).reshape(-1)
        J = freqs.size
        _check_frequencies(freqs)
        shapes = {
            "base_vector": (d,),
            "cos_matrices": (J, d, d),
            "cos_vectors": (J, d),
            "sin_matrices": (J, d, d),
            "sin_vectors": (J, d),
        }
        for name, shape in shapes.items():
            arr = _ro(getattr(self, name))
            if arr.size == 0 and np.prod(shape) == 0:
                arr = _ro(np.zeros(shape))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "base_matrix", B0)
        object.__setattr__(self, "frequencies", freqs)

    @classmethod
    def from_modes(cls, base_matrix, base_vector=None, modes=()):
        """Build from a list of ``dict(frequency=..., cos_matrix=..., ...)``.

        Missing blocks default to zero.
        """
        B0 = np.asarray(base_matrix, dtype=float)
        d = B0.shape[0]
        b0 = np.zeros(d) if base_vector is None else base_vector
        zM, zv = np.zeros((d, d)), np.zeros(d)
        modes = list(modes)
        get = lambda key, z: np.array([np.asarray(md.get(key, z), dtype=float) for md in modes]).reshape((len(modes),) + z.shape)
        return cls(
            B0,
            b0,
            [md["frequency"] for md in modes],
            get("cos_matrix", zM),
            get("cos_vector", zv),
            get("sin_matrix", zM),
            get("sin_vector", zv),
        )

    @property
    def state_dim(self) -> int:
        return self.base_matrix.shape[0]

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    def matrix_stack(self) -> np.ndarray:
        return np.concatenate([self.base_matrix[None], self.cos_matrices, self.sin_matrices])

    def vector_stack(self) -> np.ndarray:
        return np.concatenate([self.base_vector[None], self.cos_vectors, self.sin_vectors])

    def to_dict(self) -> dict:
        return {
            "base_matrix": self.base_matrix.tolist(),
            "base_vector": self.base_vector.tolist(),
            "modes": [
                {
                    "frequency": float(w),
                    "cos_matrix": self.cos_matrices[j].tolist(),
                    "cos_vector": self.cos_vectors[j].tolist(),
                    "sin_matrix": self.sin_matrices[j].tolist(),
                    "sin_vector": self.sin_vectors[j].tolist(),
                }
                for j, w in enumerate(self.frequencies)
            ],
        }

    def digest(self) -> str:
        return stable_hash(self.to_dict())


@dataclass(frozen=True, eq=False)
class QuasiPeriodicDiffusion:
    base_const: np.ndarray
    base_linear: np.ndarray
    frequencies: np.ndarray
    cos_const: np.ndarray
    cos_linear: np.ndarray
    sin_const: np.ndarray
    sin_linear: np.ndarray

    def __post_init__(self):
        C0 = _ro(self.base_const)
        if C0.ndim != 2:
            raise ValueError(f"base_const must be d x m, got shape {C0.shape}")
        d, m = C0.shape
        freqs = _ro(self.frequencies).reshape(-1)
        J = freqs.size
        _check_frequencies(freqs)
        shapes = {
            "base_linear": (d, m, d),
            "cos_const": (J, d, m),
            "cos_linear": (J, d, m, d),
            "sin_const": (J, d, m),
            "sin_linear": (J, d, m, d),
        }
        for name, shape in shapes.items():
            arr = _ro(getattr(self, name))
            if arr.size == 0 and np.prod(shape) == 0:
                arr = _ro(np.zeros(shape))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "base_const", C0)
        object.__setattr__(self, "frequencies", freqs)

    @classmethod
    def from_modes(cls, base_const, base_linear=None, modes=()):
        C0 = np.asarray(base_const, dtype=float)
        d, m = C0.shape
        zC, zL = np.zeros((d, m)), np.zeros((d, m, d))
        L0 = zL if base_linear is None else base_linear
        modes = list(modes)
        get = lambda key, z: np.array([np.asarray(md.get(key, z), dtype=float) for md in modes]).reshape((len(modes),) + z.shape)
        return cls(
            C0,
            L0,
            [md["frequency"] for md in modes],
            get("cos_const", zC),
            get("cos_linear", zL),
            get("sin_const", zC),
            get("sin_linear", zL),
        )

    @classmethod
    def constant(cls, matrix):
        return cls.from_modes(matrix)

    @property
    def state_dim(self) -> int:
        return self.base_const.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.base_const.shape[1]

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    @property
    def additive(self) -> bool:
        return not (
            np.any(self.base_linear) or np.any(self.cos_linear) or np.any(self.sin_linear)
        )

    def const_stack(self) -> np.ndarray:
        return np.concatenate([self.base_const[None], self.cos_const, self.sin_const])

    def linear_stack(self) -> np.ndarray:
        return np.concatenate([self.base_linear[None], self.cos_linear, self.sin_linear])

    def to_dict(self) -> dict:
        return {
            "base": {"const": self.base_const.tolist(), "linear": self.base_linear.tolist()},
            "modes": [
                {
                    "frequency": float(w),
                    "cos": {"const": self.cos_const[j].tolist(), "linear": self.cos_linear[j].tolist()},
                    "sin": {"const": self.sin_const[j].tolist(), "linear": self.sin_linear[j].tolist()},
                }
                for j, w in enumerate(self.frequencies)
            ],
        }

    def digest(self) -> str:
        return stable_hash(self.to_dict())


def _check_state(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (d,):
        raise ValueError(f"state has trailing dimension {x.shape[-1:]}, expected ({d},)")
    return x


def eval_drift(F: QuasiPeriodicDrift, t: float, x) -> np.ndarray:
    """``F(t, x)``; ``x`` of shape ``(d,)`` or ``(N, d)``."""
    x = _check_state(x, F.state_dim)
    w = time_basis(F.frequencies, t)[0]
    B = np.tensordot(w, F.matrix_stack(), 1)
    b = w @ F.vector_stack()
    return x @ B.T + b


def _affine_blocks(C: np.ndarray, L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``C + L x`` for a single block, batched over leading axes of ``x``."""
    return C + np.einsum("ijk,...k->...ij", L, x)


def eval_diffusion(G: QuasiPeriodicDiffusion, t: float, x) -> np.ndarray:
    """``G(t, x)`` of shape ``(d, m)``, or ``(N, d, m)`` for a batch of states."""
    x = _check_state(x, G.state_dim)
    w = time_basis(G.frequencies, t)[0]
    C = np.tensordot(w, G.const_stack(), 1)
    L = np.tensordot(w, G.linear_stack(), 1)
    return _affine_blocks(C, L, x)


def lipschitz_certificate(coeff) -> tuple[float, float]:
    """Return ``(K_lip, K_growth)`` by the triangle inequality over blocks.

    ``K_lip`` bounds the Lipschitz constant of ``x -> coeff(t, x)``
    uniformly in ``t`` and ``K_growth`` satisfies
    ``|coeff(t, x)| <= K_growth (1 + |x|)`` (operator norm for diffusions).
    """
    if isinstance(coeff, QuasiPeriodicDrift):
        k_lin = sum(_opnorm(M) for M in coeff.matrix_stack())
        k_aff = sum(float(np.linalg.norm(v)) for v in coeff.vector_stack())
    elif isinstance(coeff, QuasiPeriodicDiffusion):
        k_lin = sum(_lin_opnorm(L) for L in coeff.linear_stack())
        k_aff = sum(_opnorm(C) for C in coeff.const_stack())
    else:
        raise TypeError(f"unsupported coefficient type {type(coeff).__name__}")
    return k_lin, max(k_lin, k_aff)


def equation_constant(F: QuasiPeriodicDrift, G: QuasiPeriodicDiffusion) -> float:
    """Joint constant ``K`` for the growth and Lipschitz conditions on (F, G)."""
    lf, gf = lipschitz_certificate(F)
    lg, gg = lipschitz_certificate(G)
    return max(lf + lg, gf + gg)


def average_drift_closed(F: QuasiPeriodicDrift) -> AffineMap:
    """Bohr mean of the drift: every mode with ``w > 0`` averages to zero."""
    return AffineMap(F.base_matrix, F.base_vector)


def _quad_points(freqs: np.ndarray, T: float, n_quad: int | None) -> int:
    if n_quad is None:
        if freqs.size == 0:
            return 3
        period = 2 * np.pi / freqs.max()
        n = int(np.ceil(POINTS_PER_PERIOD * T / period))
        n_quad = n + 1
    if n_quad < 2:
        raise ValueError("n_quad must be at least 2")
    return int(n_quad)


def average_drift_numeric(F: QuasiPeriodicDrift, x, Tau: float, T: float, n_quad: int | None = None) -> np.ndarray:
    """Composite Simpson estimate of ``(1/T) int_Tau^{Tau+T} F(s, x) ds``."""
    if not T > 0:
        raise ValueError(f"averaging horizon must be positive, got {T}")
    x = _check_state(x, F.state_dim)
    n = _quad_points(F.frequencies, T, n_quad)
    s = np.linspace(Tau, Tau + T, n)
    w = time_basis(F.frequencies, s)
    # F(s, x) = sum_b w_b(s) (M_b x + v_b)
    per_block = F.matrix_stack() @ x + F.vector_stack()
    vals = w @ per_block
    return simpson(vals, x=s, axis=0) / T


def drift_tail_bound(F: QuasiPeriodicDrift, x, T: float) -> float:
    """Bound on ``|(1/T) int F(s, x) ds - F0(x)|`` over any window of length T."""
    x = _check_state(x, F.state_dim)
    amp = 0.0
    for j, w in enumerate(F.frequencies):
        a = np.linalg.norm(F.cos_matrices[j] @ x + F.cos_vectors[j])
        b = np.linalg.norm(F.sin_matrices[j] @ x + F.sin_vectors[j])
        amp += 2.0 * (a + b) / (w * T)
    return float(amp)


def _block_values(G: QuasiPeriodicDiffusion, x: np.ndarray) -> np.ndarray:
    """All blocks ``C_b + L_b x`` stacked, shape ``(2J+1, ..., d, m)``."""
    C = G.const_stack()
    L = G.linear_stack()
    vals = np.einsum("bijk,...k->b...ij", L, x)
    return vals + C.reshape((C.shape[0],) + (1,) * (x.ndim - 1) + C.shape[1:])


def _check_model(G: QuasiPeriodicDiffusion, model: GalerkinModel) -> None:
    if G.noise_dim != model.noise_dim or G.state_dim != model.state_dim:
        raise ValueError(
            f"diffusion is {G.state_dim}x{G.noise_dim} but model has d={model.state_dim}, m={model.noise_dim}"
        )


def averaged_covariance_closed(G: QuasiPeriodicDiffusion, model: GalerkinModel, x) -> np.ndarray:
    """Bohr mean ``H0(x)`` of ``G(s, x) Q G(s, x)^T``; batched over ``x``.

    Uses mean(cos^2) = mean(sin^2) = 1/2 and zero means for every product of
    distinct frequencies, which is where the distinctness invariant matters.
    """
    _check_model(G, model)
    x = _check_state(x, G.state_dim)
    blocks = _block_values(G, x)
    weights = np.concatenate([[1.0], np.full(2 * G.n_modes, 0.5)])
    scaled = blocks * model.q_eigenvalues
    H = np.einsum("b,b...ij,b...kj->...ik", weights, scaled, blocks)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def covariance_spectrum(G: QuasiPeriodicDiffusion, model: GalerkinModel, x):
    """Frequency decomposition of ``s -> G(s, x) Q G(s, x)^T``.

    Returns ``(const, terms)`` with ``terms`` a list of
    ``(nu, cos_amplitude, sin_amplitude)`` such that::

        G Q G^T (s) = const + sum_nu cos_amp cos(nu s) + sin_amp sin(nu s)

    ``const`` coincides with :func:`averaged_covariance_closed`.
    """
    _check_model(G, model)
    x = _check_state(x, G.state_dim)
    J = G.n_modes
    blocks = _block_values(G, x)
    q = model.q_eigenvalues
    # (kind, frequency, matrix); kind 0 = constant, 1 = cos, 2 = sin
    desc = [(0, 0.0)] + [(1, w) for w in G.frequencies] + [(2, w) for w in G.frequencies]
    const = np.zeros((G.state_dim, G.state_dim))
    acc: dict[float, list] = {}

    def add(nu, kind, M):
        if nu < 0:
            nu = -nu
            if kind == "sin":
                M = -M
        if nu == 0.0:
            if kind == "cos":
                const[...] += M
            return
        slot = acc.setdefault(round(nu, 12), [nu, np.zeros_like(const), np.zeros_like(const)])
        slot[1 if kind == "cos" else 2] += M

    for b, (kb, wb) in enumerate(desc):
        for c, (kc, wc) in enumerate(desc):
            P = (blocks[b] * q) @ blocks[c].T
            if kb == 0 and kc == 0:
                add(0.0, "cos", P)
            elif kb == 0 or kc == 0:
                kind = kb or kc
                w = wb or wc
                add(w, "cos" if kind == 1 else "sin", P)
            elif kb == 1 and kc == 1:
                add(wb - wc, "cos", 0.5 * P)
                add(wb + wc, "cos", 0.5 * P)
            elif kb == 2 and kc == 2:
                add(wb - wc, "cos", 0.5 * P)
                add(wb + wc, "cos", -0.5 * P)
            else:
                # cos(a) sin(b) = (sin(a+b) - sin(a-b)) / 2 with a the cos frequency
                a, s = (wb, wc) if kb == 1 else (wc, wb)
                add(a + s, "sin", 0.5 * P)
                add(a - s, "sin", -0.5 * P)
    terms = [tuple(v) for _, v in sorted(acc.items())]
    return const, terms


def covariance_tail_bound(G: QuasiPeriodicDiffusion, model: GalerkinModel, x, T: float) -> float:
    """Bound on the nuclear distance between the window mean of ``G Q G^T`` and ``H0``."""
    _, terms = covariance_spectrum(G, model, x)
    return float(sum(2.0 * (nuclear_norm(c) + nuclear_norm(s)) / (nu * T) for nu, c, s in terms))


def averaged_covariance_numeric(
    G: QuasiPeriodicDiffusion, model: GalerkinModel, x, Tau: float, T: float, n_quad: int | None = None
) -> tuple[np.ndarray, float]:
    """Simpson estimate of the window mean of ``G Q G^T`` and its nuclear error vs ``H0``."""
    if not T > 0:
        raise ValueError(f"averaging horizon must be positive, got {T}")
    _check_model(G, model)
    x = _check_state(x, G.state_dim)
    n = _quad_points(2 * G.frequencies, T, n_quad)
    s = np.linspace(Tau, Tau + T, n)
    w = time_basis(G.frequencies, s)
    blocks = _block_values(G, x)
    Gs = np.tensordot(w, blocks, 1)
    vals = np.einsum("nij,nkj->nik", Gs * model.q_eigenvalues, Gs)
    H = simpson(vals, x=s, axis=0) / T
    H = 0.5 * (H + H.T)
    err = nuclear_norm(H - averaged_covariance_closed(G, model, x))
    return H, err


def sqrt_psd(M, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric square root of a PSD matrix, or of a stack of them.

    Eigenvalues in ``[-tol * max, 0)`` are clamped to zero; anything more
    negative raises :class:`PSDViolation`.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        check_symmetric(M, name="sqrt_psd input")
    evals, vecs = np.linalg.eigh(0.5 * (M + np.swapaxes(M, -1, -2)))
    top = np.abs(evals).max(axis=-1, keepdims=True)
    if np.any(evals < -tol * top):
        raise PSDViolation(f"matrix has eigenvalue {evals.min():.3e} below -{tol:g} * max")
    root = np.sqrt(np.clip(evals, 0.0, None))
    return (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def positive_q(model: GalerkinModel) -> np.ndarray:
    """Indices of ``q_j`` kept by the pseudo-inverse (``q_j > 1e-12 max q``)."""
    q = model.q_eigenvalues
    return np.flatnonzero(q > PINV_RTOL * q.max()) if q.max() > 0 else np.array([], dtype=int)


def factor_from_covariance(H, model: GalerkinModel, tol: float = PSD_TOL) -> np.ndarray:
    """``G0`` with ``G0 Q G0^T = H``, supported on ``range(Q^{1/2})``.

    When ``d`` does not exceed the number ``r`` of retained noise modes the
    symmetric root is used, ``G0 = H^{1/2} E Q^{-1/2}`` with ``E`` the
    embedding of ``R^d`` into the first ``d`` retained modes; for ``d = m``
    and ``Q`` invertible this is ``H^{1/2} Q^{-1/2}``. For ``d > r`` a
    rank-``r`` eigenfactor is used and ``H`` must have rank at most ``r``.
    """
    H = np.asarray(H, dtype=float)
    d = H.shape[-1]
    keep = positive_q(model)
    r = keep.size
    inv_sqrt_q = 1.0 / np.sqrt(model.q_eigenvalues[keep])
    out = np.zeros(H.shape[:-1] + (model.noise_dim,))
    if d <= r:
        root = sqrt_psd(H, tol)
        out[..., keep[:d]] = root * inv_sqrt_q[:d]
        return out
    evals, vecs = np.linalg.eigh(0.5 * (H + np.swapaxes(H, -1, -2)))
    top = np.abs(evals).max(axis=-1, keepdims=True)
    if np.any(evals < -tol * top):
        raise PSDViolation(f"matrix has eigenvalue {evals.min():.3e} below -{tol:g} * max")
    dropped = evals[..., : d - r]
    if np.any(dropped > tol * top):
        raise ValueError(
            f"averaged covariance has rank > {r} = rank(Q); it cannot be written as G0 Q G0^T "
            "with the model's noise"
        )
    lead = vecs[..., d - r :] * np.sqrt(np.clip(evals[..., d - r :], 0.0, None))[..., None, :]
    out[..., keep] = lead * inv_sqrt_q
    return out


@dataclass(frozen=True, eq=False)
class AveragedCoefficients:
    """Averaged drift ``F0`` and covariance ``H0`` with ``G0`` on demand."""

    f0: AffineMap
    diffusion: QuasiPeriodicDiffusion
    model: GalerkinModel

    def h0(self, x) -> np.ndarray:
        return averaged_covariance_closed(self.diffusion, self.model, x)

    def g0(self, x) -> np.ndarray:
        return factor_from_covariance(self.h0(x), self.model)

    @property
    def additive(self) -> bool:
        return self.diffusion.additive

    @property
    def uses_model_noise(self) -> bool:
        """Whether ``G0`` can always be driven by the model's own Wiener process."""
        return self.model.state_dim <= positive_q(self.model).size


def build_averaged(F: QuasiPeriodicDrift, G: QuasiPeriodicDiffusion, model: GalerkinModel) -> AveragedCoefficients:
    _check_model(G, model)
    if F.state_dim != model.state_dim:
        raise ValueError(f"drift dimension {F.state_dim} != model dimension {model.state_dim}")
    return AveragedCoefficients(average_drift_closed(F), G, model)


def averaged_diffusion(avg: AveragedCoefficients, model: GalerkinModel, x) -> np.ndarray:
    """``G0(x) = H0(x)^{1/2} Q^{-1/2}`` restricted to ``range(Q^{1/2})``."""
    return factor_from_covariance(averaged_covariance_closed(avg.diffusion, model, x), model)
