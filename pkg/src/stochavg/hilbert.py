"""Finite Galerkin realization of the Hilbert-space setting.

The state space is truncated to ``R^d`` with a diagonal dissipative
generator ``A x = -lambda * x`` and the noise space to ``R^m`` with a
diagonal nuclear covariance ``Q = diag(q)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

RNG_NAME = "numpy.PCG64"
RNG_VERSION = 1


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GalerkinModel:
    """Truncated pair ``(A, Q)``.

    Parameters
    ----------
    generator_eigenvalues : array_like, shape (d,)
        Decay rates ``lambda_k > 0``; ``A`` acts as ``x_k -> -lambda_k x_k``.
    q_eigenvalues : array_like, shape (m,)
        Spectrum ``q_j >= 0`` of the noise covariance.
    """

    generator_eigenvalues: np.ndarray
    q_eigenvalues: np.ndarray

    def __post_init__(self):
        lam = _frozen(self.generator_eigenvalues, 1, "generator_eigenvalues")
        q = _frozen(self.q_eigenvalues, 1, "q_eigenvalues")
        if lam.size == 0 or q.size == 0:
            raise ValueError("state and noise dimensions must be positive")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("generator eigenvalues must be finite and > 0")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise ValueError("q eigenvalues must be finite and >= 0")
        object.__setattr__(self, "generator_eigenvalues", lam)
        object.__setattr__(self, "q_eigenvalues", q)

    @property
    def state_dim(self) -> int:
        return self.generator_eigenvalues.size

    @property
    def noise_dim(self) -> int:
        return self.q_eigenvalues.size

    @property
    def delta(self) -> float:
        return float(self.generator_eigenvalues.min())

    @property
    def trace_q(self) -> float:
        return float(self.q_eigenvalues.sum())

    def to_dict(self) -> dict:
        return {
            "generator_eigenvalues": self.generator_eigenvalues.tolist(),
            "q_eigenvalues": self.q_eigenvalues.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GalerkinModel":
        return cls(d["generator_eigenvalues"], d["q_eigenvalues"])

    def digest(self) -> str:
        return stable_hash(self.to_dict())


def stable_hash(obj) -> str:
    """Short sha256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def semigroup_apply(model: GalerkinModel, t: float, x) -> np.ndarray:
    """Apply ``S(t) = exp(tA)``; ``x`` may carry leading batch axes."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.state_dim,):
        raise ValueError(
            f"state has trailing dimension {x.shape[-1:]}, expected ({model.state_dim},)"
        )
    return np.exp(-model.generator_eigenvalues * t) * x


def substream_seed(master_seed: int, index: int, *tags: int) -> int:
    """Deterministic 64-bit seed for substream ``index`` of ``master_seed``.

    ``tags`` separate unrelated families of streams drawn from the same
    master seed (e.g. the oscillating ensemble and its averaged reference).
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(*map(int, tags), int(index)))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_wiener_increments(model: GalerkinModel, h: float, n_steps: int, seed: int) -> np.ndarray:
    """Increments of the Q-Wiener process over ``n_steps`` steps of length ``h``.

    Returns an array of shape ``(n_steps, m)``; coordinate ``j`` is centred
    Gaussian with variance ``h * q_j``.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    rng = make_rng(seed)
    z = rng.standard_normal((int(n_steps), model.noise_dim))
    return z * np.sqrt(h * model.q_eigenvalues)


def check_symmetric(M, rtol: float = 1e-10, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = max(np.abs(M).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(M - M.T).max(initial=0.0) > rtol * scale:
        raise ValueError(f"{name} is not symmetric to relative tolerance {rtol}")
    return M


def nuclear_norm(M) -> float:
    """Sum of absolute eigenvalues of a symmetric matrix."""
    M = check_symmetric(M)
    return float(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T))).sum())
