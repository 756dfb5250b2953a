"""Exponential-Euler integration of the mild form and ensemble generation.

For ``eps > 0`` the coefficients are evaluated at fast time ``t / eps``;
``eps = 0`` selects the averaged equation driven by ``(F0, G0)``.

When the averaged covariance cannot be factored through the model's own
noise (state dimension larger than the number of active noise modes),
the averaged equation is driven by an auxiliary standard Wiener process
on ``R^d`` with diffusion ``H0(x)^{1/2}``. Both realizations have the same
law.
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .analysis import ConstantsReport
from .coefficients import (
    POINTS_PER_PERIOD,
    QuasiPeriodicDiffusion,
    QuasiPeriodicDrift,
    build_averaged,
    factor_from_covariance,
    sqrt_psd,
    time_basis,
)
from .hilbert import RNG_NAME, RNG_VERSION, GalerkinModel, make_rng, stable_hash, substream_seed

_SERIES_CUTOFF = 1e-4
_NOISE_CHUNK_BYTES = 1 << 25
_BINARY_MAGIC = b"STAVGENS"


class PathDivergence(RuntimeError):
    def __init__(self, path: int, step: int):
        super().__init__(f"non-finite state in path {path} at step {step}")
        self.path = path
        self.step = step


class NoContraction(ValueError):
    """``theta' >= 1``: the moment bound and the averaging estimates do not apply."""


@dataclass(frozen=True)
class SolverConfig:
    eps: float
    h: float
    window: tuple[float, float]
    burn_in: float
    grid_stride: int = 1
    master_seed: int = 0

    def __post_init__(self):
        a, b = map(float, self.window)
        object.__setattr__(self, "window", (a, b))
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")
        if not self.h > 0:
            raise ValueError(f"step must be positive, got {self.h}")
        if not a < b:
            raise ValueError(f"window must satisfy a < b, got {self.window}")
        if self.burn_in < 0:
            raise ValueError(f"burn-in must be nonnegative, got {self.burn_in}")
        if self.grid_stride < 1:
            raise ValueError("grid_stride must be >= 1")
        n = (b - a) / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) % self.grid_stride:
            raise ValueError(
                f"window length {b - a} is not a whole number of strides ({self.grid_stride} x h={self.h})"
            )

    @property
    def n_window_steps(self) -> int:
        return int(round((self.window[1] - self.window[0]) / self.h))

    @property
    def n_grid(self) -> int:
        """Number of recorded intervals; the grid has ``n_grid + 1`` points."""
        return self.n_window_steps // self.grid_stride

    @property
    def n_burn_steps(self) -> int:
        return int(math.ceil(self.burn_in / self.h - 1e-9))

    @property
    def start_time(self) -> float:
        return self.window[0] - self.n_burn_steps * self.h

    def grid(self) -> np.ndarray:
        a, b = self.window
        return np.linspace(a, b, self.n_grid + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    def digest(self) -> str:
        return stable_hash(self.to_dict())

    def check_resolution(self, F: QuasiPeriodicDrift, G: QuasiPeriodicDiffusion, points: int = POINTS_PER_PERIOD):
        """Raise unless the fastest mode is sampled at least ``points`` times per period."""
        if self.eps == 0:
            return
        w = max_frequency(F, G)
        if w > 0 and self.h > self.eps * (2 * math.pi / w) / points * (1 + 1e-12):
            raise ValueError(
                f"step {self.h} under-resolves the fastest mode: need h <= eps*2pi/w/{points} = "
                f"{self.eps * 2 * math.pi / w / points}"
            )


def max_frequency(F: QuasiPeriodicDrift, G: QuasiPeriodicDiffusion) -> float:
    freqs = np.concatenate([F.frequencies, G.frequencies])
    return float(freqs.max()) if freqs.size else 0.0


def make_solver_config(
    eps: float,
    window,
    n_grid: int,
    F: QuasiPeriodicDrift,
    G: QuasiPeriodicDiffusion,
    max_step: float,
    burn_in: float,
    master_seed: int = 0,
    points_per_period: int = POINTS_PER_PERIOD,
) -> SolverConfig:
    """Pick the largest admissible step that puts ``n_grid`` intervals on the window."""
    a, b = map(float, window)
    limit = float(max_step)
    w = max_frequency(F, G)
    if eps > 0 and w > 0:
        limit = min(limit, eps * 2 * math.pi / w / points_per_period)
    stride = max(1, int(math.ceil((b - a) / (n_grid * limit) - 1e-9)))
    h = (b - a) / (n_grid * stride)
    return SolverConfig(eps, h, (a, b), burn_in, stride, master_seed)


def burn_in_length(model: GalerkinModel, constants: ConstantsReport, tol: float) -> float:
    """Burn-in after which the start transient is below ``tol`` in second moment."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if constants.theta_prime >= 1:
        raise NoContraction(f"theta' = {constants.theta_prime:.6g} >= 1: no moment bound available")
    M = 1.0 + constants.theta_prime / (1.0 - constants.theta_prime)
    return max(0.0, math.log(M / tol) / model.delta)


@dataclass
class PathEnsemble:
    times: np.ndarray
    values: np.ndarray
    seeds: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.seeds = np.asarray(self.seeds, dtype=np.uint64)
        if self.values.ndim != 3 or self.values.shape[1] != self.times.size:
            raise ValueError(f"values shape {self.values.shape} does not match grid of {self.times.size}")
        if self.values.shape[0] < 1:
            raise ValueError("an ensemble needs at least one path")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def state_dim(self) -> int:
        return self.values.shape[2]

    def to_csv(self, path) -> None:
        d = self.state_dim
        with open(path, "w") as fh:
            fh.write("path_id,t," + ",".join(f"x_{k + 1}" for k in range(d)) + "\n")
            for i in range(self.n_paths):
                for g, t in enumerate(self.times):
                    row = ",".join(repr(float(v)) for v in self.values[i, g])
                    fh.write(f"{i},{float(t)!r},{row}\n")

    def to_binary(self, path) -> None:
        """Header (JSON, length-prefixed) followed by little-endian values and seeds."""
        header = {
            "n_paths": self.n_paths,
            "n_times": int(self.times.size),
            "state_dim": self.state_dim,
            "grid": [float(self.times[0]), float(self.times[-1]), int(self.times.size)],
            "provenance": self.provenance,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_BINARY_MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(self.values.astype("<f8").tobytes())
            fh.write(self.seeds.astype("<u8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "PathEnsemble":
        with open(path, "rb") as fh:
            if fh.read(len(_BINARY_MAGIC)) != _BINARY_MAGIC:
                raise ValueError(f"{path} is not a path-ensemble dump")
            (n,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(n))
            nt, N, d = header["n_times"], header["n_paths"], header["state_dim"]
            times = np.frombuffer(fh.read(8 * nt), "<f8")
            values = np.frombuffer(fh.read(8 * N * nt * d), "<f8").reshape(N, nt, d)
            seeds = np.frombuffer(fh.read(8 * N), "<u8")
        return cls(times.copy(), values.copy(), seeds.copy(), header["provenance"])


def _phi(lam: np.ndarray, h: float) -> np.ndarray:
    z = lam * h
    series = h * (1.0 - z / 2.0 + z * z / 6.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(-z) / lam
    return np.where(z < _SERIES_CUTOFF, series, exact)


@dataclass
class _Plan:
    """Everything a worker needs to integrate a block of paths."""

    decay: np.ndarray
    phi: np.ndarray
    drift_freqs: np.ndarray
    bmat: np.ndarray
    bvec: np.ndarray
    diff_freqs: np.ndarray
    gconst: np.ndarray
    glin: np.ndarray
    noise_std: np.ndarray  # sqrt(h q) of the driving noise
    state_fn: object = None  # batch diffusion x -> (N, d, m) when not affine-trig
    noise_mode: str = "model"


def _plan(model: GalerkinModel, F: QuasiPeriodicDrift, G: QuasiPeriodicDiffusion, config: SolverConfig) -> _Plan:
    if F.state_dim != model.state_dim or G.state_dim != model.state_dim or G.noise_dim != model.noise_dim:
        raise ValueError("coefficient dimensions do not match the model")
    lam = model.generator_eigenvalues
    h = config.h
    decay = np.exp(-lam * h)
    phi = _phi(lam, h)
    d = model.state_dim
    if config.eps > 0:
        config.check_resolution(F, G)
        return _Plan(
            decay, phi,
            F.frequencies, np.ascontiguousarray(F.matrix_stack()), np.ascontiguousarray(F.vector_stack()),
            G.frequencies, np.ascontiguousarray(G.const_stack()),
            np.ascontiguousarray(G.linear_stack()) if not G.additive else np.zeros((0, d, G.noise_dim, d)),
            np.sqrt(h * model.q_eigenvalues),
        )
    avg = build_averaged(F, G, model)
    empty = np.zeros(0)
    bmat = np.ascontiguousarray(avg.f0.matrix[None])
    bvec = np.ascontiguousarray(avg.f0.vector[None])
    if avg.uses_model_noise:
        std = np.sqrt(h * model.q_eigenvalues)
        mode = "model"
        factor = lambda H: factor_from_covariance(H, model)
    else:
        std = np.full(d, math.sqrt(h))
        mode = "auxiliary"
        factor = sqrt_psd
    if avg.additive:
        g0 = factor(avg.h0(np.zeros(d)))
        return _Plan(decay, phi, empty, bmat, bvec, empty, np.ascontiguousarray(g0[None]),
                     np.zeros((0, d, g0.shape[1], d)), std, noise_mode=mode)
    m_sim = std.size
    return _Plan(decay, phi, empty, bmat, bvec, empty, np.zeros((1, d, m_sim)),
                 np.zeros((0, d, m_sim, d)), std, state_fn=lambda X: factor(avg.h0(X)), noise_mode=mode)


def _record_slots(first_step: int, n: int, n_burn: int, stride: int) -> np.ndarray:
    s = np.arange(first_step + 1, first_step + n + 1, dtype=np.int64) - n_burn
    return np.where((s >= 0) & (s % stride == 0), s // stride, -1).astype(np.int64)


def _advance_generic(plan: _Plan, x, dw, rec_slot, out, first_step):
    B, b = plan.bmat[0], plan.bvec[0]
    for k in range(dw.shape[1]):
        G0 = plan.state_fn(x)
        noise = np.einsum("nij,nj->ni", G0, dw[:, k])
        x[...] = plan.decay * (x + noise) + plan.phi * (x @ B.T + b)
        if not np.isfinite(x).all():
            return k, int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        if rec_slot[k] >= 0:
            out[:, rec_slot[k]] = x
    return -1, -1


def _integrate_block(plan: _Plan, config: SolverConfig, x0: np.ndarray, seeds=None, increments=None,
                     backend=None, path_offset: int = 0) -> np.ndarray:
    impl = kernels.get_backend(backend)
    N, d = x0.shape
    n_burn = config.n_burn_steps
    n_total = n_burn + config.n_window_steps
    stride = config.grid_stride
    out = np.zeros((N, config.n_grid + 1, d))
    x = np.ascontiguousarray(x0, dtype=float).copy()
    if n_burn == 0:
        out[:, 0] = x
    m_sim = plan.noise_std.size
    chunk = max(1, min(n_total, _NOISE_CHUNK_BYTES // max(1, 8 * N * m_sim)))
    rngs = None if increments is not None else [make_rng(s) for s in seeds]
    t0 = config.start_time
    for first in range(0, n_total, chunk):
        n = min(chunk, n_total - first)
        if increments is not None:
            dw = np.ascontiguousarray(increments[:, first : first + n])
        else:
            dw = np.empty((N, n, m_sim))
            for i, rng in enumerate(rngs):
                dw[i] = rng.standard_normal((n, m_sim))
            dw *= plan.noise_std
        slots = _record_slots(first, n, n_burn, stride)
        if plan.state_fn is not None:
            bad_k, bad_i = _advance_generic(plan, x, dw, slots, out, first)
        else:
            tau = (t0 + (first + np.arange(n)) * config.h)
            if config.eps > 0:
                tau = tau / config.eps
            wf = np.ascontiguousarray(time_basis(plan.drift_freqs, tau))
            wg = np.ascontiguousarray(time_basis(plan.diff_freqs, tau))
            bad_k, bad_i = impl.advance(x, plan.decay, plan.phi, wf, plan.bmat, plan.bvec, wg,
                                        plan.gconst, plan.glin, dw, slots, out)
        if bad_k >= 0:
            raise PathDivergence(path_offset + bad_i, first + bad_k)
    return out


def _initial_states(x0, N: int, d: int) -> np.ndarray:
    if x0 is None:
        return np.zeros((N, d))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (d,):
        return np.tile(x0, (N, 1))
    if x0.shape == (N, d):
        return x0.copy()
    raise ValueError(f"initial state has shape {x0.shape}, expected ({d},) or ({N}, {d})")


def integrate_path(model, F, G, config: SolverConfig, substream_seed: int, x0=None, backend=None) -> np.ndarray:
    """One path on the recording grid, shape ``(n_grid + 1, d)``."""
    plan = _plan(model, F, G, config)
    return _integrate_block(plan, config, _initial_states(x0, 1, model.state_dim), [substream_seed], backend=backend)[0]


def driving_noise_dim(model: GalerkinModel, F, G, eps: float) -> int:
    """Dimension of the Wiener process that drives the (possibly averaged) equation."""
    if eps > 0:
        return model.noise_dim
    return model.noise_dim if build_averaged(F, G, model).uses_model_noise else model.state_dim


def integrate_with_increments(model, F, G, config: SolverConfig, increments, x0=None, backend=None) -> np.ndarray:
    """Integrate with caller-supplied standardized increments ``(N, n_steps, m)``.

    ``increments`` are standard normals; they are scaled by ``sqrt(h q)``
    here. Used for common-random-number comparisons across step sizes.
    """
    plan = _plan(model, F, G, config)
    z = np.asarray(increments, dtype=float)
    n_total = config.n_burn_steps + config.n_window_steps
    if z.shape[1:] != (n_total, plan.noise_std.size):
        raise ValueError(f"increments have shape {z.shape}, expected (N, {n_total}, {plan.noise_std.size})")
    x = _initial_states(x0, z.shape[0], model.state_dim)
    return _integrate_block(plan, config, x, increments=z * plan.noise_std, backend=backend)


def simulate_ensemble(
    model: GalerkinModel,
    F: QuasiPeriodicDrift,
    G: QuasiPeriodicDiffusion,
    config: SolverConfig,
    N: int,
    x0=None,
    threads: int = 1,
    stream_tag: int = 0,
    backend=None,
) -> PathEnsemble:
    """``N`` independent paths; path ``i`` uses substream ``(master_seed, stream_tag, i)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    plan = _plan(model, F, G, config)
    seeds = [substream_seed(config.master_seed, i, stream_tag) for i in range(N)]
    X0 = _initial_states(x0, N, model.state_dim)
    threads = max(1, min(int(threads), N))
    bounds = np.linspace(0, N, threads + 1).astype(int)
    jobs = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run(job):
        lo, hi = job
        return _integrate_block(plan, config, X0[lo:hi], seeds[lo:hi], backend=backend, path_offset=lo)

    if len(jobs) == 1:
        parts = [run(jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(run, jobs))
    values = np.concatenate(parts, axis=0)
    provenance = {
        "model_hash": model.digest(),
        "coefficient_hash": stable_hash([F.digest(), G.digest()]),
        "config_hash": config.digest(),
        "eps": config.eps,
        "stream_tag": int(stream_tag),
        "noise_mode": plan.noise_mode,
        "rng": f"{RNG_NAME}/v{RNG_VERSION}",
    }
    return PathEnsemble(config.grid(), values, np.array(seeds, dtype=np.uint64), provenance)
