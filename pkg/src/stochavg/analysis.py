"""Closed-form constants and numerical verifiers for the moment inequalities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coefficients import QuasiPeriodicDiffusion, _block_values, time_basis
from .hilbert import GalerkinModel, make_rng, substream_seed

NOVIKOV_READING = "C_p(c) = (2c)^(p/2) / ((2+2c)/(p-1) - 2^(p/2)), c > (p-1) 2^(p/2-1) - 1"
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ConstantsReport:
    K: float
    delta: float
    trace_q: float
    theta: float
    theta_prime: float
    theta_prime_p: dict = field(default_factory=dict)
    novikov_c_p: dict = field(default_factory=dict)
    moment_bound_l2: float | None = None
    novikov_reading: str = NOVIKOV_READING

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta_prime_p"] = {str(k): v for k, v in self.theta_prime_p.items()}
        out["novikov_c_p"] = {str(k): list(v) for k, v in self.novikov_c_p.items()}
        return out


def novikov_admissible_threshold(p: float) -> float:
    """Lower end of the admissible ray ``c > (p-1) 2^(p/2-1) - 1``."""
    return (p - 1.0) * 2.0 ** (p / 2.0 - 1.0) - 1.0


def novikov_value(p: float, c: float) -> float:
    """Moment-inequality constant for an admissible ``c``.

    The denominator ``(2+2c)/(p-1) - 2^(p/2)`` equals ``2 (c - c0)/(p-1)``
    with ``c0`` the admissibility threshold; that form avoids cancellation
    and is positive exactly on the admissible ray.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    c0 = novikov_admissible_threshold(p)
    if not (c > c0 and c > 0):
        raise ValueError(f"c={c} is not admissible for p={p}: need c > {c0} and c > 0")
    return (2.0 * c) ** (p / 2.0) / (2.0 * (c - c0) / (p - 1.0))


def golden_section(f, lo: float, hi: float, tol: float = 1e-8, max_iter: int = 500):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    x = 0.5 * (a + b)
    return x, f(x)


def novikov_constant(p: float, c: float | None = None, c_max: float = 1e6) -> tuple[float, float]:
    """Return ``(C_p, c)``; with ``c`` omitted, minimize over the admissible ray.

    The search is a golden section on ``log c`` over
    ``(max(c0, 0), c_max]``.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if c is not None:
        return novikov_value(p, c), float(c)
    c0 = max(novikov_admissible_threshold(p), 0.0)
    lo = math.log(c0) if c0 > 0 else math.log(1e-12)
    lo += 1e-12 * max(1.0, abs(lo))
    hi = math.log(c_max)

    def obj(logc):
        cc = math.exp(logc)
        if cc <= c0:
            return math.inf
        return novikov_value(p, cc)

    logc, val = golden_section(obj, lo, hi, tol=1e-8)
    return val, math.exp(logc)


def theta_prime_p(p: float, K: float, delta: float, trace_q: float, c_p: float) -> float:
    half = p / 2.0
    return (2.0 ** (1.5 * p - 1.0) * K**p / delta**half) * (
        2.0 ** (half - 1.0) / delta**half + c_p * trace_q**half
    )


def compute_constants(K: float, delta: float, trace_q: float, p_list=(2.0,)) -> ConstantsReport:
    """Contraction constants of the fixed-point map and the moment bound."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if K < 0 or trace_q < 0:
        raise ValueError("K and trace_q must be nonnegative")
    theta = (K**2 / delta) * (1.0 / (2.0 * delta) + trace_q)
    theta_p = (4.0 * K**2 / delta) * (1.0 / delta + trace_q)
    rep = ConstantsReport(K=K, delta=delta, trace_q=trace_q, theta=theta, theta_prime=theta_p)
    for p in p_list:
        p = float(p)
        if p < 2:
            raise ValueError(f"p must be >= 2, got {p}")
        c_p, c_star = novikov_constant(p)
        rep.novikov_c_p[p] = (c_p, c_star)
        rep.theta_prime_p[p] = theta_prime_p(p, K, delta, trace_q, c_p)
    if theta_p < 1:
        rep.moment_bound_l2 = theta_p / (1.0 - theta_p)
    return rep


def _exp_conv(values: np.ndarray, times: np.ndarray, rate: float) -> np.ndarray:
    """``int_{t0}^{t} exp(-rate (t - s)) v(s) ds`` for the piecewise-linear ``v``.

    Product integration on each cell, exact for linear data, so constant
    data are reproduced to rounding.
    """
    out = np.zeros_like(values, dtype=float)
    h = np.diff(times)
    z = rate * h
    e = np.exp(-z)
    with np.errstate(invalid="ignore", divide="ignore"):
        # weights of v_k (left) and v_{k+1} (right) for the cell integral
        w_right = np.where(z > 1e-6, (z - 1.0 + e) / (rate * z), h * (0.5 - z / 6.0 + z * z / 24.0))
        w_total = np.where(z > 1e-6, -np.expm1(-z) / rate, h * (1.0 - z / 2.0 + z * z / 6.0))
    w_left = w_total - w_right
    acc = 0.0
    for k in range(len(h)):
        acc = e[k] * acc + w_left[k] * values[k] + w_right[k] * values[k + 1]
        out[k + 1] = acc
    return out


def gronwall_bound(alpha, times, betas, deltas, gamma: float | None = None, left_tail: float = 0.0) -> np.ndarray:
    """``alpha(t) + beta int_{-inf}^t exp(-gamma (t-s)) alpha(s) ds`` on the grid.

    ``left_tail`` is ``int_{-inf}^{t0} exp(-gamma (t0-s)) alpha(s) ds``; by
    default the grid is assumed long enough for it to vanish. ``gamma``
    defaults to ``min(deltas) - sum(betas)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    times = np.asarray(times, dtype=float)
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    beta = float(betas.sum())
    if np.any(betas < 0):
        raise ValueError("betas must be nonnegative")
    if np.any(deltas <= beta):
        raise ValueError(f"hypothesis violated: every delta_i must exceed beta = {beta}")
    gmax = float(deltas.min()) - beta
    if gamma is None:
        gamma = gmax
    if not 0 < gamma <= gmax * (1 + 1e-12):
        raise ValueError(f"gamma must lie in (0, {gmax}], got {gamma}")
    conv = _exp_conv(alpha, times, gamma) + left_tail * np.exp(-gamma * (times - times[0]))
    return alpha + beta * conv


@dataclass
class GronwallReport:
    hypothesis_holds: bool
    conclusion_holds: bool
    hypothesis_margin: float
    conclusion_margin: float
    worst_hypothesis_index: int
    worst_conclusion_index: int

    def to_dict(self) -> dict:
        return asdict(self)


def check_gronwall_on_curve(g, alpha, times, betas, deltas, gamma: float | None = None,
                            rtol: float = 1e-9) -> GronwallReport:
    """Check the hypothesis and the conclusion of the Gronwall variant on sampled data.

    ``g`` is treated as vanishing before the first grid time. Margins are
    ``min(rhs - g)``; an inequality is reported as holding when its margin
    is at least ``-rtol * max|rhs|``, which absorbs rounding and the
    quadrature error of the convolution.
    """
    g = np.asarray(g, dtype=float)
    times = np.asarray(times, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), g.shape)
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    rhs = alpha.copy()
    for b, dl in zip(betas, deltas):
        rhs = rhs + b * _exp_conv(g, times, dl)
    hyp = np.minimum(rhs - g, g)
    try:
        bound = gronwall_bound(alpha, times, betas, deltas, gamma)
    except ValueError:
        # constants outside the admissible range: no conclusion can be certified
        bound = np.full_like(g, -np.inf)
    conc = bound - g
    hyp_tol = rtol * float(np.max(np.abs(rhs), initial=0.0))
    conc_ok = np.all(np.isfinite(bound)) and conc.min() >= -rtol * float(np.max(np.abs(bound), initial=0.0))
    return GronwallReport(
        hypothesis_holds=bool(hyp.min() >= -hyp_tol),
        conclusion_holds=bool(conc_ok),
        hypothesis_margin=float(hyp.min()),
        conclusion_margin=float(conc.min()),
        worst_hypothesis_index=int(hyp.argmin()),
        worst_conclusion_index=int(conc.argmin()),
    )


@dataclass
class NovikovReport:
    p: float
    lhs: float
    lhs_se: float
    rhs: float
    ratio: float
    ratio_se: float
    c_p: float
    quadratic_variation: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def verify_novikov_mc(
    model: GalerkinModel,
    G: QuasiPeriodicDiffusion,
    x_path,
    p: float,
    t: float,
    N: int,
    seed: int,
    n_steps: int = 200,
    block: int = 4096,
) -> NovikovReport:
    """Monte Carlo check of the moment inequality for ``int_0^t G(s, x(s)) dW(s)``.

    ``x_path`` is a callable ``s -> state`` (or an array of states on the
    ``n_steps`` left endpoints). The integrand is deterministic, so the
    right-hand side is exact given the same Riemann sum.
    """
    h = t / n_steps
    s = np.arange(n_steps) * h
    if callable(x_path):
        xs = np.array([x_path(si) for si in s], dtype=float)
    else:
        xs = np.asarray(x_path, dtype=float)
    if xs.shape != (n_steps, model.state_dim):
        raise ValueError(f"frozen path has shape {xs.shape}, expected {(n_steps, model.state_dim)}")
    w = time_basis(G.frequencies, s)
    blocks = _block_values(G, xs)  # (B, n, d, m)
    Y = np.einsum("nb,bnij->nij", w, blocks)
    q = model.q_eigenvalues
    qv = float(h * np.einsum("nij,nij,j->", Y, Y, q))
    c_p, _ = novikov_constant(p)
    rhs = c_p * qv ** (p / 2.0)

    sums = 0.0
    sq = 0.0
    done = 0
    b = 0
    while done < N:
        nb = min(block, N - done)
        rng = make_rng(substream_seed(seed, b, 7))
        Z = np.zeros((nb, model.state_dim))
        for k in range(n_steps):
            dw = rng.standard_normal((nb, model.noise_dim)) * np.sqrt(h * q)
            Z += dw @ Y[k].T
        val = np.linalg.norm(Z, axis=1) ** p
        sums += val.sum()
        sq += (val**2).sum()
        done += nb
        b += 1
    lhs = sums / N
    var = max(sq / N - lhs**2, 0.0)
    lhs_se = math.sqrt(var / N)
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else math.inf
        ratio_se = 0.0
    else:
        ratio = lhs / rhs
        ratio_se = lhs_se / rhs
    return NovikovReport(p, lhs, lhs_se, rhs, ratio, ratio_se, c_p, qv, N)
