import numpy as np
import pytest

from stochavg import kernels
from stochavg.coefficients import QuasiPeriodicDiffusion, QuasiPeriodicDrift
from stochavg.hilbert import GalerkinModel

# criterion number -> list of (part, passed, detail), filled by test_acceptance
ACCEPTANCE = {}

BACKENDS = ["numpy"] + (["cython"] if kernels._compiled is not None else [])


def acceptance_lines():
    lines = []
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({info})" for name, ok, info in parts)
        lines.append(f"criterion {n:2d}: {verdict}: {detail}")
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_drift(rng, d, freqs=(1.0, 2**0.5), scale=0.1):
    modes = [
        dict(
            frequency=w,
            cos_matrix=scale * rng.standard_normal((d, d)),
            cos_vector=scale * rng.standard_normal(d),
            sin_matrix=scale * rng.standard_normal((d, d)),
            sin_vector=scale * rng.standard_normal(d),
        )
        for w in freqs
    ]
    return QuasiPeriodicDrift.from_modes(scale * rng.standard_normal((d, d)), scale * rng.standard_normal(d), modes)


def random_diffusion(rng, d, m, freqs=(1.0, 3**0.5), scale=0.1, linear=True):
    def blk():
        out = {"const": scale * rng.standard_normal((d, m))}
        if linear:
            out["linear"] = scale * rng.standard_normal((d, m, d))
        return out

    modes = []
    for w in freqs:
        c, s = blk(), blk()
        e = {"frequency": w, "cos_const": c["const"], "sin_const": s["const"]}
        if linear:
            e["cos_linear"], e["sin_linear"] = c["linear"], s["linear"]
        modes.append(e)
    b = blk()
    return QuasiPeriodicDiffusion.from_modes(b["const"], b.get("linear"), modes)


@pytest.fixture
def model3():
    return GalerkinModel([1.0, 1.5, 2.0], [1.0, 0.5])
