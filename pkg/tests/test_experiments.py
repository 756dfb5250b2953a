import json
import math

import numpy as np
import pytest

from stochavg import experiments as E
from stochavg.coefficients import QuasiPeriodicDiffusion, QuasiPeriodicDrift
from stochavg.config import ConfigError, config_from_dict, corpus_path
from stochavg.hilbert import GalerkinModel


def cfg_from(name, **kw):
    r = json.loads(corpus_path(name).read_text())
    r.update(kw)
    return config_from_dict(r)


def test_ladder_verdict_rules():
    assert E.ladder_verdict([5, 3, 2, 1], 1.0)["pass"]
    v = E.ladder_verdict([5, 3, 1.5, 1.8, 1.2], 1.0)
    assert v["pass"] and v["inversions"] == [3]
    assert not E.ladder_verdict([5, 2.0, 2.5, 1.2], 1.0)["pass"]  # inversion above 2x baseline
    assert not E.ladder_verdict([5, 1.0, 1.1, 0.9, 1.0], 1.0)["pass"]  # two inversions
    v = E.ladder_verdict([5, 4, 3, 2], 1.0)
    assert v["monotone_ok"] and not v["final_ok"]
    assert E.ladder_verdict([1.0], 0.0)["final_over_baseline"] == math.inf


def test_simulate_writes_ensembles(tmp_path):
    cfg = cfg_from("ou", n_paths=8)
    rep = E.run_simulate(cfg, out_dir=tmp_path)
    assert rep["verdict"] == "PASS"
    for eps in cfg.eps_ladder + (0.0,):
        assert (tmp_path / f"ensemble_eps_{eps:g}.csv").exists()
        assert (tmp_path / f"ensemble_eps_{eps:g}.bin").exists()


def test_average_check_on_reference():
    rep = E.run_average_check(cfg_from("reference"), n_periods=1e3)
    assert rep["verdict"] == "PASS"
    assert rep["summary"]["noise_mode"] == "auxiliary"


def test_continuity_schedule_of_identical_members():
    cfg = cfg_from("reference", n_paths=32)
    rep = E.run_coefficient_continuity(cfg, scales=[0.0, 0.0, 0.0])
    w = [r[2] for r in rep["tables"]["schedule"]["rows"]]
    assert w[0] == w[1] == w[2]


def test_continuity_requires_shared_constant():
    r = json.loads(corpus_path("reference").read_text())
    r["continuity"]["shared_K"] = 0.01
    r["n_paths"] = 8
    with pytest.raises(ConfigError, match="shared"):
        E.run_coefficient_continuity(config_from_dict(r))


def _scalar_cos(omega=1.0):
    model = GalerkinModel([1.0], [1.0])
    F = QuasiPeriodicDrift.from_modes([[0.0]], [0.0], [dict(frequency=omega, cos_vector=[1.0])])
    G = QuasiPeriodicDiffusion.constant([[0.0]])
    return model, F, G


def test_convolution_error_matches_closed_form():
    model, F, G = _scalar_cos(2.0)
    curve = E.TrigCurve([0.0])
    eps, t, n = 0.05, 1.0, 40_000
    err, gerr = E._convolution_errors(model, F, G, curve, 0.0, t, eps, n)
    k = 2.0 / eps
    u = np.linspace(0, t, n + 1)
    exact = (np.cos(k * u) + k * np.sin(k * u) - np.exp(-u)) / (1 + k * k)
    assert err == pytest.approx(np.abs(exact).max(), rel=1e-5)
    assert gerr == 0.0
    bF, bG = E.convolution_tail_bounds(model, F, G, curve, 0.0, t, eps)
    assert bF == pytest.approx(3 * eps / 2.0, rel=1e-12)
    assert err <= bF and bG == 0.0


def test_convolution_halving_on_scalar_mode():
    model, F, G = _scalar_cos()
    rep = E.run_convolution_average_check(model, F, G, {"constant": [0.3]}, 0.0, 1.0, [0.2, 0.1, 0.05, 0.025])
    assert rep["verdict"] == "PASS"
    for r in rep["summary"]["drift_ratios"]:
        assert 0.3 <= r <= 0.7


def test_convolution_without_oscillation_is_zero():
    model = GalerkinModel([1.0, 2.0], [1.0])
    F = QuasiPeriodicDrift.from_modes(np.eye(2) * 0.1, [1.0, 0.0])
    G = QuasiPeriodicDiffusion.constant([[1.0], [0.5]])
    rep = E.run_convolution_average_check(model, F, G, E.TrigCurve([1.0, 1.0], [1.0], [[0.5, 0.0]]), 0.0, 1.0,
                                          [0.1, 0.05])
    rows = rep["tables"]["errors"]["rows"]
    assert all(r[2] == 0.0 and r[5] == 0.0 for r in rows)
    assert rep["verdict"] == "PASS"
    with pytest.raises(ValueError):
        E.run_convolution_average_check(model, F, G, E.TrigCurve([0.0, 0.0]), 0.0, 0.0, [0.1])


def test_trig_curve_derivative():
    c = E.TrigCurve([1.0, 2.0], [1.0, 3.0], [[1.0, 0.0], [0.0, 2.0]], [[0.0, 1.0], [0.5, 0.0]])
    s = np.linspace(0, 2, 11)
    h = 1e-6
    np.testing.assert_allclose(c.derivative(s), (c(s + h) - c(s - h)) / (2 * h), atol=1e-8)


def test_stationarity_pass_and_negative_control():
    cfg = cfg_from("ou", n_paths=400)
    assert E.run_stationarity_check(cfg, n_boot=100)["verdict"] == "PASS"
    bad = E.run_stationarity_check(cfg, burn_in=0.0, x0=[3.0], n_boot=100)
    assert bad["verdict"] == "FAIL"


def test_stationarity_of_a_deterministic_fixed_point():
    r = json.loads(corpus_path("ou").read_text())
    r["diffusion"]["base"]["const"] = [[0.0]]
    r["n_paths"] = 4
    rep = E.run_stationarity_check(config_from_dict(r), n_boot=10)
    assert rep["verdict"] == "PASS"


def test_gronwall_needs_model_noise_for_averaged_equation():
    with pytest.raises(ConfigError, match="noise modes"):
        E.run_gronwall_check(cfg_from("reference", n_paths=8))


def test_check_constants_requirements():
    cfg = cfg_from("reference")
    rep = E.run_check_constants(cfg, (2.0, 3.0))
    assert rep["verdict"] == "PASS"
    assert [r[0] for r in rep["tables"]["moments"]["rows"]] == [2.0, 3.0]


def test_gaussian_abs_moment():
    assert E.gaussian_abs_moment(2.0) == pytest.approx(1.0)
    assert E.gaussian_abs_moment(4.0) == pytest.approx(3.0)
    assert E.gaussian_abs_moment(1.0) == pytest.approx(math.sqrt(2 / math.pi))
