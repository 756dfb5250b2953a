"""Experiment configuration: strict JSON loading, semantic checks and report output."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import compute_constants
from .coefficients import QuasiPeriodicDiffusion, QuasiPeriodicDrift, equation_constant
from .hilbert import GalerkinModel, stable_hash
from .solver import NoContraction, SolverConfig, burn_in_length, make_solver_config

PACKAGE_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Configuration problems; ``errors`` lists every ``(path, message)`` found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


def schema() -> dict:
    with resources.files("stochavg").joinpath("data/config.schema.json").open() as fh:
        return json.load(fh)


def corpus_path(name: str) -> Path:
    """Path of a configuration shipped with the package, e.g. ``"reference"``."""
    p = resources.files("stochavg").joinpath(f"data/configs/{name}.json")
    if not p.is_file():
        raise FileNotFoundError(f"no corpus configuration named {name!r}")
    return Path(str(p))


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _schema_errors(raw) -> list:
    validator = jsonschema.Draft202012Validator(schema())
    errors = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        errors.append((_json_path(err.absolute_path), err.message))
    return errors


def _shape(x):
    return np.asarray(x, dtype=float).shape


def _semantic_errors(raw: dict) -> list:
    errs = []
    d = len(raw["model"]["generator_eigenvalues"])
    m = len(raw["model"]["q_eigenvalues"])

    def want(path, value, shape):
        try:
            got = _shape(value)
        except ValueError:
            errs.append((path, "ragged array"))
            return
        if got != shape:
            errs.append((path, f"has shape {got}, expected {shape}"))

    dr = raw["drift"]
    want("$.drift.base_matrix", dr["base_matrix"], (d, d))
    if "base_vector" in dr:
        want("$.drift.base_vector", dr["base_vector"], (d,))
    for j, md in enumerate(dr.get("modes", [])):
        for key, shape in (("cos_matrix", (d, d)), ("sin_matrix", (d, d)), ("cos_vector", (d,)), ("sin_vector", (d,))):
            if key in md:
                want(f"$.drift.modes[{j}].{key}", md[key], shape)
    df = raw["diffusion"]
    blocks = [("$.diffusion.base", df["base"])]
    blocks += [(f"$.diffusion.modes[{j}].{k}", md[k]) for j, md in enumerate(df.get("modes", [])) for k in ("cos", "sin") if k in md]
    for path, blk in blocks:
        if "const" in blk:
            want(path + ".const", blk["const"], (d, m))
        if "linear" in blk:
            want(path + ".linear", blk["linear"], (d, m, d))
    if "const" not in df["base"]:
        errs.append(("$.diffusion.base", "'const' is required"))
    for name, section in (("drift", dr), ("diffusion", df)):
        freqs = [md["frequency"] for md in section.get("modes", [])]
        if len(set(freqs)) != len(freqs):
            errs.append((f"$.{name}.modes", f"frequencies must be pairwise distinct, got {freqs}"))

    ladder = raw["eps_ladder"]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        errs.append(("$.eps_ladder", f"must be strictly decreasing, got {ladder}"))
    a, b = raw["window"]
    if not a < b:
        errs.append(("$.window", f"must satisfy a < b, got {raw['window']}"))
    if "x0" in raw:
        want("$.x0", raw["x0"], (d,))
    cont = raw.get("continuity")
    if cont:
        s = cont["scales"]
        if any(y >= x for x, y in zip(s, s[1:])):
            errs.append(("$.continuity.scales", f"must be strictly decreasing, got {s}"))
        dd = cont["drift_direction"]
        if "matrix" in dd:
            want("$.continuity.drift_direction.matrix", dd["matrix"], (d, d))
        if "vector" in dd:
            want("$.continuity.drift_direction.vector", dd["vector"], (d,))
    conv = raw.get("convolution")
    if conv:
        if not conv["t"] > 0:
            errs.append(("$.convolution.t", f"must be positive, got {conv['t']}"))
        cur = conv.get("curve")
        if cur:
            want("$.convolution.curve.constant", cur["constant"], (d,))
            k = len(cur.get("frequencies", []))
            for key in ("cos", "sin"):
                if key in cur:
                    want(f"$.convolution.curve.{key}", cur[key], (k, d))
    return errs


def _diffusion_modes(modes):
    out = []
    for md in modes:
        e = {"frequency": md["frequency"]}
        for kind in ("cos", "sin"):
            for part in ("const", "linear"):
                if part in md.get(kind, {}):
                    e[f"{kind}_{part}"] = md[kind][part]
        out.append(e)
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment configuration.

    ``raw`` is the canonical JSON form; every other field is derived from it.
    """

    raw: dict
    model: GalerkinModel
    drift: QuasiPeriodicDrift
    diffusion: QuasiPeriodicDiffusion
    eps_ladder: tuple
    window: tuple
    n_paths: int
    n_grid: int
    max_step: float
    points_per_period: int
    burn_in_tol: float
    master_seed: int
    output_dir: str
    x0: np.ndarray | None = None
    sections: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def digest(self) -> str:
        return stable_hash(self.raw)

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "ExperimentConfig":
        raw = self.to_dict()
        if seed is not None:
            raw["master_seed"] = int(seed)
        if out is not None:
            raw["output_dir"] = str(out)
        return config_from_dict(raw)

    @property
    def K(self) -> float:
        return equation_constant(self.drift, self.diffusion)

    def constants(self, p_list=(2.0,)):
        return compute_constants(self.K, self.model.delta, self.model.trace_q, p_list)

    def require_contraction(self):
        """Return the constants, or raise :class:`NoContraction` when ``theta' >= 1``."""
        c = self.constants()
        if c.theta_prime >= 1:
            raise NoContraction(f"theta' = {c.theta_prime:.6g} >= 1 (K = {c.K:.6g}); the averaging hypothesis fails")
        return c

    def burn_in(self) -> float:
        return burn_in_length(self.model, self.require_contraction(), self.burn_in_tol)

    def solver_config(self, eps: float, burn_in: float, window=None, drift=None, diffusion=None) -> SolverConfig:
        return make_solver_config(
            eps,
            self.window if window is None else window,
            self.n_grid,
            self.drift if drift is None else drift,
            self.diffusion if diffusion is None else diffusion,
            self.max_step,
            burn_in,
            self.master_seed,
            self.points_per_period,
        )


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` against the schema and the semantic rules, then build."""
    errors = _schema_errors(raw)
    if errors:
        raise ConfigError(errors)
    errors = _semantic_errors(raw)
    if errors:
        raise ConfigError(errors)
    raw = copy.deepcopy(raw)
    try:
        model = GalerkinModel.from_dict(raw["model"])
        dr = raw["drift"]
        drift = QuasiPeriodicDrift.from_modes(dr["base_matrix"], dr.get("base_vector"), dr.get("modes", []))
        df = raw["diffusion"]
        diffusion = QuasiPeriodicDiffusion.from_modes(
            df["base"]["const"], df["base"].get("linear"), _diffusion_modes(df.get("modes", []))
        )
    except ValueError as exc:
        raise ConfigError([("$", str(exc))]) from exc
    step = raw["step"]
    return ExperimentConfig(
        raw=raw,
        model=model,
        drift=drift,
        diffusion=diffusion,
        eps_ladder=tuple(float(e) for e in raw["eps_ladder"]),
        window=tuple(float(v) for v in raw["window"]),
        n_paths=int(raw["n_paths"]),
        n_grid=int(raw["n_grid"]),
        max_step=float(step["max_step"]),
        points_per_period=int(step.get("points_per_period", 20)),
        burn_in_tol=float(raw["burn_in_tol"]),
        master_seed=int(raw["master_seed"]),
        output_dir=raw["output_dir"],
        x0=np.asarray(raw["x0"], dtype=float) if "x0" in raw else None,
        sections={k: raw[k] for k in ("continuity", "convolution", "novikov", "gronwall", "gaussian_check") if k in raw},
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([("$", f"cannot read {path}: {exc.strerror}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")]) from exc
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


def source_digest() -> str:
    """Hash of the package sources, standing in for a VCS revision."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(list(root.glob("*.py")) + list(root.glob("*.pyx"))):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config_hash": cfg.digest(),
        "master_seed": cfg.master_seed,
        "package_version": PACKAGE_VERSION,
        "source_hash": source_digest(),
    }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def emit_report(report: dict, out_dir) -> list:
    """Write ``<kind>.json`` and one ``<kind>_<table>.csv`` per table.

    ``report["tables"]`` maps a table name to ``{"columns": [...], "rows": [...]}``.
    Output is a pure function of the report, so identical runs give
    byte-identical files.
    """
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    kind = report["kind"]
    written = []
    path = out / f"{kind}.json"
    with open(path, "w") as fh:
        json.dump(_plain(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    for name, table in report.get("tables", {}).items():
        path = out / f"{kind}_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table["columns"])
            for row in table["rows"]:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        written.append(path)
    return written
