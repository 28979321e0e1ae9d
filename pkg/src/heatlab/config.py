"""Flat ``key = value`` experiment configuration with a typed schema.

Keys are dotted (``grid.n_nodes``, ``hum.epsilon``).  Values are strings,
numbers or booleans; list-valued keys take comma separated numbers.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError

SCENARIOS = ("NonnegSteer", "GlobalNull", "BlowupDemo", "ObservabilitySweep",
             "CarlemanCheck", "SmoothingCheck", "DeltaCalibration")


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, bool, str, floats
    default: object
    check: str = ""  # "pos", "nonneg", "ge3", "ge1" or a |-separated choice list
    doc: str = ""


SCHEMA = {
    "scenario": Key("str", "NonnegSteer", "|".join(SCENARIOS), "experiment tag"),
    "seed": Key("int", 0, "nonneg", "seed for every random draw"),
    "grid.x_a": Key("float", 0.0, "", "left end of the interval"),
    "grid.x_b": Key("float", 1.0, "", "right end of the interval"),
    "grid.n_nodes": Key("int", 101, "ge3", "number of nodes"),
    "grid.bc": Key("str", "neumann", "neumann|dirichlet", "boundary condition"),
    "window.omega_lo": Key("float", 0.3, "", "left end of omega"),
    "window.omega_hi": Key("float", 0.7, "", "right end of omega"),
    "window.omega0_lo": Key("float", 0.45, "", "left end of omega0 (Carleman weight)"),
    "window.omega0_hi": Key("float", 0.55, "", "right end of omega0"),
    "time.T": Key("float", 1.0, "pos", "control horizon"),
    "time.tau": Key("float", 2.5e-3, "pos", "time step"),
    "potential.M": Key("float", 0.0, "nonneg", "constant potential a = -M"),
    "data.kind": Key("str", "const", "const|sin|cos|bump", "initial datum shape"),
    "data.amplitude": Key("float", -1.0, "", "initial datum amplitude"),
    "data.mode": Key("float", 3.0, "", "frequency for sin/cos data, width for bump"),
    "nonlinearity.family": Key("str", "odd_log", "odd_log|abs_log|integral_log|power|zero", "f family"),
    "nonlinearity.sigma": Key("int", 1, "-1|1", "sign"),
    "nonlinearity.alpha": Key("float", 1.8, "pos", "log exponent"),
    "nonlinearity.c": Key("float", 2.0, "ge1", "log shift"),
    "hum.epsilon": Key("float", 1e-3, "pos", "penalty"),
    "hum.eps_list": Key("floats", (), "pos", "several penalties (NonnegSteer)"),
    "hum.max_iterations": Key("int", 20000, "ge1", "iterations per continuation stage"),
    "hum.tol": Key("float", 1e-12, "pos", "relative stop tolerance"),
    "pipeline.T1": Key("float", 1.0, "pos", "end of phase 1"),
    "pipeline.delta": Key("float", 0.05, "pos", "target radius of phase 2"),
    "pipeline.eps_final": Key("float", 1e-5, "pos", "phase-3 penalty"),
    "pipeline.horizon3": Key("float", 1.0, "pos", "phase-3 length"),
    "pipeline.tau": Key("float", 1e-3, "pos", "pipeline time step"),
    "pipeline.picard_tol": Key("float", 1e-10, "pos", "relative Picard tolerance"),
    "pipeline.picard_max": Key("int", 40, "ge1", "Picard iteration cap"),
    "pipeline.scale_check": Key("float", 0.0, "nonneg", "rerun with data times this factor (0 = off)"),
    "blowup.horizon": Key("float", 1.0, "pos", "simulation horizon"),
    "blowup.tau": Key("float", 1e-5, "pos", "time step of the free run"),
    "blowup.threshold": Key("float", 1e250, "pos", "sup-norm escape level"),
    "blowup.controlled": Key("bool", True, "", "also run the steered companion"),
    "blowup.control_tau": Key("float", 1e-3, "pos", "time step of the companion"),
    "carleman.lambda": Key("float", 1.0, "ge1", "weight parameter"),
    "carleman.C_geom": Key("float", 1.0, "pos", "geometric constant in s1"),
    "carleman.n_samples": Key("int", 20, "ge1", "ensemble size"),
    "carleman.n_steps": Key("int", 400, "ge1", "time steps of the adjoint solves"),
    "carleman.a_values": Key("floats", (0.0, -10.0, -100.0), "", "constant potentials"),
    "carleman.s_factors": Key("floats", (1.0, 2.0, 4.0), "pos", "s / s1 values"),
    "observability.M_values": Key("floats", (0.0, 4.0, 16.0, 64.0, 256.0), "nonneg", "potential amplitudes"),
    "observability.restarts": Key("int", 8, "nonneg", "random starts"),
    "observability.min_steps": Key("int", 400, "ge1", "minimum time steps per point"),
    "smoothing.t_lo": Key("float", 1e-3, "pos", "fit window start"),
    "smoothing.t_hi": Key("float", 1e-1, "pos", "fit window end"),
    "smoothing.n_samples": Key("int", 9, "ge3", "fit points"),
    "delta_cal.lo": Key("float", 1e-3, "pos", "bisection lower radius"),
    "delta_cal.hi": Key("float", 10.0, "pos", "bisection upper radius"),
    "delta_cal.iters": Key("int", 8, "ge1", "bisection steps"),
}


def _parse_scalar(kind, text, key):
    t = text.strip()
    try:
        if kind == "int":
            v = float(t)
            if not v.is_integer():
                raise ValueError
            return int(v)
        if kind == "float":
            return float(t)
        if kind == "bool":
            low = t.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if kind == "floats":
            return tuple(float(p) for p in t.split(",") if p.strip())
        return t
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {text!r} as {kind}") from None


def _check(key, spec, value):
    vals = value if spec.kind == "floats" else (value,)
    for v in vals:
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigurationError(f"{key}: value must be finite")
        c = spec.check
        bad = ((c == "pos" and not v > 0) or (c == "nonneg" and not v >= 0)
               or (c == "ge3" and not v >= 3) or (c == "ge1" and not v >= 1))
        if "|" in c and str(v) not in c.split("|"):
            bad = True
        if bad:
            raise ConfigurationError(f"{key}: invalid value {v!r} ({c})")


class Config(dict):
    """Mapping from dotted key to typed value, every schema key present."""

    def echo(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.items())}


def parse_text(text):
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value")
        k, v = (p.strip() for p in line.split("=", 1))
        raw[k] = v
    return raw


def build_config(raw, overrides=None):
    """Typed, validated config from raw strings (file) plus overrides."""
    merged = dict(raw)
    merged.update(overrides or {})
    cfg = Config()
    for key in merged:
        if key not in SCHEMA:
            raise ConfigurationError(f"{key}: unknown key")
    for key, spec in SCHEMA.items():
        if key in merged:
            v = merged[key]
            value = _parse_scalar(spec.kind, v, key) if isinstance(v, str) else v
            if spec.kind == "floats" and not isinstance(value, tuple):
                value = tuple(value) if isinstance(value, (list, tuple)) else (float(value),)
            if spec.kind == "float" and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
        else:
            value = spec.default
        _check(key, spec, value)
        cfg[key] = value
    return cfg


def load_config(path, overrides=None):
    text = Path(path).read_text()
    return build_config(parse_text(text), overrides)


def dump_config(cfg):
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
