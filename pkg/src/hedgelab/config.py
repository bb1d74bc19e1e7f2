"""JSON experiment configs (strict, schema-driven) and byte-stable CSV output."""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .harness import ExperimentConfig, build_surface
from .market_model import ModelSpec
from .pricing import PayoffSpec
from .strategies import CostSpec, StrategySpec, check_time_step


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("hedgelab").joinpath("schema.json").read_text())


_TYPES = {
    "number": (int, float),
    "integer": (int,),
    "string": (str,),
    "array": (list,),
    "object": (dict,),
    "boolean": (bool,),
}


def _check_type(name, value, spec):
    kinds = spec.get("type")
    if kinds is None:
        return
    kinds = [kinds] if isinstance(kinds, str) else kinds
    if value is None and "null" in kinds:
        return
    ok = any(
        isinstance(value, _TYPES[k]) and not (k in ("number", "integer") and isinstance(value, bool))
        for k in kinds if k != "null"
    )
    if not ok:
        raise ConfigError(f"{name} must be of type {'/'.join(kinds)}")
    if "enum" in spec and value not in spec["enum"]:
        raise ConfigError(f"{name} must be one of {spec['enum']}")
    if value is not None and "minimum" in spec and value < spec["minimum"]:
        raise ConfigError(f"{name} must be at least {spec['minimum']}")
    if value is not None and "minimum_exclusive" in spec and not value > spec["minimum_exclusive"]:
        raise ConfigError(f"{name} must be positive")


def _tagged(name, value, spec) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be an object")
    key = spec["discriminator"]
    kind = value.get(key)
    if kind not in spec["variants"]:
        raise ConfigError(f"{name}.{key} must be one of {sorted(spec['variants'])}")
    variant = spec["variants"][kind]
    allowed = {key, *variant["required"], *variant["defaults"]}
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {', '.join(unknown)}")
    missing = [k for k in variant["required"] if k not in value]
    if missing:
        raise ConfigError(f"missing keys in {name}: {', '.join(missing)}")
    out = {key: kind}
    for k in variant["required"]:
        out[k] = value[k]
    for k, default in variant["defaults"].items():
        out[k] = value.get(k, default)
    return out


def normalize(doc: dict, schema: dict | None = None) -> dict:
    """Validate ``doc`` and fill every default; raises ConfigError."""
    schema = schema or load_schema()
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    props = schema["properties"]
    unknown = sorted(set(doc) - set(props))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    missing = [k for k in schema["required"] if k not in doc]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    out = {}
    for name, spec in props.items():
        if "discriminator" in spec:
            out[name] = _tagged(name, doc[name], spec)
            continue
        value = doc.get(name, copy.deepcopy(spec.get("default")))
        _check_type(name, value, spec)
        out[name] = value
    for part in ("model", "payoff", "strategy"):
        for k, v in out[part].items():
            if k != "kind" and isinstance(v, (int, float)) and not isinstance(v, bool) and not np.isfinite(v):
                raise ConfigError(f"{part}.{k} must be finite")
    if out["strategy"].get("alpha") is None and "alpha" in out["strategy"]:
        out["strategy"]["alpha"] = out["alpha"]
    if len(out["pde_nodes"]) != 2:
        raise ConfigError("pde_nodes must hold two node counts")
    return out


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _model(d: dict) -> ModelSpec:
    if d["kind"] == "black_scholes":
        return ModelSpec.black_scholes(d["s0"], d["horizon"], d["v"], d["mu"])
    return ModelSpec.cev(d["s0"], d["horizon"], d["v"], d["beta"], d["mu"])


def _payoff(d: dict) -> PayoffSpec:
    if d["kind"] in ("call", "put"):
        return getattr(PayoffSpec, d["kind"])(d["strike"])
    return getattr(PayoffSpec, d["kind"])()


def _strategy(d: dict) -> StrategySpec:
    kind = d["kind"]
    if kind in ("leland_equidistant", "hitting_time", "alpha_to_zero"):
        return StrategySpec(kind, alpha=float(d["alpha"]))
    if kind == "reflected_control":
        return StrategySpec(kind, eps=float(d["eps"]), continuity_correction=bool(d["continuity_correction"]))
    a_val = float(d["a"])
    if not a_val > 0:
        raise ConfigError("strategy.a must be positive")
    return StrategySpec(kind, a=lambda s, t, _a=a_val: _a, n=int(d["n"]))


@dataclass
class LoadedConfig:
    document: dict
    experiment: ExperimentConfig

    @property
    def canonical(self) -> str:
        return canonical_json(self.document)


def build_experiment(doc: dict) -> ExperimentConfig:
    try:
        cost = CostSpec(float(doc["kappa"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        return ExperimentConfig(
            model=_model(doc["model"]),
            payoff=_payoff(doc["payoff"]),
            alpha=float(doc["alpha"]),
            cost=cost,
            strategy=_strategy(doc["strategy"]),
            n_paths=int(doc["n_paths"]),
            n_steps=doc["n_steps"],
            seed=int(doc["seed"]),
            pde_nodes=tuple(int(v) for v in doc["pde_nodes"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, check_steps: bool = True) -> LoadedConfig:
    """Parse a JSON config; unknown keys and missing required keys are errors.

    With ``check_steps`` an explicit ``n_steps`` for a band strategy is
    checked against the resolution rule, and the error names the minimum.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from None
    doc = normalize(raw)
    exp = build_experiment(doc)
    if check_steps and exp.n_steps is not None and exp.strategy.kind in ("reflected_control", "optimal_family"):
        try:
            check_time_step(exp.model.horizon / exp.n_steps, build_surface(exp), exp.cost, exp.strategy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return LoadedConfig(doc, exp)


def load_config(path) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# output


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(records, fields, path) -> Path:
    """Write ``records`` (dicts or sequences) with a fixed column order."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for rec in records:
                row = [rec[f] for f in fields] if isinstance(rec, dict) else list(rec)
                w.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    return v


def emit_json(doc: dict, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path
