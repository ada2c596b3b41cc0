"""Experiment configuration: parsing and validation.

Configs are TOML documents with dotted sections, for example::

    scenario = "mi-derivative"
    channel.lambda = 1.0
    channel.alpha = 1.0
    prior.kind = "scalar"
    prior.atoms = [0.0, 1.0]
    prior.weights = [0.5, 0.5]
    mc.seed = 42

Only ``prior.members`` (a list of per-cell paths) may nest arrays.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCENARIOS = (
    "discrete-estimate", "path-estimate", "mixture-estimate", "mi", "debruijn",
    "mi-derivative", "mixture-derivative", "operator-checks",
)
PRIOR_KINDS = ("scalar", "paths", "constant-sampler", "markov-sampler")

SCHEMA: dict[str, dict[str, type | tuple]] = {
    "channel": {"lambda": (int, float), "alpha": (int, float), "T": (int, float), "M": int},
    "prior": {"kind": str, "atoms": list, "weights": list, "members": list, "low": (int, float),
              "high": (int, float), "rate_up": (int, float), "rate_down": (int, float)},
    "phi": {"mask": str, "runs": str},
    "observation": {"times": list, "increments": list, "member": int, "y_max": int},
    "mc": {"n_outer": int, "n_prior": int, "seed": int, "n_samples": int, "n_instances": int},
    "derivative": {"param": str, "h": (int, float), "atol": (int, float), "fd_scheme": str},
    "output": {"dir": str, "prefix": str},
}

DEFAULTS = {
    "channel": {"lambda": 1.0, "alpha": 1.0, "T": 1.0, "M": 32},
    "mc": {"n_outer": 20000, "n_prior": 8, "seed": 0, "n_samples": 100000, "n_instances": 100},
    "derivative": {"param": "both", "atol": 0.0, "fd_scheme": "importance"},
    "observation": {"y_max": 40},
    "output": {"dir": "out"},
}

NEEDS_PHI = ("mixture-estimate", "mixture-derivative")


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


def load(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"unparseable config: {exc}"]) from exc


def with_defaults(config: dict) -> dict:
    out = {"scenario": config.get("scenario")}
    for section in SCHEMA:
        merged = dict(DEFAULTS.get(section, {}))
        merged.update(config.get(section, {}) or {})
        out[section] = merged
    return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_runs(text: str) -> list[tuple[int, int]]:
    """``"16:0,16:1"`` -> ``[(16, 0), (16, 1)]``."""
    runs = []
    for part in text.split(","):
        n, v = part.strip().split(":")
        runs.append((int(n), int(v)))
    return runs


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(config: dict) -> list[str]:
    """Diagnostics for ``config``; an empty list means it is valid."""
    diags: list[str] = []
    for key in config:
        if key != "scenario" and key not in SCHEMA:
            diags.append(f"{key}: unknown key")
    scenario = config.get("scenario")
    if scenario not in SCENARIOS:
        diags.append(f"scenario: must be one of {', '.join(SCENARIOS)}")
    for section, fields in SCHEMA.items():
        block = config.get(section, {})
        if not isinstance(block, dict):
            diags.append(f"{section}: must be a section")
            continue
        for key, value in block.items():
            if key not in fields:
                diags.append(f"{section}.{key}: unknown key")
            elif isinstance(value, bool) or not isinstance(value, fields[key]):
                diags.append(f"{section}.{key}: wrong type {type(value).__name__}")
    if diags:
        return diags

    cfg = with_defaults(config)
    ch = cfg["channel"]
    if not ch["lambda"] > 0:
        diags.append("channel.lambda: lambda must be positive")
    if not ch["alpha"] > 0:
        diags.append("channel.alpha: alpha must be positive")
    if not ch["T"] > 0:
        diags.append("channel.T: horizon must be positive")
    if ch["M"] < 1:
        diags.append("channel.M: cell count must be at least 1")
    M = ch["M"] if ch["M"] >= 1 else 1

    mc = cfg["mc"]
    for key in ("n_outer", "n_samples"):
        if mc[key] < 2:
            diags.append(f"mc.{key}: must be at least 2")
    for key in ("n_prior", "n_instances"):
        if mc[key] < 1:
            diags.append(f"mc.{key}: must be at least 1")
    if not 0 <= mc["seed"] < 2 ** 64:
        diags.append("mc.seed: must be a 64-bit unsigned integer")

    if scenario != "operator-checks":
        diags += _validate_prior(cfg["prior"], M, scenario)

    phi_values = None
    if scenario in NEEDS_PHI:
        phi_values, d = _validate_phi(cfg["phi"], M)
        diags += d
    elif config.get("phi"):
        diags.append("phi: only used by mixture scenarios")

    obs = cfg["observation"]
    if "times" in obs:
        times = obs["times"]
        if not all(_is_number(t) for t in times):
            diags.append("observation.times: must be numbers")
        elif any(t < 0 or t > ch["T"] for t in times):
            diags.append("observation.times: atoms must lie in [0, T]")
        elif phi_values is not None:
            width = ch["T"] / M
            for t in times:
                j = min(int(t // width), M - 1)
                if phi_values[j] == 0:
                    diags.append(f"observation.times: jump at {t} lies in a cell where phi = 0")
                    break
    if "increments" in obs:
        if scenario != "mixture-estimate":
            diags.append("observation.increments: only used by mixture-estimate")
        elif phi_values is not None and len(obs["increments"]) != phi_values.count(0):
            diags.append("observation.increments: need one value per phi = 0 cell")
    if obs["y_max"] < 0:
        diags.append("observation.y_max: must be non-negative")

    der = cfg["derivative"]
    if der["param"] not in ("alpha", "lambda", "both"):
        diags.append("derivative.param: must be alpha, lambda or both")
    if "h" in der and not der["h"] > 0:
        diags.append("derivative.h: step must be positive")
    if der["atol"] < 0:
        diags.append("derivative.atol: must be non-negative")
    if der["fd_scheme"] not in ("joint", "reference", "importance"):
        diags.append("derivative.fd_scheme: must be joint, reference or importance")
    return diags


def _validate_prior(prior: dict, M: int, scenario) -> list[str]:
    diags = []
    kind = prior.get("kind")
    if kind not in PRIOR_KINDS:
        return [f"prior.kind: must be one of {', '.join(PRIOR_KINDS)}"]
    if scenario == "discrete-estimate" and kind != "scalar":
        diags.append("prior.kind: discrete-estimate needs a scalar prior")
    if kind in ("scalar", "constant-sampler"):
        atoms = prior.get("atoms")
        if not atoms:
            diags.append("prior.atoms: required")
        elif not all(_is_number(a) and a >= 0 for a in atoms):
            diags.append("prior.atoms: must be non-negative numbers")
        diags += _validate_weights(prior.get("weights"), len(atoms or []))
    elif kind == "paths":
        members = prior.get("members")
        if not members:
            diags.append("prior.members: required")
        else:
            for i, m in enumerate(members):
                if not isinstance(m, list) or len(m) != M:
                    diags.append(f"prior.members[{i}]: must list {M} cell values")
                elif not all(_is_number(v) and v >= 0 for v in m):
                    diags.append(f"prior.members[{i}]: values must be non-negative numbers")
            diags += _validate_weights(prior.get("weights"), len(members))
    else:
        for key in ("low", "high", "rate_up", "rate_down"):
            if key not in prior:
                diags.append(f"prior.{key}: required for markov-sampler")
        if not diags:
            if prior["low"] < 0 or prior["high"] < 0:
                diags.append("prior.low/high: levels must be non-negative")
            if prior["rate_up"] <= 0 or prior["rate_down"] <= 0:
                diags.append("prior.rate_up/rate_down: rates must be positive")
    return diags


def _validate_weights(weights, n: int) -> list[str]:
    if weights is None:
        return ["prior.weights: required"]
    if len(weights) != n:
        return [f"prior.weights: {len(weights)} weights for {n} members"]
    if not all(_is_number(w) and w > 0 for w in weights):
        return ["prior.weights: must be positive numbers"]
    if abs(sum(weights) - 1.0) > 1e-9:
        return [f"prior.weights: sum to {sum(weights)!r}, not 1 within 1e-9"]
    return []


def _validate_phi(phi: dict, M: int):
    if ("mask" in phi) == ("runs" in phi):
        return None, ["phi: give exactly one of phi.mask or phi.runs"]
    if "mask" in phi:
        mask = phi["mask"]
        if len(mask) != M or set(mask) - {"0", "1"}:
            return None, [f"phi.mask: must be {M} characters of 0/1"]
        return [int(c) for c in mask], []
    try:
        runs = parse_runs(phi["runs"])
    except ValueError:
        return None, ["phi.runs: expected 'length:value' pairs separated by commas"]
    if any(v not in (0, 1) or n < 0 for n, v in runs) or sum(n for n, _ in runs) != M:
        return None, [f"phi.runs: values must be 0/1 and lengths must sum to {M}"]
    return [v for n, v in runs for _ in range(n)], []
