"""Experiment configuration: YAML tree, dotted overrides, validation, hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from types import SimpleNamespace

import yaml

from .errors import ConfigError

DEFAULTS = {
    "global": {"d": 1, "m": 1.0, "L0": 1.0, "Linf": 2.6, "seed": 0, "workers": 1},
    "fock": {"M": 2.5, "ell": 1.0, "t": 1.0, "trace_M": [4.0, 8.0, 12.0, 16.0, 20.0]},
    "measure": {"kappa": 5.0, "Ts": 0.5, "dt": 0.25, "dl": 0.04, "n_samples": 10000},
    "twopoint": {"k": 0, "t1": -0.5, "t2": 0.5},
    "feynman_kac": {"ell": 1.0, "k": 0, "k2": 0, "t1": 0.0, "t2": 0.0, "n_x": 16,
                    "n_t": 512, "b": 0.05, "n_samples": 4000},
    "vertex": {"eps": 0.5, "T": 0.5, "v": 0.2, "l_stride": 1, "t_stride": 1,
               "n_samples": 2000, "refine": [4, 2, 1]},
    "partition": {"lambdas": [0.0, 0.5, 1.0, 2.0, 4.0], "n_samples": 10000},
    "cauchy": {"schedule": [[1.5, 2.5], [2.5, 4.0], [3.5, 5.0], [4.5, 6.0]],
               "n_samples": 4000},
    "graphs": {"n": 1, "order": 2, "mc": True, "max_intermediate": 2 ** 26},
    "activity": {"n": 1, "graph": "theta", "times": [-0.25, 0.25],
                 "widths": [2.42, 1.21, 1.21], "kappa": None},
    "surfaces": {"graph": "theta", "times": [-0.25, 0.25], "widths": [2.42, 1.21, 1.21],
                 "twists": [], "convention": "mandelstam", "strict_widths": True,
                 "L": 1.0, "beta": 1.0, "h": 0.05, "count": 20, "u0": 0.02,
                 "cutoff": 20.0, "constant": "cones", "richardson": True},
    "conjecture": {"masses": [2.0, 1.5, 1.0], "vs": [0.2, 0.14, 0.1], "dl": 0.02},
    "output": {"dir": "runs/latest"},
}

# keys whose value may be null or change type freely
FREE = {("activity", "kappa"), ("activity", "graph"), ("surfaces", "graph")}


def default_config():
    return copy.deepcopy(DEFAULTS)


def load_yaml(path):
    """Parse a YAML file; syntax errors become ConfigError with line and column."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {where}: {exc.problem}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def merge(base, tree, prefix=()):
    """Overlay ``tree`` on ``base``; unknown keys are collected, not merged."""
    unknown = []
    for key, value in tree.items():
        path = prefix + (key,)
        if key not in base:
            unknown.append(".".join(map(str, path)))
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                unknown.append(".".join(path) + " (expected a section)")
            else:
                unknown.extend(merge(base[key], value, path))
        else:
            base[key] = value
    return unknown


def apply_override(cfg, item):
    """Apply one ``section.key=value`` override; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: cannot parse value") from exc
    node = {}
    tree = node
    for p in parts[:-1]:
        tree[p] = {}
        tree = tree[p]
    tree[parts[-1]] = value
    return merge(cfg, node)


def build(path=None, overrides=(), seed=None, workers=None, out=None):
    """Defaults, then the file, then ``--set`` overrides and dedicated flags."""
    cfg = default_config()
    unknown = merge(cfg, load_yaml(path)) if path else []
    for item in overrides:
        unknown += apply_override(cfg, item)
    if seed is not None:
        cfg["global"]["seed"] = seed
    if workers is not None:
        cfg["global"]["workers"] = workers
    if out is not None:
        cfg["output"]["dir"] = str(out)
    if unknown:
        raise ConfigError([f"unknown key: {k}" for k in unknown])
    return cfg


def field_params(cfg, **changes):
    from .measure import FieldParams
    g, f, m = cfg["global"], cfg["fock"], cfg["measure"]
    kw = dict(d=g["d"], m=g["m"], L0=g["L0"], Linf=g["Linf"], M=f["M"], kappa=m["kappa"],
              Ts=m["Ts"], dt=m["dt"], dl=m["dl"], seed=g["seed"])
    kw.update(changes)
    return FieldParams(**kw)


def vertex_params(cfg, **changes):
    from .interaction import VertexParams
    v = cfg["vertex"]
    kw = dict(eps=v["eps"], T=v["T"], v=v["v"], l_stride=v["l_stride"], t_stride=v["t_stride"])
    kw.update(changes)
    return VertexParams(**kw)


def violations(cfg):
    """Every violated invariant of the configuration, without running anything."""
    from .interaction import VertexParams
    out = []
    for (section, key), default in _leaves(DEFAULTS):
        if (section, key) in FREE:
            continue
        value = cfg[section][key]
        if isinstance(default, bool):
            if not isinstance(value, bool):
                out.append(f"{section}.{key} must be true or false")
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                out.append(f"{section}.{key} must be a number")
            elif isinstance(default, int) and not isinstance(value, int):
                out.append(f"{section}.{key} must be an integer")
            elif not math.isfinite(value):
                out.append(f"{section}.{key} must be finite")
        elif isinstance(default, list) and not isinstance(value, list):
            out.append(f"{section}.{key} must be a list")
        elif isinstance(default, str) and not isinstance(value, str):
            out.append(f"{section}.{key} must be a string")
    if out:
        return out
    field = None
    try:
        field = field_params(cfg)
    except ConfigError as exc:
        out.extend(exc.violations)
    except TypeError as exc:
        out.append(str(exc))
    if field is None:
        # still check the vertex against the raw grid values
        g, m = cfg["global"], cfg["measure"]
        field = SimpleNamespace(L0=g["L0"], Linf=g["Linf"], dl=m["dl"], Ts=m["Ts"], dt=m["dt"])
    vp = VertexParams(**{k: cfg["vertex"][k] for k in ("eps", "T", "v", "l_stride", "t_stride")})
    try:
        out.extend(vp.violations(field))
    except (ZeroDivisionError, ValueError) as exc:
        out.append(f"vertex checks failed on the field grid: {exc}")
    if cfg["global"]["workers"] < 1:
        out.append("global.workers >= 1 required")
    for section in ("measure", "vertex", "partition", "cauchy", "feynman_kac"):
        if cfg[section]["n_samples"] < 1:
            out.append(f"{section}.n_samples >= 1 required")
    if cfg["graphs"]["n"] < 0 or cfg["graphs"]["order"] < 0:
        out.append("graphs.n and graphs.order must be >= 0")
    s = cfg["surfaces"]
    if s["convention"] not in ("mandelstam", "split"):
        out.append("surfaces.convention must be mandelstam or split")
    if s["constant"] not in ("cones", "fit"):
        out.append("surfaces.constant must be cones or fit")
    if not (s["h"] > 0 and s["u0"] > 0 and s["L"] > 0 and s["beta"] > 0):
        out.append("surfaces.h, u0, L and beta must be positive")
    c = cfg["conjecture"]
    for name in ("masses", "vs"):
        seq = c[name]
        if not seq or any(not x > 0 for x in seq) or list(seq) != sorted(seq, reverse=True):
            out.append(f"conjecture.{name} must be positive and decreasing")
    sched = cfg["cauchy"]["schedule"]
    if len(sched) < 2 or any(len(p) != 2 for p in sched):
        out.append("cauchy.schedule must list at least two [M, kappa] pairs")
    return out


def check(cfg):
    bad = violations(cfg)
    if bad:
        raise ConfigError(bad)
    return cfg


def config_hash(cfg):
    """SHA-256 of the canonical JSON form (independent of key order)."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _leaves(tree):
    for section, body in tree.items():
        for key, value in body.items():
            yield (section, key), value


def dump_default(path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(DEFAULTS, fh, sort_keys=False)
