"""Experiment configuration: JSON file plus dotted-key overrides, validated against a fixed schema."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .correlations import EXTRA_MEASURES, MEASURES
from .errors import ConfigError
from .hamiltonian import MODEL_KINDS, GibbsEnsemble, build_potential
from .lattice import build_graph

EXPERIMENTS = ("verify", "scan-clustering", "davies-gap", "mlsi", "mix", "tensorize", "report")
GRAPH_KINDS = ("chain", "bary_tree", "grid2d", "custom")
CHI_KINDS = ("glauber", "metropolis", "exp_half")
COUPLINGS = ("xyz", "x", "z")

DEFAULTS: dict[str, Any] = {
    "experiment": "verify",
    "seed": 0,
    "output_dir": "rapidmix_out",
    "workers": 1,
    "graph": {"kind": "chain", "n": 4, "d": 2},
    "model": {"kind": "ising", "beta": 0.5, "J": 1.0, "g": 0.5},
    "davies": {"chi": "glauber", "couplings": "xyz"},
    "resources": {"max_hilbert_dim": 1024, "max_super_dim": 64, "max_wall_clock": 3600.0},
    "scan": {"ls": [1, 2, 3, 4, 5, 6], "measures": list(MEASURES)},
    "gap": {"sizes": [3, 4, 5]},
    "mlsi": {"sizes": [3, 4, 5], "budget": 30, "n_random": 6},
    "mix": {"eps": [0.01], "n_random": 8, "t_max": 8.0, "steps": 81},
    "tensorize": {"n_states": 3, "restarts": 8, "l0": 2, "c_sizes": [3, 5]},
}

# optional keys that may appear without a default
OPTIONAL = {
    "graph": {"b", "height", "w", "h", "edges"},
    "model": {"seed", "Jx", "Jy", "Jz", "term", "terms"},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base and k not in OPTIONAL.get(path.rstrip("."), set()):
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(base.get(k), dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key!r} must be a mapping")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(tree: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted!r} descends into a scalar")
    node[keys[-1]] = value


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    overrides: tuple[tuple[str, Any], ...] = field(default=())

    def __getitem__(self, key):
        return self.data[key]

    @property
    def kind(self) -> str:
        return self.data["experiment"]

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def graph(self, **replace):
        spec = {**self.data["graph"], **replace}
        kind = spec.pop("kind")
        return build_graph(kind, **spec)

    def ensemble(self, **graph_replace) -> GibbsEnsemble:
        m = dict(self.data["model"])
        kind, beta = m.pop("kind"), m.pop("beta")
        return GibbsEnsemble(build_potential(self.graph(**graph_replace), kind, **m), beta)


def _check_int_list(cfg: dict, section: str, key: str, lo: int) -> None:
    v = cfg[section][key]
    if not isinstance(v, list) or not v or not all(isinstance(x, int) and x >= lo for x in v):
        raise ConfigError(f"{section}.{key} must be a nonempty list of integers >= {lo}")


def validate(cfg: dict) -> None:
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown kind {cfg['experiment']!r}")
    if cfg["graph"]["kind"] not in GRAPH_KINDS:
        raise ConfigError(f"graph.kind: unknown kind {cfg['graph']['kind']!r}")
    if cfg["model"]["kind"] not in MODEL_KINDS:
        raise ConfigError(f"model.kind: unknown kind {cfg['model']['kind']!r}")
    beta = cfg["model"]["beta"]
    if not isinstance(beta, (int, float)) or isinstance(beta, bool) or beta < 0:
        raise ConfigError("model.beta must be a number >= 0")
    if cfg["davies"]["chi"] not in CHI_KINDS:
        raise ConfigError(f"davies.chi: unknown rate function {cfg['davies']['chi']!r}")
    if cfg["davies"]["couplings"] not in COUPLINGS:
        raise ConfigError(f"davies.couplings: unknown preset {cfg['davies']['couplings']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    for k, v in cfg["resources"].items():
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"resources.{k} must be positive")
    bad = [m for m in cfg["scan"]["measures"] if m not in MEASURES + EXTRA_MEASURES]
    if bad:
        raise ConfigError(f"scan.measures: unknown measures {bad}")
    _check_int_list(cfg, "scan", "ls", 1)
    if len(cfg["scan"]["ls"]) < 3:
        raise ConfigError("scan.ls needs at least three distances for a decay fit")
    _check_int_list(cfg, "gap", "sizes", 1)
    _check_int_list(cfg, "mlsi", "sizes", 1)
    _check_int_list(cfg, "tensorize", "c_sizes", 1)
    eps = cfg["mix"]["eps"]
    if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) and 0 < e < 2 for e in eps):
        raise ConfigError("mix.eps must be a nonempty list in (0, 2)")


def parse_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """File (JSON) merged over defaults, then dotted overrides; unknown keys are rejected."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    ov = tuple((overrides or {}).items())
    for k, v in ov:
        apply_override(raw, k, v)
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return ExperimentConfig(cfg, ov)
