"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, arrays are comma separated.
Unknown keys and bad values are collected and reported together.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

__all__ = ["ConfigError", "METHODS", "SCHEMA", "format_config", "parse_config", "resolve_config"]

METHODS = ("flowgmm", "flowgmm-cons", "flowgmm-em", "flowgmm-sup",
           "knn", "logreg", "mlp", "pi-model", "spread-rbf", "spread-knn")
FLOW_METHODS = METHODS[:4]
DATASETS = ("two_circles", "pinwheel", "eight_gaussians", "file")

OUT_ENV = "FLOWGMM_OUT"


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class Key:
    kind: str  # str, int, float, bool, ints, floats, count
    default: object
    choices: tuple = ()
    minimum: float | None = None


SCHEMA: dict[str, Key] = {
    # run
    "experiment": Key("str", "run"),
    "method": Key("str", "flowgmm", METHODS),
    "seed": Key("int", 0),
    "out": Key("str", ""),
    # data
    "dataset": Key("str", "pinwheel", DATASETS),
    "n_samples": Key("int", 2030, minimum=2),
    "noise": Key("float", 0.1, minimum=0),
    "n_classes": Key("int", 5, minimum=2),
    "spiral_rate": Key("float", 0.75),
    "radial_std": Key("float", 0.3, minimum=0),
    "tangential_std": Key("float", 0.05, minimum=0),
    "blob_radius": Key("float", 2.0, minimum=0),
    "blob_std": Key("float", 0.2, minimum=0),
    "train_file": Key("str", ""),
    "test_file": Key("str", ""),
    "label_col": Key("str", "-1"),
    "delimiter": Key("str", ","),
    "has_header": Key("bool", True),
    "n_val": Key("int", 0, minimum=0),
    "n_test": Key("int", 1000, minimum=0),
    "n_labeled_per_class": Key("count", None, minimum=1),
    "n_unlabeled": Key("count", None, minimum=0),
    "balance": Key("bool", False),
    "standardize": Key("bool", True),
    # flow model
    "n_layers": Key("int", 5, minimum=1),
    "hidden": Key("int", 512, minimum=1),
    "means_init": Key("str", "random", ("random", "circle", "data")),
    "means_radius": Key("float", 4.0, minimum=0),
    "means_scale": Key("float", 1.0, minimum=0),
    # flow training
    "lr": Key("float", 1e-3, minimum=0),
    "epochs": Key("int", 100, minimum=0),
    "labeled_batch": Key("int", 32, minimum=1),
    "unlabeled_batch": Key("int", 32, minimum=1),
    "labeled_weight": Key("float", 1.0, minimum=0),
    "consistency_weight": Key("float", 1.0, minimum=0),
    "ramp_epochs": Key("int", 100, minimum=0),
    "noise_scale": Key("float", 0.05, minimum=0),
    "eval_every": Key("int", 1, minimum=1),
    "calibrate": Key("bool", False),
    # baselines
    "knn_k": Key("int", 5, minimum=1),
    "knn_metric": Key("str", "l2", ("l2", "sin2")),
    "logreg_lr": Key("float", 1e-2, minimum=0),
    "logreg_epochs": Key("int", 200, minimum=0),
    "mlp_hidden": Key("ints", (512, 512, 512)),
    "mlp_dropout": Key("float", 0.5, minimum=0),
    "mlp_lr": Key("float", 3e-4, minimum=0),
    "mlp_epochs": Key("int", 100, minimum=0),
    "mlp_batch": Key("int", 32, minimum=1),
    "pi_weight": Key("float", 30.0, minimum=0),
    "pi_ramp_epochs": Key("int", 0, minimum=0),
    "spread_alpha": Key("float", 0.9, minimum=0),
    "spread_gamma": Key("float", 10.0, minimum=0),
    "spread_k": Key("int", 10, minimum=1),
    "spread_metric": Key("str", "sin2", ("l2", "sin2")),
    "spread_alphas": Key("floats", ()),
    "spread_gammas": Key("floats", ()),
    "spread_ks": Key("ints", ()),
    # outputs
    "grid_resolution": Key("int", 50, minimum=1),
}


def _parse_value(key: str, entry: Key, text: str):
    text = text.strip()
    kind = entry.kind
    if kind == "str":
        value = text
    elif kind == "int":
        value = int(text)
    elif kind == "float":
        value = float(text)
    elif kind == "bool":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected true/false, got {text!r}")
        value = low in ("true", "1", "yes")
    elif kind == "count":
        value = None if text.lower() in ("all", "") else int(text)
    elif kind in ("ints", "floats"):
        conv = int if kind == "ints" else float
        value = tuple(conv(part) for part in text.split(",") if part.strip()) if text else ()
    else:  # pragma: no cover
        raise AssertionError(kind)
    if entry.choices and value not in entry.choices:
        raise ValueError(f"must be one of {', '.join(map(str, entry.choices))}; got {value!r}")
    if entry.minimum is not None:
        items = value if isinstance(value, tuple) else (value,)
        for v in items:
            if v is not None and v < entry.minimum:
                raise ValueError(f"must be >= {entry.minimum}; got {v!r}")
    return value


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse config text into a dict of explicitly set keys (no defaults)."""
    values, errors = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, text_value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            errors.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _parse_value(key, SCHEMA[key], text_value)
        except ValueError as exc:
            errors.append(f"{source}:{lineno}: {key}: {exc}")
    if errors:
        raise ConfigError(errors)
    return values


def resolve_config(explicit: dict, overrides: dict | None = None) -> dict:
    """Apply defaults and overrides, then run cross-key checks."""
    cfg = {key: entry.default for key, entry in SCHEMA.items()}
    cfg.update(explicit)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    if not cfg["out"]:
        cfg["out"] = os.environ.get(OUT_ENV, "runs")

    errors = []
    if cfg["dataset"] == "file" and not cfg["train_file"]:
        errors.append("dataset = file requires train_file")
    if cfg["dataset"] != "file" and (cfg["train_file"] or cfg["test_file"]):
        errors.append("train_file/test_file are only used with dataset = file")
    if not cfg["experiment"] or any(c in cfg["experiment"] for c in "/\\"):
        errors.append("experiment must be a non-empty name without path separators")
    if not 0 <= cfg["mlp_dropout"] < 1:
        errors.append("mlp_dropout must be in [0, 1)")
    if not 0 <= cfg["spread_alpha"] < 1 or any(not 0 <= a < 1 for a in cfg["spread_alphas"]):
        errors.append("spreading alphas must be in [0, 1)")
    if cfg["method"] == "spread-rbf" and cfg["spread_alphas"] and not cfg["spread_gammas"]:
        errors.append("grid search for spread-rbf needs spread_gammas as well as spread_alphas")
    if cfg["method"] == "spread-knn" and cfg["spread_alphas"] and not cfg["spread_ks"]:
        errors.append("grid search for spread-knn needs spread_ks as well as spread_alphas")
    if cfg["spread_alphas"] and cfg["n_val"] == 0 and cfg["method"].startswith("spread"):
        errors.append("spreading grid search needs n_val > 0")
    if not cfg["mlp_hidden"]:
        errors.append("mlp_hidden needs at least one width")
    if errors:
        raise ConfigError(errors)
    return cfg


def _format_value(value) -> str:
    if value is None:
        return "all"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def format_config(cfg: dict) -> str:
    return "".join(f"{key} = {_format_value(cfg[key])}\n" for key in SCHEMA)
