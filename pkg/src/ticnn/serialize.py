"""CSV tensors, YAML run configs and JSON-lines reports.

CSV grammar: one matrix row per line, comma-separated decimal floats written
with ``repr`` (shortest round-trip form), no header. A rank-3 tensor starts
with ``# shape: c,h,w`` and stores its ``c`` row blocks separated by one blank
line.
"""
from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .tensor import Tolerance
from .verify import CampaignConfig


class ConfigError(ValueError):
    pass


def format_csv(t) -> str:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in t)
    if t.ndim == 3:
        blocks = [format_csv(m) for m in t]
        return f"# shape: {','.join(str(s) for s in t.shape)}\n" + "\n".join(blocks)
    raise ValueError(f"CSV holds rank-2 or rank-3 tensors, got rank {t.ndim}")


def parse_csv(text: str) -> np.ndarray:
    lines = text.splitlines()
    shape = None
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)[1:].strip()
        if not head.startswith("shape:"):
            raise ValueError(f"unrecognised comment line {head!r}")
        shape = tuple(int(s) for s in head[len("shape:"):].split(","))
    blocks, cur = [], []
    for i, line in enumerate(lines):
        if not line.strip():
            if cur:
                blocks.append(cur)
                cur = []
            continue
        try:
            cur.append([float(x) for x in line.split(",")])
        except ValueError:
            raise ValueError(f"line {i + 1}: not a row of numbers: {line!r}") from None
    if cur:
        blocks.append(cur)
    if not blocks:
        raise ValueError("empty CSV")
    widths = {len(r) for b in blocks for r in b}
    if len(widths) != 1 or len({len(b) for b in blocks}) != 1:
        raise ValueError("ragged CSV rows or blocks")
    arr = np.array(blocks, dtype=np.float64)
    if shape is None:
        if len(blocks) != 1:
            raise ValueError("multiple blocks need a '# shape: c,h,w' header")
        return arr[0]
    if arr.shape != shape:
        raise ValueError(f"declared shape {shape} but read {arr.shape}")
    return arr


def read_csv(path) -> np.ndarray:
    return parse_csv(Path(path).read_text())


def write_csv(path, t) -> None:
    Path(path).write_text(format_csv(t))


# -- config ------------------------------------------------------------------

SECTIONS = {
    "schema_version": None,
    "seed": None,
    "tolerance": {"atol", "rtol"},
    "campaign": {f.name for f in fields(CampaignConfig)} - {"seed", "tolerance"},
    "verify": {"variants"},
    "equiv": {"linear_trials", "distinct_trials", "distinct_threshold", "distinct_fraction"},
    "train": {"variant", "steps", "learning_rate", "loss", "samples", "side", "family", "grad_check"},
    "ambiguity": {"pattern", "side", "rule", "family"},
}
GEOMETRY_KEYS = {"side", "channels", "nodes", "layers"}
LAYER_KEYS = {"kernel", "out_channels", "stride", "activation", "pooling"}


def validate_config(doc) -> dict:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if doc.get("schema_version") != 1:
        raise ConfigError("config needs 'schema_version: 1'")
    for key, value in doc.items():
        if key not in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        allowed = SECTIONS[key]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        extra = set(value) - allowed
        if extra:
            raise ConfigError(f"unknown key(s) in {key!r}: {', '.join(sorted(extra))}")
    geom = doc.get("campaign", {}).get("geometry")
    if geom is not None:
        if not isinstance(geom, dict) or set(geom) - GEOMETRY_KEYS or "side" not in geom or "layers" not in geom:
            raise ConfigError(f"campaign.geometry needs keys side, layers (optional channels, nodes)")
        for i, layer in enumerate(geom["layers"]):
            extra = set(layer) - LAYER_KEYS
            if extra or "kernel" not in layer:
                raise ConfigError(f"campaign.geometry.layers[{i}]: bad keys {sorted(extra) or 'missing kernel'}")
    return doc


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return validate_config(doc)


def campaign_config(doc: dict, *, seed=None, trials=None, family=None, tolerance=None) -> CampaignConfig:
    kw = dict(doc.get("campaign", {}))
    tol = dict(doc.get("tolerance", {}))
    if tolerance is not None:
        tol["atol"] = tolerance
    kw["tolerance"] = Tolerance(**tol)
    kw["seed"] = doc.get("seed", 0) if seed is None else seed
    if trials is not None:
        kw["trials"] = trials
    if family is not None:
        kw["families"] = (family,)
    for key in ("side_range", "kernel_range", "layer_range", "channel_range", "nodes_range"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return CampaignConfig(**kw)


# -- reports -----------------------------------------------------------------

def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


class ReportWriter:
    """Single writer for JSON-lines report records."""

    def __init__(self, stream):
        self.stream = stream

    def write(self, rec: dict) -> None:
        self.stream.write(dumps_record(rec) + "\n")
