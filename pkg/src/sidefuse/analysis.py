"""Gating-analysis instruments: gate export, deviation, cross-model
variability, and Pearson correlation of gate activations.

All statistics run in float64 on the float32 gate values. The cross-model
std uses the population convention (divisor M).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .fusion import ModelAssembly

_GATED_METHODS = ("weights_gating", "self_weighted")


@dataclass
class GatingRecord:
    model_id: str
    layer_index: int
    values: np.ndarray      # tanh(W) per channel


@dataclass
class DeviationStats:
    d: float
    min: float
    max: float
    sum: float


@dataclass
class PearsonResult:
    r: float
    defined: bool
    pairs: list[tuple[float, float]]


def export_gates(model: ModelAssembly) -> list[GatingRecord]:
    """One record of tanh(W) per gated fusion site, ordered by layer."""
    if model.config.method not in _GATED_METHODS:
        raise ValueError(
            f"model uses '{model.config.method}'; gate export needs one of "
            f"{_GATED_METHODS}")
    records = []
    for site in sorted(model.sites, key=lambda s: s.layer_index):
        records.append(GatingRecord(model.model_id, site.layer_index,
                                    np.tanh(site.gate.tensor.data.astype(np.float64))))
    return records


def deviation(record: GatingRecord) -> DeviationStats:
    """RMS of tanh(W) over channels, with min/max/sum exported alongside."""
    v = np.asarray(record.values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty gating record")
    return DeviationStats(
        d=float(np.sqrt(np.mean(v * v))),
        min=float(v.min()), max=float(v.max()), sum=float(v.sum()))


def _minmax_scale(v: np.ndarray) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        warnings.warn("constant gate vector min-max scales to 0.5", stacklevel=3)
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def cross_model_std(records: list[GatingRecord]) -> tuple[np.ndarray, float]:
    """Per-channel population std of min-max-scaled gates across models.

    All records must come from the same layer of M >= 2 models; returns the
    per-channel stds and their mean as the layer summary.
    """
    if len(records) < 2:
        raise ValueError("cross-model std needs at least 2 models")
    sizes = {len(r.values) for r in records}
    if len(sizes) != 1:
        raise ValueError(f"channel count mismatch across models: {sorted(sizes)}")
    scaled = np.stack([_minmax_scale(np.asarray(r.values, dtype=np.float64))
                       for r in records])
    per_channel = scaled.std(axis=0)    # population: divisor M
    return per_channel, float(per_channel.mean())


def pearson(record_a: GatingRecord, record_b: GatingRecord) -> PearsonResult:
    """Pearson r between two gate vectors plus the paired scatter data."""
    a = np.asarray(record_a.values, dtype=np.float64)
    b = np.asarray(record_b.values, dtype=np.float64)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("pearson needs vectors of length >= 2")
    pairs = [(float(x), float(y)) for x, y in zip(a, b)]
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return PearsonResult(0.0, False, pairs)
    r = float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))
    return PearsonResult(max(-1.0, min(1.0, r)), True, pairs)


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

def write_gates_csv(path, records: list[GatingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_id", "layer", "channel", "tanh_w"])
        for r in records:
            for c, v in enumerate(r.values):
                w.writerow([r.model_id, r.layer_index, c, f"{v:.8f}"])


def read_gates_csv(path) -> list[GatingRecord]:
    by_layer: dict[tuple[str, int], list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["model_id"], int(row["layer"]))
            by_layer.setdefault(key, []).append(float(row["tanh_w"]))
    return [GatingRecord(mid, layer, np.asarray(vals, dtype=np.float64))
            for (mid, layer), vals in sorted(by_layer.items())]


def write_deviation_csv(path, records: list[GatingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_id", "layer", "d", "min", "max", "sum"])
        for r in records:
            s = deviation(r)
            w.writerow([r.model_id, r.layer_index, f"{s.d:.8f}", f"{s.min:.8f}",
                        f"{s.max:.8f}", f"{s.sum:.8f}"])


def write_xstd_csv(path, per_layer: dict[int, list[GatingRecord]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "channel", "std"])
        for layer in sorted(per_layer):
            stds, _ = cross_model_std(per_layer[layer])
            for c, v in enumerate(stds):
                w.writerow([layer, c, f"{v:.8f}"])


def write_pearson_csv(path, results: dict[int, PearsonResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "r", "defined"])
        for layer in sorted(results):
            res = results[layer]
            w.writerow([layer, f"{res.r:.8f}", str(res.defined).lower()])
