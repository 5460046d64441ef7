#!/usr/bin/python3
"""Manipulation accuracy, cross-split aggregation and the random-image baseline."""
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import torch

import datagen
from config import ConfigError
from model import to_images, to_tensor

DIRECTIONS = ("A2B", "B2A")
CELL_ROLES = ("shared", "specific", "frozen")


def _log(msg):
    pass


@dataclass
class TranslationRecord:
    direction: str
    source_attrs: dict
    guide_attrs: dict
    output_attrs: dict


@dataclass
class Cell:
    """Accuracy of one attribute in one translation direction."""
    attribute: str
    direction: str
    role: str
    kind: str
    accuracy: float | None
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def cell_role(attr_role: str, direction: str) -> str:
    """
    Role of an attribute's cell for a direction.

    Shared attributes are shared cells in both directions. An attribute
    specific to the target domain is a specific cell; one specific to the
    source domain is frozen in the target and reported but not aggregated.
    """
    if attr_role == "shared":
        return "shared"
    target = direction[-1]
    return "specific" if attr_role == f"specific_{target}" else "frozen"


def round_half_up(x) -> int:
    """Integer rounding with halves away from zero, as the tables print."""
    return int(Decimal(str(round(float(x), 9))).quantize(
        Decimal("1"), rounding=ROUND_HALF_UP))


def percent(x) -> int | None:
    return None if x is None else round_half_up(100.0 * x)


# ---------------------------------------------------------------------------
# Per-cell accuracies
# ---------------------------------------------------------------------------

def _target(record, attribute, role):
    attrs = record.source_attrs if role == "shared" else record.guide_attrs
    return attrs[attribute]


def manipulation_accuracy_categorical(records, attribute, role):
    """
    Fraction of records whose output carries the correct value.

    Only pairs where source and guide disagree on the attribute count.
    The correct value is the source's for a shared attribute and the
    guide's otherwise. Returns None when no pair survives.
    """
    kept = [r for r in records
            if r.source_attrs[attribute] != r.guide_attrs[attribute]]
    if not kept:
        return None
    hits = sum(r.output_attrs[attribute] == _target(r, attribute, role)
               for r in kept)
    return hits / len(kept)


def manipulation_accuracy_real(records, attribute, role):
    """
    Fraction of records whose output vector is at least as close to the
    correct vector as to the wrong one (Euclidean distance, ties count).
    """
    records = list(records)
    if not records:
        return None
    wrong_role = "specific" if role == "shared" else "shared"
    out = np.array([r.output_attrs[attribute] for r in records], float)
    good = np.array([_target(r, attribute, role) for r in records], float)
    bad = np.array([_target(r, attribute, wrong_role) for r in records],
                   float)
    if not out.shape == good.shape == bad.shape:
        raise ValueError(
            f"{attribute}: dimension mismatch between output "
            f"{out.shape[1:]} and reference {good.shape[1:]} vectors"
        )
    d_good = np.linalg.norm(out - good, axis=1)
    d_bad = np.linalg.norm(out - bad, axis=1)
    return float(np.mean(d_good <= d_bad))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_accuracy(cells) -> dict:
    """
    Average cell accuracies per attribute over specific (S) and shared
    (C) cells. Cells may come from any number of splits; undefined
    accuracies and frozen cells are skipped. A role without any
    qualifying cell maps to None.
    """
    buckets = {}
    for cell in cells:
        c = cell if isinstance(cell, dict) else cell.to_dict()
        entry = buckets.setdefault(c["attribute"], {"S": [], "C": []})
        if c["accuracy"] is None:
            continue
        if c["role"] == "specific":
            entry["S"].append(c["accuracy"])
        elif c["role"] == "shared":
            entry["C"].append(c["accuracy"])
    return {
        name: {k: (float(np.mean(v)) if v else None) for k, v in e.items()}
        for name, e in buckets.items()
    }


def overall_scores(aggregates: dict):
    """
    AC: mean of every defined aggregated accuracy. RD: percent relative
    discrepancy over attributes with both roles defined, None when there
    are none (or all are zero).
    """
    values = [v for e in aggregates.values() for v in e.values()
              if v is not None]
    ac = float(np.mean(values)) if values else None
    both = [e for e in aggregates.values()
            if e["S"] is not None and e["C"] is not None]
    denominator = sum(e["S"] + e["C"] for e in both)
    if not both or denominator == 0:
        return ac, None
    rd = 100.0 * sum(abs(e["S"] - e["C"]) for e in both) / denominator
    return ac, rd


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class Evaluation:
    split_id: str
    cells: list
    records: list = field(default_factory=list, repr=False)

    def categorical_cells(self) -> list:
        return [c for c in self.cells if c.kind == "categorical"]

    def aggregates(self) -> dict:
        return aggregate_accuracy(self.categorical_cells())

    def scores(self):
        return overall_scores(self.aggregates())

    def mean_categorical_accuracy(self) -> float | None:
        values = [c.accuracy for c in self.categorical_cells()
                  if c.role != "frozen" and c.accuracy is not None]
        return float(np.mean(values)) if values else None

    def role_accuracy(self, role) -> float | None:
        """Mean categorical accuracy over the defined cells of one role."""
        values = [c.accuracy for c in self.categorical_cells()
                  if c.role == role and c.accuracy is not None]
        return float(np.mean(values)) if values else None

    def cell(self, attribute, direction) -> Cell:
        for c in self.cells:
            if c.attribute == attribute and c.direction == direction:
                return c
        raise KeyError((attribute, direction))

    def to_dict(self) -> dict:
        ac, rd = self.scores()
        return {
            "split_id": self.split_id,
            "cells": [c.to_dict() for c in self.cells],
            "aggregates": self.aggregates(),
            "AC": ac,
            "RD": rd,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Evaluation":
        return cls(split_id=data["split_id"],
                   cells=[Cell(**c) for c in data["cells"]])


def _cells(split: datagen.SplitConfig, records) -> list:
    cells = []
    for direction in DIRECTIONS:
        subset = [r for r in records if r.direction == direction]
        for attr in split.attributes:
            role = cell_role(attr.role, direction)
            kept = [r for r in subset
                    if r.source_attrs[attr.name] != r.guide_attrs[attr.name]]
            cells.append(Cell(
                attribute=attr.name, direction=direction, role=role,
                kind="categorical",
                accuracy=manipulation_accuracy_categorical(
                    subset, attr.name, role),
                count=len(kept),
            ))
        for view, base in datagen.REAL_VIEWS.items():
            role = cell_role(split.roles[base], direction)
            cells.append(Cell(
                attribute=view, direction=direction, role=role, kind="real",
                accuracy=manipulation_accuracy_real(subset, view, role),
                count=len(subset),
            ))
    return cells


def _domain_attrs(manifest, domain):
    """Manifest attributes joined with colour views measured from pixels."""
    views = datagen.measure_colors(manifest.images(domain))
    return [
        {**attrs, **{name: tuple(float(v) for v in views[name][i])
                     for name in datagen.REAL_VIEWS}}
        for i, attrs in enumerate(manifest.attrs(domain))
    ]


def _check_resolution(translator, manifest):
    config = getattr(translator, "config", None)
    if config is None:
        return
    height, width = manifest.split.resolution
    if (height, width) != (config.resolution, config.resolution):
        raise ConfigError(
            f"checkpoint resolution {config.resolution} does not match "
            f"dataset resolution {height}x{width}"
        )


def guide_indices(n_sources, n_guides, per_source, seed, direction):
    """
    Guides for every source: per_source distinct indices drawn uniformly
    without replacement, seeded by (seed, direction).
    """
    if per_source < 1:
        raise ValueError("guides_per_source must be >= 1")
    if per_source > n_guides:
        raise ValueError(
            f"{per_source} guides per source but the target domain has "
            f"only {n_guides} images"
        )
    rng = np.random.default_rng([seed, DIRECTIONS.index(direction)])
    return np.stack([rng.choice(n_guides, size=per_source, replace=False)
                     for _ in range(n_sources)])


@torch.no_grad()
def translate_batch(translator, direction, sources, guides,
                    batch_size=64) -> np.ndarray:
    """Guided translations of NxHxWx3 numpy images, as numpy images."""
    target = direction[-1]
    outputs = []
    for i in range(0, len(sources), batch_size):
        src = to_tensor(sources[i:i + batch_size])
        guide = to_tensor(guides[i:i + batch_size])
        emb = translator.encode(target, guide)
        outputs.append(to_images(translator.generate(direction, src, emb)))
    return np.concatenate(outputs)


def evaluate(translator, manifest, guides_per_source=2, seed=0,
             batch_size=64, log_fn=_log) -> Evaluation:
    """
    Translate every source image with guides_per_source guides in both
    directions, decode the outputs and score every attribute cell.

    Args:
        translator: ModelBundle or any object with encode/generate
        manifest: Dataset to evaluate on
        guides_per_source: Guides sampled per source and direction
        seed: Seed of the guide sampling
        batch_size: Translations per forward pass
    """
    _check_resolution(translator, manifest)
    attrs = {d: _domain_attrs(manifest, d) for d in datagen.DOMAINS}
    records = []
    for direction in DIRECTIONS:
        source, target = direction[0], direction[-1]
        src_images = manifest.images(source)
        tgt_images = manifest.images(target)
        idx = guide_indices(len(src_images), len(tgt_images),
                            guides_per_source, seed, direction)
        src_idx = np.repeat(np.arange(len(src_images)), guides_per_source)
        gd_idx = idx.reshape(-1)
        log_fn(f"Evaluating {direction}: {len(src_idx)} translations")
        outputs = translate_batch(translator, direction,
                                  src_images[src_idx], tgt_images[gd_idx],
                                  batch_size)
        decoded = datagen.decode_batch(outputs, real_views=True)
        for s, g, out in zip(src_idx, gd_idx, decoded):
            records.append(TranslationRecord(
                direction=direction,
                source_attrs=attrs[source][s],
                guide_attrs=attrs[target][g],
                output_attrs=out,
            ))
    return Evaluation(split_id=manifest.split.split_id,
                      cells=_cells(manifest.split, records), records=records)


def rand_baseline(manifest, n_trials, seed=0) -> Evaluation:
    """
    Metrics of a "translator" that returns a uniformly random image of
    the target domain. Sources, guides and outputs are drawn
    independently for n_trials records per direction.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    attrs = {d: _domain_attrs(manifest, d) for d in datagen.DOMAINS}
    records = []
    for direction in DIRECTIONS:
        source, target = direction[0], direction[-1]
        rng = np.random.default_rng([seed, DIRECTIONS.index(direction)])
        n_src, n_tgt = len(attrs[source]), len(attrs[target])
        for s, g, o in zip(rng.integers(0, n_src, n_trials),
                           rng.integers(0, n_tgt, n_trials),
                           rng.integers(0, n_tgt, n_trials)):
            records.append(TranslationRecord(
                direction=direction,
                source_attrs=attrs[source][s],
                guide_attrs=attrs[target][g],
                output_attrs=attrs[target][o],
            ))
    return Evaluation(split_id=manifest.split.split_id,
                      cells=_cells(manifest.split, records), records=records)
