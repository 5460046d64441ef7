#!/usr/bin/python3
"""Result tables, loss and probe curves, and qualitative image grids."""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa
import numpy as np  # noqa
import torch  # noqa
from PIL import Image  # noqa

import storage  # noqa
from config import ConfigError, load_json  # noqa
from evalkit import (DIRECTIONS, Evaluation, aggregate_accuracy,  # noqa
                     guide_indices, overall_scores, percent, round_half_up)
from model import to_images, to_tensor  # noqa

# Column labels of the tables
ABBREVIATIONS = {
    "background": "BG",
    "object_color": "OC",
    "shape": "SH",
    "size": "SZ",
    "orientation": "ORI",
    "background_rgb": "BG-rgb",
    "object_rgb": "OC-rgb",
}


def _abbrev(name):
    return ABBREVIATIONS.get(name, name)


def _fmt(value):
    return "-" if value is None else str(value)


def _columns(rows):
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join(
        "  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in rows
    )


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def score_row(name, aggregates, attributes=None):
    """One table row: C and S percent per attribute, then AC and RD."""
    attributes = attributes or list(aggregates)
    ac, rd = overall_scores(aggregates)
    row = [name]
    for attr in attributes:
        entry = aggregates.get(attr, {"C": None, "S": None})
        row += [_fmt(percent(entry["C"])), _fmt(percent(entry["S"]))]
    row += [_fmt(percent(ac)),
            _fmt(None if rd is None else round_half_up(rd))]
    return row


def format_score_table(rows: dict) -> str:
    """
    Aggregated table: for every method a row of C/S accuracies per
    attribute followed by AC and RD, all in integer percent.

    Args:
        rows: method name -> aggregates (see evalkit.aggregate_accuracy)
    """
    attributes = []
    for aggregates in rows.values():
        attributes += [a for a in aggregates if a not in attributes]
    header = ["method"]
    for attr in attributes:
        header += [f"{_abbrev(attr)}:C", f"{_abbrev(attr)}:S"]
    header += ["AC", "RD"]
    table = [header] + [score_row(name, agg, attributes)
                        for name, agg in rows.items()]
    return _columns(table)


def _split_value(evaluation, attribute):
    values = [c.accuracy for c in evaluation.categorical_cells()
              if c.attribute == attribute and c.role != "frozen"
              and c.accuracy is not None]
    return float(np.mean(values)) if values else None


def _split_roles(evaluation):
    """Attribute -> role letter, recovered from the cell roles."""
    letters = {}
    for c in evaluation.categorical_cells():
        if c.role == "shared":
            letters[c.attribute] = "C"
        elif c.role == "specific":
            letters[c.attribute] = c.direction[-1]
    return letters


def format_split_table(evaluations, rand: dict = None) -> str:
    """
    Per-split layout: one row per split with each attribute's accuracy
    and its role letter (A, B specific to that domain; C shared).

    Args:
        evaluations: Evaluation per split
        rand: Optional split_id -> random-baseline Evaluation; adds a
            RAND row per split
    """
    attributes = []
    for ev in evaluations:
        attributes += [c.attribute for c in ev.categorical_cells()
                       if c.attribute not in attributes]
    table = [["split"] + [_abbrev(a) for a in attributes]]

    def row(label, ev, letters):
        cells = [label]
        for attr in attributes:
            value = percent(_split_value(ev, attr))
            cells.append(f"{_fmt(value)}({letters.get(attr, '-')})")
        return cells

    for ev in evaluations:
        letters = _split_roles(ev)
        table.append(row(ev.split_id, ev, letters))
        if rand and ev.split_id in rand:
            table.append(row(f"{ev.split_id}/RAND", rand[ev.split_id],
                             letters))
    return _columns(table)


def format_evaluation(evaluation: Evaluation, rand: Evaluation = None) -> str:
    """Human-readable eval.txt: every cell, then the aggregated row."""
    lines = [f"split {evaluation.split_id}", ""]
    table = [["attribute", "direction", "role", "kind", "acc", "n"]]
    for c in evaluation.cells:
        table.append([c.attribute, c.direction, c.role, c.kind,
                      _fmt(percent(c.accuracy)), c.count])
    lines.append(_columns(table))
    lines.append("")
    rows = {"model": evaluation.aggregates()}
    if rand is not None:
        rows["RAND"] = rand.aggregates()
    lines.append(format_score_table(rows))
    return "\n".join(lines) + "\n"


def write_evaluation(evaluation: Evaluation, out_dir,
                     rand: Evaluation = None) -> Path:
    """Write eval.json (raw fractions) and eval.txt into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = evaluation.to_dict()
    if rand is not None:
        payload["rand"] = rand.to_dict()
    path = out_dir / "eval.json"
    path.write_text(storage.dumps(payload), encoding="utf-8")
    (out_dir / "eval.txt").write_text(format_evaluation(evaluation, rand),
                                      encoding="utf-8")
    return path


def read_evaluation(path):
    """Load eval.json; returns (evaluation, rand evaluation or None)."""
    data = load_json(path)
    rand = data.get("rand")
    return (Evaluation.from_dict(data),
            None if rand is None else Evaluation.from_dict(rand))


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

def read_metrics(path) -> list[dict]:
    path = Path(path)
    records = storage.read_jsonl(path)
    if not records:
        raise ConfigError(f"metrics file {path} is empty")
    return records


def plot_loss_curves(metrics_path, out_path) -> Path:
    """One panel per loss term, value against step."""
    records = read_metrics(metrics_path)
    terms = sorted({k for r in records for k in r if k != "step"})
    cols = 4
    rows = (len(terms) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.4 * rows),
                             squeeze=False)
    for ax, term in zip(axes.flat, terms):
        points = [(r["step"], r[term]) for r in records if term in r]
        ax.plot(*zip(*points), linewidth=1)
        ax.set_title(term, fontsize=9)
    for ax in list(axes.flat)[len(terms):]:
        ax.axis("off")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def plot_probe_curves(probes: dict, out_path) -> Path:
    """
    Cycle error against perturbation amplitude, one line per model and
    direction.

    Args:
        probes: model name -> ProbeReport
        out_path: PNG path
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, probe in probes.items():
        for direction, errors in probe.errors.items():
            ax.errorbar(probe.amplitudes, errors,
                        yerr=probe.std_errors[direction],
                        label=f"{name} {direction}", marker="o",
                        markersize=3, capsize=2)
    ax.set_xlabel("perturbation amplitude")
    ax.set_ylabel("cycle L1 error")
    ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


# ---------------------------------------------------------------------------
# Image grids
# ---------------------------------------------------------------------------

def make_image_grid(rows, out_path, scale=4, padding=2) -> Path:
    """
    Paste rows of HxWx3 images in [-1, 1] onto one canvas.

    Every image is enlarged by `scale` with nearest-neighbour sampling so
    single pixels stay visible.
    """
    rows = [list(r) for r in rows]
    if not rows or not rows[0]:
        raise ValueError("image grid needs at least one image")
    height, width = np.asarray(rows[0][0]).shape[:2]
    cell_w, cell_h = width * scale, height * scale
    n_cols = max(len(r) for r in rows)
    canvas = Image.new(
        "RGB",
        (n_cols * (cell_w + padding) + padding,
         len(rows) * (cell_h + padding) + padding),
        (255, 255, 255),
    )
    for i, row in enumerate(rows):
        for j, grid in enumerate(row):
            tile = Image.fromarray(storage.to_uint8(grid)).resize(
                (cell_w, cell_h), Image.Resampling.NEAREST)
            canvas.paste(tile, (padding + j * (cell_w + padding),
                                padding + i * (cell_h + padding)))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    canvas.save(out_path, "PNG")
    return out_path


@torch.no_grad()
def translation_grid(translator, manifest, out_path, n=6, seed=0) -> Path:
    """
    Qualitative grid. For each direction four rows: sources, guides,
    guided translations and their cycle reconstructions.
    """
    rows = []
    for direction in DIRECTIONS:
        source, target = direction[0], direction[-1]
        back = f"{target}2{source}"
        src_images = manifest.images(source)
        tgt_images = manifest.images(target)
        count = min(n, len(src_images))
        guides = guide_indices(count, len(tgt_images), 1, seed,
                               direction)[:, 0]
        src = to_tensor(src_images[:count])
        guide = to_tensor(tgt_images[guides])
        fake = translator.generate(direction, src,
                                   translator.encode(target, guide))
        cyc = translator.generate(back, fake, translator.encode(source, src))
        rows += [list(to_images(t)) for t in (src, guide, fake, cyc)]
    return make_image_grid(rows, out_path)


# ---------------------------------------------------------------------------
# report subcommand
# ---------------------------------------------------------------------------

def build_report(metrics=(), evals=(), out_dir=".") -> Path:
    """
    Assemble report.txt from eval files and plot loss curves for every
    metrics file. Returns the report path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sections = []
    if evals:
        evaluations, rands = [], {}
        for path in evals:
            evaluation, rand = read_evaluation(path)
            evaluations.append(evaluation)
            if rand is not None:
                rands[evaluation.split_id] = rand
        rows = {"model": aggregate_accuracy(
            c for ev in evaluations for c in ev.categorical_cells())}
        if rands:
            rows["RAND"] = aggregate_accuracy(
                c for ev in rands.values() for c in ev.categorical_cells())
        sections += ["Aggregated manipulation accuracy (%)",
                     format_score_table(rows), "",
                     "Per-split manipulation accuracy (%)",
                     format_split_table(evaluations, rands), ""]
    for i, path in enumerate(metrics):
        name = "loss_curves.png" if len(metrics) == 1 else \
            f"loss_curves_{i}.png"
        plot_loss_curves(path, out_dir / name)
        sections.append(f"loss curves of {path}: {name}")
    if not sections:
        raise ConfigError("report needs at least one metrics or eval file")
    path = out_dir / "report.txt"
    path.write_text("\n".join(sections) + "\n", encoding="utf-8")
    return path
