#!/usr/bin/python3
"""Detectors for hidden cycle signals and for guide- or source-ignoring translators."""
import copy
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

import capacity
import evalkit
import report
import storage
import trainer
from model import to_tensor

DEFAULT_AMPLITUDES = (0.0, 0.02, 0.05, 0.1, 0.2)

# Added to the baseline cycle error before normalising the hiding slope
HIDING_EPS = 1e-6

# Ablation variants: name -> TrainConfig flag overrides
VARIANTS = {
    "full": {},
    "no_norm": {"disable_norm": True},
    "no_guess": {"disable_guess": True},
}


def _log(msg):
    pass


@dataclass
class ProbeReport:
    amplitudes: list
    errors: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)
    hiding_scores: dict = field(default_factory=dict)
    hiding_score: float = 0.0
    embedding_power: float = 0.0
    capacity_bits: float = 0.0
    source_dependence: float | None = None
    guide_dependence: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _check_amplitudes(amplitudes):
    amplitudes = [float(a) for a in amplitudes]
    if not amplitudes:
        raise ValueError("amplitude list is empty")
    if amplitudes[0] != 0.0:
        raise ValueError("amplitudes must start with the 0 baseline")
    if any(b <= a for a, b in zip(amplitudes, amplitudes[1:])):
        raise ValueError("amplitudes must be strictly increasing")
    if len(amplitudes) < 3:
        raise ValueError("need at least two positive amplitudes")
    return amplitudes


def content_order(images) -> np.ndarray:
    """Permutation sorting images by a hash of their pixels."""
    keys = [hashlib.sha1(np.ascontiguousarray(img).tobytes()).hexdigest()
            for img in images]
    return np.argsort(keys, kind="stable")


def _sorted_images(manifest, domain):
    images = manifest.images(domain)
    return images[content_order(images)]


def hiding_score(amplitudes, errors) -> float:
    """
    Slope of the cycle error between the two smallest positive
    amplitudes, relative to the unperturbed error.
    """
    (s1, e1), (s2, e2) = [(s, e) for s, e in zip(amplitudes, errors)
                          if s > 0][:2]
    return float((e2 - e1) / (s2 - s1) / (errors[0] + HIDING_EPS))


@torch.no_grad()
def hidden_signal_probe(translator, manifest, amplitudes=DEFAULT_AMPLITUDES,
                        n_pairs=256, repeats=4, sigma_g=0.5,
                        seed=0) -> ProbeReport:
    """
    Perturb guided translations with Gaussian noise before cycling them
    back and record the mean L1 cycle error per amplitude.

    A translator that stores the source in low-amplitude structure sees
    its cycle error climb steeply with small perturbations; the hiding
    score is that slope. Errors are averaged over `repeats` noise draws
    and reported with their standard error.
    """
    amplitudes = _check_amplitudes(amplitudes)
    gen = torch.Generator().manual_seed(int(seed))
    probe = ProbeReport(amplitudes=amplitudes)
    powers, dims = [], []
    for direction in evalkit.DIRECTIONS:
        source, target = direction[0], direction[-1]
        back = f"{target}2{source}"
        src_images = _sorted_images(manifest, source)
        tgt_images = _sorted_images(manifest, target)
        rng = np.random.default_rng(
            [seed, evalkit.DIRECTIONS.index(direction)])
        src = to_tensor(src_images[rng.integers(0, len(src_images), n_pairs)])
        guide = to_tensor(
            tgt_images[rng.integers(0, len(tgt_images), n_pairs)])

        guide_emb = translator.encode(target, guide)
        powers.append(float(guide_emb.flatten(1).pow(2).sum(1).mean()))
        dims.append(int(guide_emb[0].numel()))
        fake = translator.generate(direction, src, guide_emb)
        own_emb = translator.encode(source, src)

        means, stds = [], []
        for amp in amplitudes:
            draws = 1 if amp == 0 else repeats
            errs = []
            for _ in range(draws):
                noise = torch.randn(fake.shape, generator=gen,
                                    dtype=fake.dtype)
                cyc = translator.generate(back, fake + amp * noise, own_emb)
                errs.append(float((cyc - src).abs().mean()))
            means.append(float(np.mean(errs)))
            stds.append(float(np.std(errs, ddof=1) / np.sqrt(draws))
                        if draws > 1 else 0.0)
        probe.errors[direction] = means
        probe.std_errors[direction] = stds
        probe.hiding_scores[direction] = hiding_score(amplitudes, means)

    probe.hiding_score = float(np.mean(list(probe.hiding_scores.values())))
    probe.embedding_power = float(np.mean(powers))
    probe.capacity_bits = capacity.capacity_bound(
        max(dims), probe.embedding_power, sigma_g) if sigma_g > 0 else None
    return probe


@torch.no_grad()
def dependence_probe(translator, manifest, n_pairs=256, seed=0):
    """
    How much the output moves when the source or the guide is swapped.

    Each score is the mean L1 change of the output, divided by the mean
    L1 distance between random target-domain images and clipped to
    [0, 1]. Images are put in content-hash order first, so the scores
    do not depend on the order of the dataset.

    Returns (source_dependence, guide_dependence), averaged over both
    directions.
    """
    source_scores, guide_scores = [], []
    for direction in evalkit.DIRECTIONS:
        source, target = direction[0], direction[-1]
        src_images = _sorted_images(manifest, source)
        tgt_images = _sorted_images(manifest, target)
        rng = np.random.default_rng(
            [seed, evalkit.DIRECTIONS.index(direction)])

        def pick(images):
            return to_tensor(images[rng.integers(0, len(images), n_pairs)])

        s1, s2 = pick(src_images), pick(src_images)
        g1, g2 = pick(tgt_images), pick(tgt_images)
        t1, t2 = pick(tgt_images), pick(tgt_images)

        def out(src, guide):
            return translator.generate(direction, src,
                                       translator.encode(target, guide))

        base = out(s1, g1)
        scale = float((t1 - t2).abs().mean())
        if scale == 0:
            source_scores.append(0.0)
            guide_scores.append(0.0)
            continue
        source_scores.append(
            float((out(s2, g1) - base).abs().mean()) / scale)
        guide_scores.append(
            float((out(s1, g2) - base).abs().mean()) / scale)
    return (float(np.clip(np.mean(source_scores), 0.0, 1.0)),
            float(np.clip(np.mean(guide_scores), 0.0, 1.0)))


def probe(translator, manifest, amplitudes=DEFAULT_AMPLITUDES, sigma_g=0.5,
          seed=0) -> ProbeReport:
    """Run both probes and merge them into one report."""
    result = hidden_signal_probe(translator, manifest, amplitudes,
                                 sigma_g=sigma_g, seed=seed)
    result.source_dependence, result.guide_dependence = dependence_probe(
        translator, manifest, seed=seed)
    return result


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------

def _summary(evaluation, probe_report) -> dict:
    ac, rd = evaluation.scores()
    return {
        "shared_accuracy": evaluation.role_accuracy("shared"),
        "specific_accuracy": evaluation.role_accuracy("specific"),
        "AC": ac,
        "RD": rd,
        "hiding_score": probe_report.hiding_score,
        "source_dependence": probe_report.source_dependence,
        "guide_dependence": probe_report.guide_dependence,
        "embedding_power": probe_report.embedding_power,
        "capacity_bits": probe_report.capacity_bits,
    }


def format_ablation_table(rows: dict) -> str:
    """Side-by-side table of the ablation summaries, percent where relevant."""
    columns = ["shared_accuracy", "specific_accuracy", "AC", "RD",
               "hiding_score", "source_dependence", "guide_dependence",
               "capacity_bits"]
    header = ["model", "shared", "specific", "AC", "RD", "hiding",
              "src_dep", "guide_dep", "bits"]
    table = [header]
    for name, summary in rows.items():
        line = [name]
        for key in columns:
            value = summary.get(key)
            if value is None:
                line.append("-")
            elif key in ("shared_accuracy", "specific_accuracy", "AC"):
                line.append(str(evalkit.percent(value)))
            elif key == "RD":
                line.append(str(evalkit.round_half_up(value)))
            else:
                line.append(f"{value:.3f}")
        table.append(line)
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths))
                     for r in table) + "\n"


def ablation_suite(base_config: trainer.TrainConfig, out_dir,
                   amplitudes=DEFAULT_AMPLITUDES, guides_per_source=2,
                   variants=VARIANTS, progress=False, log_fn=_log) -> dict:
    """
    Train the full model and each ablation under one seed, evaluate and
    probe every run, and write ablation.json, ablation.txt,
    probe_curves.png and one translation grid per variant.

    Returns the summaries keyed by variant (plus RAND).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, _, _ = trainer.load_training_images(base_config)
    seed = base_config.seed
    summaries, probes = {}, {}
    for name, flags in variants.items():
        cfg = copy.deepcopy(base_config)
        for key, value in flags.items():
            setattr(cfg, key, value)
        log_fn(f"Ablation {name}: training")
        result = trainer.train(cfg, out_dir / name, progress=progress,
                               log_fn=log_fn)
        bundle = result.state.bundle
        evaluation = evalkit.evaluate(bundle, manifest, guides_per_source,
                                      seed=seed, log_fn=log_fn)
        report.write_evaluation(evaluation, out_dir / name)
        probes[name] = probe(bundle, manifest, amplitudes,
                             sigma_g=cfg.noise.sigma_g, seed=seed)
        summaries[name] = _summary(evaluation, probes[name])
        report.translation_grid(bundle, manifest,
                                out_dir / f"grid_{name}.png", seed=seed)

    rand = evalkit.rand_baseline(manifest, n_trials=10000, seed=seed)
    ac, rd = rand.scores()
    summaries["RAND"] = {
        "shared_accuracy": rand.role_accuracy("shared"),
        "specific_accuracy": rand.role_accuracy("specific"),
        "AC": ac,
        "RD": rd,
    }
    (out_dir / "ablation.json").write_text(
        storage.dumps({"summaries": summaries,
                       "probes": {k: p.to_dict() for k, p in probes.items()}}),
        encoding="utf-8",
    )
    (out_dir / "ablation.txt").write_text(format_ablation_table(summaries),
                                          encoding="utf-8")
    report.plot_probe_curves(probes, out_dir / "probe_curves.png")
    return summaries
