#!/usr/bin/python3
"""Alternating critic/generator optimisation with checkpoints and metric logs."""
import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

import datagen
import losses
import storage
from config import ConfigError
from losses import LossReport, LossWeights, NoiseConfig
from model import ModelBundle, ModelConfig, load_checkpoint, save_checkpoint
from model import to_tensor

# Smoothing of the running loss averages shown in the progress bar
RUNNING_DECAY = 0.98


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN or infinite; the run is aborted."""

    def __init__(self, term, step, value):
        super().__init__(
            f"non-finite loss term {term}={value} at step {step}"
        )
        self.term = term
        self.step = step


def _log(msg):
    pass


@dataclass
class TrainConfig:
    data: str | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 8
    steps: int = 20000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    betas: tuple = (0.5, 0.999)
    checkpoint_every: int = 1000
    log_every: int = 1
    seed: int = 0
    disable_norm: bool = False
    disable_guess: bool = False

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ConfigError("learning rates must be > 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be >= 1")

    @property
    def effective_weights(self) -> LossWeights:
        """Loss weights with the ablation flags applied."""
        w = copy.copy(self.weights)
        if self.disable_norm:
            w.w_norm = 0.0
        if self.disable_guess:
            w.w_guess = 0.0
        return w

    @property
    def noise_seeded(self) -> NoiseConfig:
        if self.noise.rng_seed is not None:
            return self.noise
        return NoiseConfig(self.noise.sigma_s, self.noise.sigma_g, self.seed)

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "weights": self.weights.to_dict(),
            "noise": self.noise.to_dict(),
            "model": self.model.to_dict(),
            "batch_size": self.batch_size,
            "steps": self.steps,
            "lr_g": self.lr_g,
            "lr_d": self.lr_d,
            "betas": list(self.betas),
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
            "seed": self.seed,
            "disable_norm": self.disable_norm,
            "disable_guess": self.disable_guess,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        # Run-level keys of the train section, not part of the config
        for key in ("out", "resume", "restarts"):
            data.pop(key, None)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        data["weights"] = LossWeights.from_dict(data.get("weights", {}))
        data["noise"] = NoiseConfig.from_dict(data.get("noise", {}))
        data["model"] = ModelConfig.from_dict(data.get("model", {}))
        if data.get("seed") is None:
            data.pop("seed", None)
        return cls(**data)


@dataclass
class TrainState:
    config: TrainConfig
    bundle: ModelBundle
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0
    running: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: TrainConfig, bundle: ModelBundle = None):
        """Fresh state; the bundle is built under torch.manual_seed(seed)."""
        if bundle is None:
            torch.manual_seed(config.seed)
            bundle = ModelBundle(config.model)
        opt_g = torch.optim.Adam(bundle.generator_parameters(),
                                 lr=config.lr_g, betas=config.betas)
        opt_d = torch.optim.Adam(bundle.discriminator_parameters(),
                                 lr=config.lr_d, betas=config.betas)
        return cls(config, bundle, opt_g, opt_d)

    def save(self, path) -> Path:
        return save_checkpoint(
            path, self.bundle,
            state={
                "opt_g": self.opt_g.state_dict(),
                "opt_d": self.opt_d.state_dict(),
                "running": dict(self.running),
            },
            meta={
                "step": self.step,
                "seed": self.config.seed,
                "train": self.config.to_dict(),
                "weights": self.config.effective_weights.to_dict(),
            },
        )

    @classmethod
    def load(cls, path, config: TrainConfig = None) -> "TrainState":
        """Restore a checkpoint written by save()."""
        bundle, blob, meta = load_checkpoint(path)
        if config is None:
            config = TrainConfig.from_dict(meta["train"])
        state = cls.create(config, bundle)
        state.opt_g.load_state_dict(blob["opt_g"])
        state.opt_d.load_state_dict(blob["opt_d"])
        state.running = dict(blob.get("running", {}))
        state.step = int(meta["step"])
        return state


def _check_finite(terms: dict, step: int):
    for name, value in terms.items():
        v = losses.scalar(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, step, v)


def sample_batch(images_a, images_b, batch_size, seed, step):
    """Independent uniform draws from each domain, fixed by (seed, step)."""
    rng = np.random.default_rng([seed, step])
    ia = rng.integers(0, len(images_a), size=batch_size)
    ib = rng.integers(0, len(images_b), size=batch_size)
    return images_a[torch.as_tensor(ia)], images_b[torch.as_tensor(ib)]


def train_step(state: TrainState, a, b) -> LossReport:
    """
    One critic update (realism and guess critics), then one generator
    update. Each optimizer owns only its side's parameters.
    """
    cfg = state.config
    bundle = state.bundle
    noise = cfg.noise_seeded
    step = state.step

    state.opt_d.zero_grad(set_to_none=True)
    total_d, d_terms = losses.discriminator_losses(
        bundle, a, b, noise, step, guess=not cfg.disable_guess
    )
    _check_finite({**d_terms, "total_D": total_d}, step)
    total_d.backward()
    state.opt_d.step()

    state.opt_g.zero_grad(set_to_none=True)
    total_g, g_terms = losses.generator_losses(
        bundle, a, b, cfg.effective_weights, noise, step
    )
    _check_finite({**g_terms, "total_G": total_g}, step)
    total_g.backward()
    state.opt_g.step()

    report = LossReport.from_terms({
        **g_terms, **d_terms, "total_G": total_g, "total_D": total_d,
    })
    for key, value in report.values.items():
        prev = state.running.get(key, value)
        state.running[key] = RUNNING_DECAY * prev + (1 - RUNNING_DECAY) * value
    state.step += 1
    return report


def checkpoint_path(out_dir, step) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{step:06d}.pt"


def load_training_images(config: TrainConfig):
    """Dataset images of both domains as tensors, checked against the model."""
    if config.data is None:
        raise ConfigError("train: no dataset given (data)")
    manifest = datagen.read_dataset(config.data)
    height, width = manifest.split.resolution
    if height != width or height != config.model.resolution:
        raise ConfigError(
            f"dataset resolution {height}x{width} does not match model "
            f"resolution {config.model.resolution}"
        )
    return (manifest,
            to_tensor(manifest.images("A")),
            to_tensor(manifest.images("B")))


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    state: TrainState


def train(config: TrainConfig, out_dir, resume=None, progress=False,
          log_fn=_log) -> TrainResult:
    """
    Train for config.steps steps, writing checkpoints and metrics.jsonl.

    Args:
        config: Full training configuration
        out_dir: Output directory (created if missing)
        resume: Optional checkpoint to continue from; metrics past its
            step are dropped and the rest appended to
        progress: Show a tqdm progress bar
        log_fn: Callback for status messages
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, images_a, images_b = load_training_images(config)
    metrics = out_dir / "metrics.jsonl"

    if resume is not None:
        state = TrainState.load(resume, config)
        if metrics.exists():
            # Drop records logged after the checkpoint; they get redone
            kept = [r for r in storage.read_jsonl(metrics)
                    if r["step"] <= state.step]
            storage.write_jsonl(metrics, kept)
        log_fn(f"Resumed from {resume} at step {state.step}")
    else:
        state = TrainState.create(config)
        metrics.write_text("", encoding="utf-8")
        log_fn(f"Training {config.steps} steps, seed {config.seed}")

    last = None
    bar = tqdm(range(state.step, config.steps), initial=state.step,
               total=config.steps, disable=not progress)
    for _ in bar:
        a, b = sample_batch(images_a, images_b, config.batch_size,
                            config.seed, state.step)
        report = train_step(state, a, b)
        done = state.step == config.steps
        if state.step % config.log_every == 0 or done:
            storage.append_jsonl(metrics, {"step": state.step,
                                           **report.to_dict()})
        if state.step % config.checkpoint_every == 0 or done:
            last = state.save(checkpoint_path(out_dir, state.step))
            log_fn(f"Saved checkpoint {last.name}")
        bar.set_postfix(total_G=f"{report['total_G']:.3f}",
                        total_D=f"{report['total_D']:.3f}")

    if last is None:
        last = checkpoint_path(out_dir, state.step)
        if not last.exists():
            last = state.save(last)
    return TrainResult(checkpoint=last, metrics=metrics, state=state)


def train_restarts(config: TrainConfig, out_dir, restarts=1, progress=False,
                   log_fn=_log) -> TrainResult:
    """
    Train seeds seed, seed+1, ... and keep the restart with the highest
    mean categorical manipulation accuracy on its own dataset.

    The choice is written to best.json in out_dir.
    """
    import evalkit

    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    if restarts == 1:
        return train(config, out_dir, progress=progress, log_fn=log_fn)
    out_dir = Path(out_dir)
    manifest = datagen.read_dataset(config.data)
    results = []
    for r in range(restarts):
        cfg = copy.deepcopy(config)
        cfg.seed = config.seed + r
        run_dir = out_dir / f"restart_{r}"
        log_fn(f"Restart {r + 1}/{restarts} (seed {cfg.seed})")
        result = train(cfg, run_dir, progress=progress, log_fn=log_fn)
        evaluation = evalkit.evaluate(result.state.bundle, manifest,
                                      seed=cfg.seed)
        score = evaluation.mean_categorical_accuracy()
        log_fn(f"Restart {r}: mean categorical accuracy {score}")
        results.append((score, r, result))
    best_score, best_r, best = max(
        results, key=lambda t: (-1.0 if t[0] is None else t[0], -t[1])
    )
    (out_dir / "best.json").write_text(
        storage.dumps({
            "restart": best_r,
            "seed": config.seed + best_r,
            "score": best_score,
            "checkpoint": str(best.checkpoint),
            "scores": [s for s, _, _ in results],
        }),
        encoding="utf-8",
    )
    return best
