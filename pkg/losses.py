#!/usr/bin/python3
"""Training objectives and their Gaussian noise channels."""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from config import ConfigError

# Noise stream sides: one stream per update of a training step
SIDES = ("discriminator", "generator")

GENERATOR_TERMS = ("cyc", "guess", "norm", "gan", "idt")


class StaleCacheError(ValueError):
    """A cycle cache was reused outside the step that produced it."""


def _from_dict(cls, data: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class LossWeights:
    w_cyc: float = 10.0
    w_guess: float = 1.0
    w_norm: float = 0.1
    w_gan: float = 1.0
    w_idt: float = 5.0

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{f.name} must be finite and >= 0")
            setattr(self, f.name, value)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        return _from_dict(cls, data, "loss weight")


@dataclass
class NoiseConfig:
    """
    Noise amplitudes of the image channel (sigma_s) and the embedding
    channel (sigma_g). rng_seed None means "use the run seed".
    """
    sigma_s: float = 0.1
    sigma_g: float = 0.5
    rng_seed: int | None = None

    def __post_init__(self):
        for name in ("sigma_s", "sigma_g"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0")
            setattr(self, name, value)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseConfig":
        return _from_dict(cls, data, "noise")

    def stream(self, step: int = 0, side: str = "generator") -> "NoiseStream":
        """Independent noise stream for one side of one training step."""
        if side not in SIDES:
            raise ValueError(f"unknown noise side: {side!r}")
        seed = 0 if self.rng_seed is None else int(self.rng_seed)
        state = np.random.SeedSequence(
            [seed, int(step), SIDES.index(side)]
        ).generate_state(1)[0]
        gen = torch.Generator().manual_seed(int(state))
        return NoiseStream(self.sigma_s, self.sigma_g, gen)


class NoiseStream:
    """Draws additive Gaussian noise from one seeded generator, in call order."""

    def __init__(self, sigma_s, sigma_g, generator):
        self.sigma_s = sigma_s
        self.sigma_g = sigma_g
        self.generator = generator

    def _add(self, x, sigma):
        if sigma == 0:
            return x
        eps = torch.randn(x.shape, generator=self.generator, dtype=x.dtype)
        return x + sigma * eps.to(x.device)

    def image(self, x):
        return self._add(x, self.sigma_s)

    def embedding(self, e):
        return self._add(e, self.sigma_g)


def _as_stream(noise, step, side):
    if isinstance(noise, NoiseStream):
        return noise
    return noise.stream(step, side)


@dataclass
class CycleCache:
    """Cycle reconstructions of one step, reused by the guess losses."""
    step: int
    a_cyc: torch.Tensor
    b_cyc: torch.Tensor

    def check(self, step):
        if step is not None and step != self.step:
            raise StaleCacheError(
                f"cycle cache from step {self.step} used at step {step}"
            )


@dataclass
class LossReport:
    """Scalar value of every logged term, keyed by term name."""
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def non_finite(self) -> list:
        return [k for k, v in self.values.items() if not math.isfinite(v)]

    def to_dict(self) -> dict:
        return dict(self.values)

    @classmethod
    def from_terms(cls, terms: dict) -> "LossReport":
        return cls({k: scalar(v) for k, v in terms.items()})


def scalar(value) -> float:
    """Python float of a loss term, detached from the graph."""
    if torch.is_tensor(value):
        return value.detach().item()
    return float(value)


def _check_batches(a, b):
    if len(a) == 0 or len(b) == 0:
        raise ValueError("loss batches must be nonempty")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(
            f"batch shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def l1(x, y):
    """Mean absolute error over pixels and batch."""
    return (x - y).abs().mean()


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

def noisy_cycle_loss(bundle, a, b, noise, step=0):
    """
    Guided cycle consistency through both noise channels.

    a_cyc = G_B2A(G_A2B(a, s_B(b) + eps_g) + eps_s, s_A(a) + eps_g) and
    symmetrically for b. Returns (L_cyc_A, L_cyc_B, CycleCache).
    """
    _check_batches(a, b)
    stream = _as_stream(noise, step, "generator")
    s_a = bundle.encode("A", a)
    s_b = bundle.encode("B", b)
    a_fake = bundle.generate("A2B", a, stream.embedding(s_b))
    a_cyc = bundle.generate("B2A", stream.image(a_fake),
                            stream.embedding(s_a))
    b_fake = bundle.generate("B2A", b, stream.embedding(s_a))
    b_cyc = bundle.generate("A2B", stream.image(b_fake),
                            stream.embedding(s_b))
    cache = CycleCache(step=step, a_cyc=a_cyc, b_cyc=b_cyc)
    return l1(a_cyc, a), l1(b_cyc, b), cache


def _guess_generator_term(bundle, domain, x, x_cyc):
    return (bundle.guess(domain, x, x_cyc, fixed=True).pow(2).mean()
            + (1 - bundle.guess(domain, x_cyc, x, fixed=True)).pow(2).mean())


def _guess_discriminator_term(bundle, domain, x, x_cyc):
    x_cyc = x_cyc.detach()
    return ((1 - bundle.guess(domain, x, x_cyc)).pow(2).mean()
            + bundle.guess(domain, x_cyc, x).pow(2).mean())


def guess_loss_generator(bundle, a, b, cache: CycleCache, step=None):
    """Generator side of the honesty loss; guess critics receive no gradient."""
    cache.check(step)
    return (_guess_generator_term(bundle, "A", a, cache.a_cyc),
            _guess_generator_term(bundle, "B", b, cache.b_cyc))


def guess_loss_discriminator(bundle, a, b, cache: CycleCache, step=None):
    """Train the guess critics to score (original, cycle) 1 and the reverse 0."""
    cache.check(step)
    return (_guess_discriminator_term(bundle, "A", a, cache.a_cyc),
            _guess_discriminator_term(bundle, "B", b, cache.b_cyc))


def capacity_loss(embeddings):
    """Mean squared Euclidean norm of the flattened embeddings."""
    if len(embeddings) == 0:
        raise ValueError("capacity loss needs a nonempty batch")
    return embeddings.flatten(1).pow(2).sum(1).mean()


def _fakes(bundle, a, b, stream):
    # fake_A lives in domain A: b translated with a's embedding
    fake_a = bundle.generate("B2A", b,
                             stream.embedding(bundle.encode("A", a)))
    fake_b = bundle.generate("A2B", a,
                             stream.embedding(bundle.encode("B", b)))
    return fake_a, fake_b


def gan_generator(bundle, fake_a, fake_b):
    return ((1 - bundle.discriminate("A", fake_a, fixed=True)).pow(2).mean(),
            (1 - bundle.discriminate("B", fake_b, fixed=True)).pow(2).mean())


def gan_discriminator(bundle, a, b, fake_a, fake_b):
    def term(domain, real, fake):
        return ((1 - bundle.discriminate(domain, real)).pow(2).mean()
                + bundle.discriminate(domain, fake.detach()).pow(2).mean())
    return term("A", a, fake_a), term("B", b, fake_b)


def gan_losses(bundle, a, b, noise, step=0) -> dict:
    """
    Least-squares realism losses for both domains.

    Returns gan_A/gan_B (generator side, fakes pushed to 1) and
    disc_gan_A/disc_gan_B (critic side, real to 1 and fake to 0).
    """
    _check_batches(a, b)
    stream = _as_stream(noise, step, "generator")
    fake_a, fake_b = _fakes(bundle, a, b, stream)
    gan_a, gan_b = gan_generator(bundle, fake_a, fake_b)
    disc_a, disc_b = gan_discriminator(bundle, a, b, fake_a, fake_b)
    return {"gan_A": gan_a, "gan_B": gan_b,
            "disc_gan_A": disc_a, "disc_gan_B": disc_b}


def identity_loss(bundle, a, b, noise, step=0):
    """L1 of each domain's self-translation G_Y2X(x, s_X(x) + eps_g) vs x."""
    _check_batches(a, b)
    stream = _as_stream(noise, step, "generator")
    idt_a = bundle.generate("B2A", a, stream.embedding(bundle.encode("A", a)))
    idt_b = bundle.generate("A2B", b, stream.embedding(bundle.encode("B", b)))
    return l1(idt_a, a), l1(idt_b, b)


# ---------------------------------------------------------------------------
# Assembled objectives
# ---------------------------------------------------------------------------

def generator_losses(bundle, a, b, weights: LossWeights, noise, step=0):
    """
    Every generator-side term and their weighted sum.

    Noise is drawn from the generator stream of the step in a fixed
    order: cycle, realism, identity. Returns (total_G, terms).
    """
    _check_batches(a, b)
    stream = _as_stream(noise, step, "generator")
    cyc_a, cyc_b, cache = noisy_cycle_loss(bundle, a, b, stream, step)
    guess_a, guess_b = guess_loss_generator(bundle, a, b, cache, step)
    norm_a = capacity_loss(bundle.encode("A", a))
    norm_b = capacity_loss(bundle.encode("B", b))
    fake_a, fake_b = _fakes(bundle, a, b, stream)
    gan_a, gan_b = gan_generator(bundle, fake_a, fake_b)
    idt_a, idt_b = identity_loss(bundle, a, b, stream, step)
    terms = {
        "cyc_A": cyc_a, "cyc_B": cyc_b,
        "guess_A": guess_a, "guess_B": guess_b,
        "norm_A": norm_a, "norm_B": norm_b,
        "gan_A": gan_a, "gan_B": gan_b,
        "idt_A": idt_a, "idt_B": idt_b,
    }
    total = sum(
        getattr(weights, f"w_{name}") * (terms[f"{name}_A"]
                                         + terms[f"{name}_B"])
        for name in GENERATOR_TERMS
    )
    return total, terms


def discriminator_losses(bundle, a, b, noise, step=0, guess=True):
    """
    Critic-side realism and guess terms on detached translations.

    With guess False the guess critics are left out of total_D.
    Returns (total_D, terms).
    """
    _check_batches(a, b)
    stream = _as_stream(noise, step, "discriminator")
    with torch.no_grad():
        _, _, cache = noisy_cycle_loss(bundle, a, b, stream, step)
        fake_a, fake_b = _fakes(bundle, a, b, stream)
    disc_a, disc_b = gan_discriminator(bundle, a, b, fake_a, fake_b)
    terms = {"disc_gan_A": disc_a, "disc_gan_B": disc_b}
    total = disc_a + disc_b
    if guess:
        g_a, g_b = guess_loss_discriminator(bundle, a, b, cache, step)
        terms.update({"disc_guess_A": g_a, "disc_guess_B": g_b})
        total = total + g_a + g_b
    return total, terms


def total_losses(bundle, a, b, weights: LossWeights, noise: NoiseConfig,
                 step=0) -> LossReport:
    """Evaluate both sides of one step and collect every term."""
    total_g, g_terms = generator_losses(bundle, a, b, weights, noise, step)
    total_d, d_terms = discriminator_losses(bundle, a, b, noise, step)
    return LossReport.from_terms({
        **g_terms, **d_terms, "total_G": total_g, "total_D": total_d,
    })
