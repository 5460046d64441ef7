#!/usr/bin/python3
"""Network roles of the translator and their composition."""
import functools
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

import storage
from config import ConfigError
from networks import DomainBranch, PatchDiscriminator, patch_map_size
from networks.blocks import NORMS, init_weights

DOMAINS = ("A", "B")
DIRECTIONS = ("A2B", "B2A")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; enough to rebuild a bundle."""
    resolution: int = 32
    channels: int = 3
    base_channels: int = 32
    n_res: int = 2
    embedding_size: int = 8
    disc_channels: int = 32
    disc_downsample: int = 2
    norm: str = "instance"
    init_std: float = 0.02

    def __post_init__(self):
        if self.resolution < 4 or self.resolution % 4:
            raise ConfigError("model resolution must be a multiple of 4")
        if self.embedding_size < 1:
            raise ConfigError("embedding_size must be >= 1")
        if self.disc_downsample < 1 or patch_map_size(
                self.resolution, self.disc_downsample) < 1:
            raise ConfigError(
                f"disc_downsample={self.disc_downsample} leaves no patches "
                f"at resolution {self.resolution}"
            )
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**data)


def _source_domain(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction: {direction!r}")
    return direction[0]


def _check_domain(domain: str):
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain: {domain!r}")


class ModelBundle(nn.Module):
    """
    All networks of one translator.

    branches[X] holds s_X and G_X2Y over one shared trunk; discs[X] is the
    realism critic D_X and guessers[X] the guess critic D^gs_X. Images are
    NxCxHxW tensors in [-1, 1].
    """

    def __init__(self, config: ModelConfig = None):
        super().__init__()
        self.config = config or ModelConfig()
        c = self.config
        self.branches = nn.ModuleDict({
            d: DomainBranch(c.channels, c.base_channels, c.n_res,
                            c.embedding_size, c.norm)
            for d in DOMAINS
        })
        self.discs = nn.ModuleDict({
            d: PatchDiscriminator(c.channels, c.disc_channels,
                                  c.disc_downsample, c.norm)
            for d in DOMAINS
        })
        self.guessers = nn.ModuleDict({
            d: PatchDiscriminator(2 * c.channels, c.disc_channels,
                                  c.disc_downsample, c.norm)
            for d in DOMAINS
        })
        self.apply(functools.partial(init_weights, std=c.init_std))

    @property
    def embedding_shape(self) -> tuple:
        size = self.config.embedding_size
        return (1, size, size)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_size ** 2

    @property
    def patch_size(self) -> int:
        return patch_map_size(self.config.resolution,
                              self.config.disc_downsample)

    def param_groups(self) -> dict:
        """Named parameter groups: generator side, realism and guess critics."""
        return {
            "generator": list(self.branches.parameters()),
            "disc": list(self.discs.parameters()),
            "guess": list(self.guessers.parameters()),
        }

    def generator_parameters(self) -> list:
        return list(self.branches.parameters())

    def discriminator_parameters(self) -> list:
        return list(self.discs.parameters()) + list(
            self.guessers.parameters())

    def check_images(self, x, name="image"):
        c = self.config
        expected = (c.channels, c.resolution, c.resolution)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"{name}: expected Nx{c.channels}x{c.resolution}x"
                f"{c.resolution}, got {tuple(x.shape)}"
            )

    def check_embedding(self, e, name="embedding"):
        if e.dim() != 4 or tuple(e.shape[1:]) != self.embedding_shape:
            raise ValueError(
                f"{name}: expected Nx{'x'.join(map(str, self.embedding_shape))}"
                f", got {tuple(e.shape)}"
            )

    def encode(self, domain, x):
        _check_domain(domain)
        self.check_images(x)
        return self.branches[domain].encode(x)

    def generate(self, direction, x, embedding):
        source = _source_domain(direction)
        self.check_images(x, "source")
        self.check_embedding(embedding, "guide embedding")
        if len(x) != len(embedding):
            raise ValueError(
                f"batch mismatch: {len(x)} sources, {len(embedding)} guides"
            )
        return self.branches[source].generate(x, embedding)

    def discriminate(self, domain, x, fixed=False):
        """
        Realism critic scores of x. With fixed the critic's parameters are
        detached, so gradients only reach x.
        """
        _check_domain(domain)
        self.check_images(x)
        return _run(self.discs[domain], x, fixed)

    def guess(self, domain, x, y, fixed=False):
        _check_domain(domain)
        self.check_images(x, "first input")
        self.check_images(y, "second input")
        if x.shape != y.shape:
            raise ValueError("guess inputs must have equal shapes")
        return _run(self.guessers[domain], torch.cat([x, y], dim=1), fixed)


def _run(module, x, fixed):
    if not fixed:
        return module(x)
    params = {name: p.detach() for name, p in module.named_parameters()}
    return functional_call(module, params, (x,))


# ---------------------------------------------------------------------------
# Role operations
# ---------------------------------------------------------------------------

def encode(bundle, domain, img):
    """s_X(img): the domain-specific embedding of img from domain X."""
    return bundle.encode(domain, img)


def translate(bundle, direction, source, guide_embedding):
    """G_X2Y(source, embedding), output in [-1, 1]."""
    return bundle.generate(direction, source, guide_embedding)


def guided_translate(bundle, direction, source, guide):
    """F_X2Y(source, guide) = G_X2Y(source, s_Y(guide))."""
    target = direction[-1]
    return translate(bundle, direction, source,
                     encode(bundle, target, guide))


def discriminate(bundle, domain, img):
    return bundle.discriminate(domain, img)


def guess(bundle, domain, x, y):
    return bundle.guess(domain, x, y)


# ---------------------------------------------------------------------------
# Reference translators
# ---------------------------------------------------------------------------

class IdentityTranslator:
    """Returns the source unchanged and carries nothing in its embedding."""

    def encode(self, domain, x):
        return torch.zeros(len(x), 1, 1, 1, dtype=x.dtype)

    def generate(self, direction, x, embedding):
        return x


class GuideCopyTranslator:
    """Returns the guide verbatim: the embedding is the guide image."""

    def encode(self, domain, x):
        return x

    def generate(self, direction, x, embedding):
        return embedding


# ---------------------------------------------------------------------------
# Tensor conversion
# ---------------------------------------------------------------------------

def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """NxHxWxC numpy images -> NxCxHxW tensor."""
    return torch.as_tensor(np.asarray(images)).permute(0, 3, 1, 2).to(dtype)


def to_images(x: torch.Tensor) -> np.ndarray:
    """NxCxHxW tensor -> NxHxWxC float32 numpy images."""
    return x.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, bundle: ModelBundle, state: dict = None,
                    meta: dict = None) -> Path:
    """
    Write the parameter blob and its JSON sidecar.

    Args:
        path: Target .pt path; the sidecar shares its stem
        bundle: Model to store
        state: Extra tensors/dicts stored in the blob (optimizers etc.)
        meta: Extra sidecar fields (seed, step, loss weights ...)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"model": bundle.state_dict(), **(state or {})}, path)
    storage.write_sidecar(path, {"model": bundle.config.to_dict(),
                                 **(meta or {})})
    return path


def load_checkpoint(path):
    """
    Rebuild a bundle from a checkpoint.

    Returns (bundle, blob, meta) where blob is the full saved dict and
    meta the sidecar.
    """
    path = Path(path)
    meta = storage.read_sidecar(path)
    if meta is None:
        raise ConfigError(f"checkpoint {path} has no sidecar metadata")
    bundle = ModelBundle(ModelConfig.from_dict(meta["model"]))
    blob = torch.load(path, map_location="cpu")
    bundle.load_state_dict(blob["model"])
    return bundle, blob, meta
