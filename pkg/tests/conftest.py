"""Shared fixtures: tiny bundles, stub translators and small toy datasets."""
import numpy as np
import pytest
import torch

import datagen
from model import ModelBundle, ModelConfig, to_images, to_tensor


def tiny_model_config(resolution=4, **kw) -> ModelConfig:
    params = dict(resolution=resolution, channels=3, base_channels=2,
                  n_res=1, embedding_size=2, disc_channels=2,
                  disc_downsample=1, norm="none")
    params.update(kw)
    return ModelConfig(**params)


def make_bundle(config=None, seed=0, dtype=torch.float64) -> ModelBundle:
    torch.manual_seed(seed)
    return ModelBundle(config or tiny_model_config()).to(dtype)


@pytest.fixture
def tiny_bundle():
    return make_bundle()


@pytest.fixture
def smooth_bundle():
    """
    Tiny bundle with every parameter, biases included, drawn from
    N(0, 0.3^2) so (Leaky)ReLU inputs stay clear of their kinks.
    """
    bundle = make_bundle(tiny_model_config(init_std=0.3))
    gen = torch.Generator().manual_seed(3)
    with torch.no_grad():
        for p in bundle.parameters():
            p.copy_(0.3 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return bundle


@pytest.fixture
def tiny_batches():
    gen = torch.Generator().manual_seed(1)
    a = torch.rand(3, 3, 4, 4, generator=gen, dtype=torch.float64) * 2 - 1
    b = torch.rand(3, 3, 4, 4, generator=gen, dtype=torch.float64) * 2 - 1
    return a, b


class StubBundle:
    """
    Hand-controlled stand-in for a ModelBundle.

    generate adds a per-direction constant to the source; critics return
    constants or apply the given callables.
    """

    def __init__(self, offsets=None, disc=0.5, guess=0.5, emb_size=2,
                 emb_value=0.0):
        self.offsets = offsets or {"A2B": 0.0, "B2A": 0.0}
        self.disc = disc
        self.guess_value = guess
        self.emb_size = emb_size
        self.emb_value = emb_value

    def encode(self, domain, x):
        return torch.full((len(x), 1, self.emb_size, self.emb_size),
                          self.emb_value, dtype=x.dtype)

    def generate(self, direction, x, embedding):
        return x + self.offsets[direction]

    def _apply(self, value, *inputs):
        x = inputs[0]
        if callable(value):
            v = value(*inputs)
            return v.reshape(len(x), 1, 1, 1).expand(len(x), 1, 2, 2)
        return torch.full((len(x), 1, 2, 2), float(value), dtype=x.dtype)

    def discriminate(self, domain, x, fixed=False):
        return self._apply(self.disc, x)

    def guess(self, domain, x, y, fixed=False):
        return self._apply(self.guess_value, x, y)


class RerenderTranslator:
    """Decodes its source with the attribute oracle and renders it again."""

    def encode(self, domain, x):
        return torch.zeros(len(x), 1, 1, 1, dtype=x.dtype)

    def generate(self, direction, x, embedding):
        images = to_images(x)
        resolution = images.shape[1:3]
        rendered = np.stack([datagen.render(attrs, resolution)
                             for attrs in datagen.decode_batch(images)])
        return to_tensor(rendered, dtype=x.dtype)


def small_manifest(split="A", n_a=24, n_b=24, resolution=32, seed=0):
    cfg = datagen.load_split(split).with_overrides(
        seed=seed, n_a=n_a, n_b=n_b, resolution=resolution)
    return datagen.build_split(cfg)


@pytest.fixture
def toy_manifest():
    return small_manifest()


def check_gradients(loss_fn, params, n_entries=3, h=1e-6, rtol=1e-3,
                    atol=1e-7, seed=0):
    """
    Compare autograd gradients of loss_fn() with central differences on a
    few randomly chosen entries of each parameter tensor.

    Entries whose forward and backward differences disagree sit on a
    (Leaky)ReLU kink within h and are replaced by other entries.
    """
    def close(x, y):
        return abs(x - y) <= rtol * max(abs(x), abs(y)) + atol

    base = loss_fn().item()
    analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    rng = np.random.default_rng(seed)
    for p, g in zip(params, analytic):
        g = torch.zeros_like(p) if g is None else g
        flat, gflat = p.data.view(-1), g.reshape(-1)
        checked = 0
        for i in rng.permutation(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
            forward, backward = (up - base) / h, (base - down) / h
            if abs(forward - backward) > \
                    0.1 * max(abs(forward), abs(backward)) + 1e-5:
                continue
            numeric = (up - down) / (2 * h)
            expected = gflat[i].item()
            assert close(numeric, expected), \
                (p.shape, int(i), numeric, expected)
            checked += 1
            if checked == n_entries:
                break
        assert checked == min(n_entries, flat.numel()), \
            (p.shape, "no smooth entries")
