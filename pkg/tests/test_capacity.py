import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import capacity
import config
import datagen
import trainer
from capacity import ESTIMATOR_TOLERANCE, capacity_bound, estimate_mi
from model import to_tensor
from trainer import TrainConfig
from tests.conftest import StubBundle


@pytest.mark.parametrize("dim,power,sigma,bits", [
    (64, 0.0, 0.5, 0.0),
    (4, 0.25, 0.5, 4.0),
    (1, 3.0, 1.0, 2.0),
])
def test_bound_examples(dim, power, sigma, bits):
    assert capacity_bound(dim, power, sigma) == pytest.approx(bits)


@pytest.mark.parametrize("dim,power,sigma", [
    (4, 1.0, 0.0), (0, 1.0, 1.0), (4, -1.0, 1.0),
])
def test_bound_rejects_bad_arguments(dim, power, sigma):
    with pytest.raises(ValueError):
        capacity_bound(dim, power, sigma)


@given(st.integers(1, 64), st.floats(0, 100), st.floats(0, 100),
       st.floats(0.01, 10), st.floats(0.01, 10))
def test_bound_is_monotone(dim, p1, p2, s1, s2):
    lo, hi = sorted((p1, p2))
    assert capacity_bound(dim, lo, s1) <= capacity_bound(dim, hi, s1)
    assert capacity_bound(dim, hi, s1) <= capacity_bound(dim + 1, hi, s1)
    small, large = sorted((s1, s2))
    assert capacity_bound(dim, hi, large) <= capacity_bound(dim, hi, small)


def test_bound_is_zero_iff_power_is_zero():
    assert capacity_bound(8, 0.0, 0.1) == 0
    assert capacity_bound(8, 1e-6, 0.1) > 0


# ---------------------------------------------------------------------------
# k-NN estimator
# ---------------------------------------------------------------------------

def test_independent_variables_carry_nothing():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(3000), rng.standard_normal(3000)
    assert estimate_mi(x, y) == pytest.approx(0.0, abs=0.1)


@pytest.mark.parametrize("snr", [0.5, 1.0, 4.0])
def test_gaussian_channel_matches_closed_form(snr):
    rng = np.random.default_rng(1)
    sigma = 0.5
    x = rng.normal(0, math.sqrt(snr) * sigma, 5000)
    y = x + rng.normal(0, sigma, 5000)
    assert estimate_mi(x, y) == pytest.approx(0.5 * math.log2(1 + snr),
                                              abs=0.15)


def test_uniform_discrete_variable_carries_its_entropy():
    rng = np.random.default_rng(2)
    x = rng.integers(0, 8, 4000).astype(float)
    assert estimate_mi(x, x.copy()) == pytest.approx(3.0, abs=0.15)


@pytest.mark.parametrize("dim", [1, 2, 4])
@pytest.mark.parametrize("snr", [0.5, 1.0, 4.0])
def test_estimate_stays_under_the_bound(dim, snr):
    rng = np.random.default_rng(dim * 10 + int(snr * 2))
    sigma = 0.5
    power = snr * sigma ** 2
    x = rng.normal(0, math.sqrt(power), (5000, dim))
    y = x + rng.normal(0, sigma, (5000, dim))
    assert estimate_mi(x, y) <= \
        capacity_bound(dim, power, sigma) + ESTIMATOR_TOLERANCE


@pytest.mark.parametrize("post", [np.tanh, np.abs, lambda y: np.round(y, 1)])
def test_post_processing_adds_no_information(post):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(3000)
    y = x + 0.5 * rng.standard_normal(3000)
    assert estimate_mi(x, post(y)) <= estimate_mi(x, y) + ESTIMATOR_TOLERANCE


def test_estimator_limits():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError, match="at least"):
        estimate_mi(rng.standard_normal(500), rng.standard_normal(500))
    with pytest.raises(ValueError, match="exceeds"):
        estimate_mi(rng.standard_normal((1000, 9)), rng.standard_normal(1000))
    with pytest.raises(ValueError, match="unpaired"):
        estimate_mi(rng.standard_normal(1000), rng.standard_normal(1001))


def test_estimate_is_seeded():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(1500)
    y = x + rng.standard_normal(1500)
    assert estimate_mi(x, y, seed=3) == estimate_mi(x, y, seed=3)


# ---------------------------------------------------------------------------
# Model embeddings
# ---------------------------------------------------------------------------

def _images(n=10):
    gen = torch.Generator().manual_seed(0)
    return torch.rand(n, 3, 4, 4, generator=gen, dtype=torch.float64) * 2 - 1


def test_zeroed_encoder_has_no_capacity(tiny_bundle):
    head = tiny_bundle.branches["A"].encoder_head
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
    bound = capacity.measured_capacity(tiny_bundle, "A", _images(), 0.5)
    assert bound.power == 0 and bound.bits == 0
    assert bound.dim == tiny_bundle.embedding_dim


def test_scaled_encoder_quadruples_power(tiny_bundle):
    images = _images()
    before = capacity.measured_capacity(tiny_bundle, "B", images, 0.5)
    head = tiny_bundle.branches["B"].encoder_head
    with torch.no_grad():
        head.weight.mul_(2)
        head.bias.mul_(2)
    after = capacity.measured_capacity(tiny_bundle, "B", images, 0.5)
    assert after.power == pytest.approx(4 * before.power, rel=1e-9)
    assert after.bits >= before.bits


def test_constant_embedding_carries_no_attribute_information():
    codes = np.arange(40) % 4
    bits = capacity.embedding_information(
        StubBundle(emb_value=1.0), "A", _images(40), codes, sigma_g=0.5,
        samples=2000, seed=0)
    assert bits == pytest.approx(0.0, abs=0.1)


@pytest.mark.slow
def test_trained_embeddings_stay_under_their_bound(tmp_path):
    manifest = datagen.write_dataset(
        datagen.build_split(datagen.load_split("A")), tmp_path / "data")
    cfg = TrainConfig.from_dict(config.load_section(
        "train", config.resource_path("train.json"),
        {"data": str(tmp_path / "data"), "seed": 0, "steps": 2000}))
    bundle = trainer.train(cfg, tmp_path / "run").state.bundle
    sigma_g = cfg.noise.sigma_g
    for domain in ("A", "B"):
        images = to_tensor(manifest.images(domain))
        bound = capacity.measured_capacity(bundle, domain, images, sigma_g)
        assert math.isfinite(bound.bits)
        for attr in manifest.split.varying(domain):
            if attr.role == "shared":
                continue
            codes = [a[attr.name] for a in manifest.attrs(domain)]
            bits = capacity.embedding_information(bundle, domain, images,
                                                  codes, sigma_g, seed=0)
            assert bits <= bound.bits + ESTIMATOR_TOLERANCE
