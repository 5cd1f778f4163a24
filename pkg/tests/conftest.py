"""Shared fixtures: a small corpus, a quickly trained checkpoint, micro models.

Session-scoped fixtures keep the expensive parts (corpus PNGs, a short
training run) to one execution for the whole suite.  The checkpoint here
is *quick*, not *good* — tests that need learned behaviour build their
own run (see the end-to-end control tests).
"""

from __future__ import annotations

import random

import numpy as np
import pytest
import torch

from ldla.atlas import default_zone_registry
from ldla.codec import IdentityCodec
from ldla.data import SyntheticCorpusConfig, generate_synthetic_corpus
from ldla.diffusion import make_schedule
from ldla.networks import Denoiser, ScoreNet, micro_denoiser_config, micro_scorenet_config
from ldla.text import HashingTextEncoder
from ldla.training import (
    ModelBundle,
    RngBundle,
    TrainConfig,
    load_checkpoint,
    train,
)


@pytest.fixture(scope="session")
def registry():
    return default_zone_registry()


@pytest.fixture(scope="session")
def schedule():
    return make_schedule()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Two zones, 24 crops each, 64 px — enough for plumbing tests."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SyntheticCorpusConfig(
        n_per_zone=24, seed=1, zones=("forehead", "upper_lip"), crop_size=64
    )
    return generate_synthetic_corpus(cfg, root)


def quick_train_config(manifest, out_dir, **overrides) -> TrainConfig:
    base = dict(
        manifest=str(manifest),
        out_dir=str(out_dir),
        steps=3,
        batch_size=4,
        seed=0,
        codec="toy",
        codec_pretrain_steps=25,
        codec_hidden=16,
        crop_size=64,
        lr=1e-3,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def quick_checkpoint(tiny_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("quick_run")
    return train(quick_train_config(tiny_corpus, out))


@pytest.fixture(scope="session")
def quick_models(quick_checkpoint):
    models = load_checkpoint(quick_checkpoint).models
    models.denoiser.eval()
    models.scorenet.eval()
    return models


def make_micro_models(seed: int = 0, T: int = 50, dtype=torch.float64) -> ModelBundle:
    """A <5k-parameter bundle over raw 3-channel 8x8 latents.

    float64 by default so finite-difference and oracle comparisons have
    headroom; the identity codec keeps latents equal to pixels.
    """
    torch.manual_seed(seed)
    denoiser = Denoiser(micro_denoiser_config(in_channels=3))
    scorenet = ScoreNet(micro_scorenet_config(in_channels=3))
    if dtype == torch.float64:
        denoiser.double()
        scorenet.double()
    codec = IdentityCodec(channels=3)
    codec.freeze()
    return ModelBundle(
        denoiser=denoiser,
        scorenet=scorenet,
        codec=codec,
        text_encoder=HashingTextEncoder(dim=8, dtype=dtype),
        schedule=make_schedule(T=T),
        registry=default_zone_registry(),
    )


@pytest.fixture
def micro_models():
    return make_micro_models()


@pytest.fixture
def rng_bundle():
    return RngBundle.seeded(123)


@pytest.fixture
def np_rng():
    return np.random.default_rng(7)


@pytest.fixture
def py_rng():
    return random.Random(11)
