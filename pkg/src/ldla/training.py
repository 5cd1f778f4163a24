"""The four-term training objective, the optimization loop, and checkpoints.

Loss terms (all mean-squared, averaged over batch and elements):

* full-prompt noise prediction — conditioned on the score-carrying prompt;
* zone-prompt noise prediction — conditioned on the zone-identifier prompt;
* latent cycle consistency — translate to a sampled target score with a
  one-step backward estimate, re-noise at the same timestep, translate
  back under the full prompt, penalize reconstruction error against the
  original latent;
* score regression — ScoreNet reads the intermediate latent of the cycle
  and must predict the sampled target score; gradients reach both
  networks.

Per-step randomness is drawn in a fixed order regardless of which loss
weights are active, so ablations (zeroing weights) change nothing about
the shared samples — only which network evaluations happen.  Two RNGs are
carried: a ``torch.Generator`` for tensor draws and a ``random.Random``
for target-score sampling; both serialize into checkpoints so a resumed
run is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch

from .atlas import (
    AgingScore,
    PromptBundle,
    ZoneSpec,
    build_full_prompt,
    build_zone_prompt,
    default_zone_registry,
    load_zone_registry,
    parse_zone_registry,
    registry_by_id,
    sample_target_prompt,
    zone_as_record,
)
from .codec import (
    IdentityCodec,
    LatentCodec,
    ToyCodec,
    calibrate_codec,
    image_to_tensor,
    pretrain_codec,
    reconstruction_error,
)
from .diffusion import NoiseSchedule, make_schedule
from .errors import ConfigError, NumericError, ValidationError
from .networks import (
    Denoiser,
    DenoiserConfig,
    ScoreNet,
    ScoreNetConfig,
    cond_vector,
)
from .text import HashingTextEncoder, derive_seed

CSV_HEADER = "step,l_full,l_zone,l_cycle,l_score,total"

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four loss components; at least one must be positive."""

    lambda_full: float = 1.0
    lambda_zone: float = 0.5
    lambda_cycle: float = 1.0
    lambda_score: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValidationError(f"{name} must be non-negative, got {value}")
        if not any(v > 0 for v in asdict(self).values()):
            raise ValidationError("at least one loss weight must be positive")

    def active_components(self) -> list[str]:
        names = ("l_full", "l_zone", "l_cycle", "l_score")
        values = (self.lambda_full, self.lambda_zone, self.lambda_cycle, self.lambda_score)
        return [n for n, v in zip(names, values) if v > 0]


@dataclass
class TrainingExample:
    crop_latent: torch.Tensor  # (C, h, w), already encoded
    zone_id: str
    ethnicity: str
    source_score: AgingScore


@dataclass
class ModelBundle:
    """Everything needed to evaluate losses or run inference."""

    denoiser: Denoiser
    scorenet: ScoreNet
    codec: LatentCodec
    text_encoder: HashingTextEncoder
    schedule: NoiseSchedule
    registry: list[ZoneSpec]

    @property
    def zones_by_id(self) -> dict[str, ZoneSpec]:
        return registry_by_id(self.registry)


class RngBundle:
    """Paired tensor / python RNGs with symmetric state handling."""

    def __init__(self, torch_gen: torch.Generator, python: random.Random):
        self.torch_gen = torch_gen
        self.python = python

    @classmethod
    def seeded(cls, seed: int) -> "RngBundle":
        g = torch.Generator()
        g.manual_seed(seed)
        return cls(g, random.Random(seed))

    def get_state(self) -> tuple:
        return (self.torch_gen.get_state(), self.python.getstate())

    def set_state(self, state: tuple) -> None:
        self.torch_gen.set_state(state[0])
        self.python.setstate(state[1])


@dataclass(frozen=True)
class LossComponents:
    l_full: float
    l_zone: float
    l_cycle: float
    l_score: float
    total: float


@dataclass(frozen=True)
class LossRecord:
    step: int
    l_full: float
    l_zone: float
    l_cycle: float
    l_score: float
    total: float

    def csv_line(self) -> str:
        return (
            f"{self.step},{self.l_full!r},{self.l_zone!r},"
            f"{self.l_cycle!r},{self.l_score!r},{self.total!r}"
        )


@dataclass
class StepDraws:
    """One step's randomness, drawn up front in a fixed order."""

    t_main: torch.Tensor  # (B,) int64
    eps: torch.Tensor  # (B, C, h, w)
    t_cycle: torch.Tensor  # (B,) int64
    eps_cycle_1: torch.Tensor
    eps_cycle_2: torch.Tensor
    targets: list[PromptBundle]


def draw_step(models: ModelBundle, batch: Sequence[TrainingExample], rng: RngBundle) -> StepDraws:
    """Draw every random quantity a step can need, active losses or not.

    Order is part of the reproducibility contract: timesteps, then the
    three noise grids, then one target-score draw per example.
    """
    z0 = batch[0].crop_latent
    shape = (len(batch), *z0.shape)
    T = models.schedule.T
    g = rng.torch_gen
    t_main = torch.randint(0, T, (len(batch),), generator=g)
    eps = torch.randn(shape, generator=g, dtype=z0.dtype)
    t_cycle = torch.randint(0, T, (len(batch),), generator=g)
    eps1 = torch.randn(shape, generator=g, dtype=z0.dtype)
    eps2 = torch.randn(shape, generator=g, dtype=z0.dtype)
    zones = models.zones_by_id
    targets = [
        sample_target_prompt(
            zones[ex.zone_id], ex.ethnicity, rng.python, ex.source_score.normalized
        )
        for ex in batch
    ]
    return StepDraws(t_main, eps, t_cycle, eps1, eps2, targets)


# ---------------------------------------------------------------------------
# loss computation (batched core + single-example entry points)


def _batch_coeffs(
    sched: NoiseSchedule, t: torch.Tensor, dtype: torch.dtype
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-example (sqrt(alpha_bar), sqrt(1-alpha_bar)) as (B,1,1,1) views.

    Square roots are taken in float64 before casting, matching the scalar
    path in :meth:`NoiseSchedule.coeffs` bit for bit.
    """
    ab = sched.alpha_bar[t]
    return (
        ab.sqrt().to(dtype).view(-1, 1, 1, 1),
        (1.0 - ab).sqrt().to(dtype).view(-1, 1, 1, 1),
    )


def _embed_prompts(models: ModelBundle, prompts: Sequence[str], dtype: torch.dtype) -> torch.Tensor:
    return torch.stack([cond_vector(models.text_encoder(p), dtype) for p in prompts])


def _eps_loss(
    models: ModelBundle,
    z0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    vecs: torch.Tensor,
) -> torch.Tensor:
    c_sig, c_noise = _batch_coeffs(models.schedule, t, z0.dtype)
    zt = c_sig * z0 + c_noise * eps
    pred = models.denoiser(zt, t, vecs)
    return torch.mean((pred - eps) ** 2)


def _cycle_passes(
    models: ModelBundle,
    z0: torch.Tensor,
    t: torch.Tensor,
    eps1: torch.Tensor,
    eps2: torch.Tensor,
    vec_target: torch.Tensor,
    vec_full: Optional[torch.Tensor],
) -> tuple[torch.Tensor, Optional[torch.Tensor], Optional[torch.Tensor]]:
    """Run the translate / translate-back passes at a shared timestep.

    Returns (z_tilde, z_bar, l_cycle); the last two are None when
    ``vec_full`` is None (score-only mode needs just the first pass).
    """
    c_sig, c_noise = _batch_coeffs(models.schedule, t, z0.dtype)
    zt1 = c_sig * z0 + c_noise * eps1
    z_tilde = (zt1 - c_noise * models.denoiser(zt1, t, vec_target)) / c_sig
    if vec_full is None:
        return z_tilde, None, None
    zt2 = c_sig * z_tilde + c_noise * eps2
    z_bar = (zt2 - c_noise * models.denoiser(zt2, t, vec_full)) / c_sig
    l_cycle = torch.mean((z_bar - z0) ** 2)
    return z_tilde, z_bar, l_cycle


def compute_losses(
    models: ModelBundle,
    batch: Sequence[TrainingExample],
    weights: LossWeights,
    draws: StepDraws,
) -> tuple[torch.Tensor, LossComponents]:
    """Weighted total plus per-component values for a batch.

    Components with zero weight are skipped entirely (no network
    evaluation, no gradient) and reported as 0.0 — the draws in ``draws``
    were already made, so skipping changes no shared randomness.
    """
    z0 = torch.stack([ex.crop_latent for ex in batch])
    dtype = z0.dtype
    zones = models.zones_by_id

    need_full = weights.lambda_full > 0
    need_zone = weights.lambda_zone > 0
    need_pass1 = weights.lambda_cycle > 0 or weights.lambda_score > 0
    need_pass2 = weights.lambda_cycle > 0

    vec_full: Optional[torch.Tensor] = None
    if need_full or need_pass2:
        full_prompts = [
            build_full_prompt(zones[ex.zone_id], ex.ethnicity, ex.source_score.normalized)
            for ex in batch
        ]
        vec_full = _embed_prompts(models, full_prompts, dtype)

    zero = torch.zeros((), dtype=dtype)
    l_full = l_zone = l_cycle = l_score = zero
    if need_full:
        l_full = _eps_loss(models, z0, draws.t_main, draws.eps, vec_full)
    if need_zone:
        zone_prompts = [build_zone_prompt(zones[ex.zone_id]) for ex in batch]
        l_zone = _eps_loss(
            models, z0, draws.t_main, draws.eps, _embed_prompts(models, zone_prompts, dtype)
        )
    if need_pass1:
        vec_target = _embed_prompts(models, [b.p_target for b in draws.targets], dtype)
        z_tilde, _, cyc = _cycle_passes(
            models,
            z0,
            draws.t_cycle,
            draws.eps_cycle_1,
            draws.eps_cycle_2,
            vec_target,
            vec_full if need_pass2 else None,
        )
        if need_pass2:
            l_cycle = cyc
        if weights.lambda_score > 0:
            target_scores = torch.tensor(
                [b.target_normalized for b in draws.targets], dtype=dtype
            )
            l_score = torch.mean((target_scores - models.scorenet(z_tilde)) ** 2)

    terms: list[torch.Tensor] = []
    if need_full:
        terms.append(weights.lambda_full * l_full)
    if need_zone:
        terms.append(weights.lambda_zone * l_zone)
    if need_pass2:
        terms.append(weights.lambda_cycle * l_cycle)
    if weights.lambda_score > 0:
        terms.append(weights.lambda_score * l_score)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    components = LossComponents(
        _scalar(l_full), _scalar(l_zone), _scalar(l_cycle), _scalar(l_score), _scalar(total)
    )
    return total, components


def _scalar(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def loss_full(
    models: ModelBundle, example: TrainingExample, t: int, eps: torch.Tensor
) -> torch.Tensor:
    """Noise-prediction MSE under the score-carrying prompt."""
    zone = models.zones_by_id[example.zone_id]
    prompt = build_full_prompt(zone, example.ethnicity, example.source_score.normalized)
    z0 = example.crop_latent.unsqueeze(0)
    t_b = torch.as_tensor([t])
    vecs = _embed_prompts(models, [prompt], z0.dtype)
    return _eps_loss(models, z0, t_b, eps.unsqueeze(0), vecs)


def loss_zone(
    models: ModelBundle, example: TrainingExample, t: int, eps: torch.Tensor
) -> torch.Tensor:
    """Noise-prediction MSE under the zone-identifier prompt."""
    zone = models.zones_by_id[example.zone_id]
    z0 = example.crop_latent.unsqueeze(0)
    t_b = torch.as_tensor([t])
    vecs = _embed_prompts(models, [build_zone_prompt(zone)], z0.dtype)
    return _eps_loss(models, z0, t_b, eps.unsqueeze(0), vecs)


def cycle_block(
    models: ModelBundle,
    example: TrainingExample,
    target: PromptBundle,
    t: int,
    rng: RngBundle,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Translate-and-return at one timestep; fresh noise per pass.

    Returns (z_tilde, z_bar, l_cycle) with the intermediate latent first
    so the score loss can consume it.
    """
    z0 = example.crop_latent.unsqueeze(0)
    eps1 = torch.randn(z0.shape, generator=rng.torch_gen, dtype=z0.dtype)
    eps2 = torch.randn(z0.shape, generator=rng.torch_gen, dtype=z0.dtype)
    t_b = torch.as_tensor([t])
    vec_target = _embed_prompts(models, [target.p_target], z0.dtype)
    vec_full = _embed_prompts(models, [target.p_full], z0.dtype)
    z_tilde, z_bar, l_cycle = _cycle_passes(
        models, z0, t_b, eps1, eps2, vec_target, vec_full
    )
    return z_tilde.squeeze(0), z_bar.squeeze(0), l_cycle


def loss_score(
    models: ModelBundle, z_tilde: torch.Tensor, target_normalized: float
) -> torch.Tensor:
    """Squared error between ScoreNet's reading of z_tilde and the target."""
    if not 0.0 <= target_normalized <= 1.0:
        raise ValidationError(f"target score {target_normalized} outside [0, 1]")
    pred = models.scorenet(z_tilde.unsqueeze(0)).squeeze(0)
    target = torch.as_tensor(target_normalized, dtype=pred.dtype)
    return (target - pred) ** 2


def combined_loss(
    models: ModelBundle,
    example: TrainingExample,
    weights: LossWeights,
    rng: RngBundle,
) -> tuple[torch.Tensor, LossComponents]:
    """Weighted total for one example, drawing all randomness internally."""
    draws = draw_step(models, [example], rng)
    return compute_losses(models, [example], weights, draws)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class TrainState:
    models: ModelBundle
    optimizer: torch.optim.Optimizer
    rng: RngBundle
    step: int = 0
    history: list[LossRecord] = field(default_factory=list)


def train_step(
    state: TrainState, batch: Sequence[TrainingExample], weights: LossWeights
) -> LossRecord:
    """One gradient step on the batch-mean combined loss."""
    if not batch:
        raise ValidationError("train_step needs a nonempty batch")
    draws = draw_step(state.models, batch, state.rng)
    total, comps = compute_losses(state.models, batch, weights, draws)
    if not torch.isfinite(total):
        raise NumericError(
            f"non-finite loss at step {state.step + 1}: "
            f"full={comps.l_full} zone={comps.l_zone} "
            f"cycle={comps.l_cycle} score={comps.l_score}"
        )
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    _assert_finite_parameters(state)
    state.step += 1
    record = LossRecord(
        state.step, comps.l_full, comps.l_zone, comps.l_cycle, comps.l_score, comps.total
    )
    state.history.append(record)
    return record


def _assert_finite_parameters(state: TrainState) -> None:
    for name, module in (("denoiser", state.models.denoiser), ("scorenet", state.models.scorenet)):
        for pname, p in module.named_parameters():
            if not torch.isfinite(p).all():
                raise NumericError(
                    f"non-finite parameter {name}.{pname} after step {state.step + 1}"
                )


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    """Everything a training run needs; JSON round-trippable."""

    manifest: str
    out_dir: str
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    codec: str = "toy"  # "toy" | "identity"
    codec_pretrain_steps: int = 600
    codec_lr: float = 2e-3
    codec_hidden: int = 32
    latent_channels: int = 4
    base_channels: int = 16
    emb_dim: int = 32
    text_dim: int = 32
    text_slots: int = 24
    scorenet_hidden: int = 16
    scorenet_warmup_steps: int = 400
    scorenet_warmup_lr: float = 3e-3
    scorenet_lr: Optional[float] = None  # joint-loop rate; None means use lr
    crop_size: int = 128
    registry_path: Optional[str] = None
    checkpoint_every: int = 500
    checkpoint_out: Optional[str] = None
    log_csv: Optional[str] = None

    def __post_init__(self):
        if self.codec not in ("toy", "identity"):
            raise ConfigError(f"codec must be 'toy' or 'identity', got {self.codec!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "weights" in kwargs and isinstance(kwargs["weights"], dict):
            wraw = kwargs["weights"]
            wknown = set(LossWeights.__dataclass_fields__)
            wunknown = set(wraw) - wknown
            if wunknown:
                raise ConfigError(f"unknown weight keys: {sorted(wunknown)}")
            kwargs["weights"] = LossWeights(**wraw)
        return cls(**kwargs)

    def resolved_checkpoint_out(self) -> Path:
        if self.checkpoint_out:
            return Path(self.checkpoint_out)
        return Path(self.out_dir) / "checkpoint_final.pt"

    def resolved_log_csv(self) -> Path:
        if self.log_csv:
            return Path(self.log_csv)
        return Path(self.out_dir) / "loss_log.csv"


def _load_registry(config: TrainConfig) -> list[ZoneSpec]:
    if config.registry_path:
        return load_zone_registry(config.registry_path)
    return default_zone_registry()


def _construct_models(config: TrainConfig, registry: list[ZoneSpec]) -> ModelBundle:
    """Build untrained networks and an unweighted codec shell for ``config``."""
    if config.codec == "identity":
        codec: LatentCodec = IdentityCodec(3)
    else:
        codec = ToyCodec(config.latent_channels, config.codec_hidden)
    latent_channels = codec.latent_channels
    denoiser = Denoiser(
        DenoiserConfig(
            in_channels=latent_channels,
            base_channels=config.base_channels,
            emb_dim=config.emb_dim,
            text_dim=config.text_dim,
        )
    )
    scorenet = ScoreNet(ScoreNetConfig(latent_channels, config.scorenet_hidden))
    return ModelBundle(
        denoiser=denoiser,
        scorenet=scorenet,
        codec=codec,
        text_encoder=HashingTextEncoder(config.text_dim, config.text_slots),
        schedule=make_schedule(config.T, config.beta_start, config.beta_end),
        registry=registry,
    )


# ---------------------------------------------------------------------------
# checkpoint container (torch.save zip archive; see README for the layout)


def save_checkpoint(path: Path | str, state: TrainState, config: TrainConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    models = state.models
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "registry": [zone_as_record(z) for z in models.registry],
        "denoiser": models.denoiser.state_dict(),
        "scorenet": models.scorenet.state_dict(),
        "codec": models.codec.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "torch_rng": state.rng.torch_gen.get_state(),
        "py_rng": state.rng.python.getstate(),
        "step": state.step,
        "history": [asdict(r) for r in state.history],
    }
    torch.save(payload, path)
    return path


@dataclass
class LoadedCheckpoint:
    models: ModelBundle
    config: TrainConfig
    step: int
    history: list[LossRecord]
    optimizer_state: dict
    torch_rng_state: torch.Tensor
    py_rng_state: tuple
    path: Path


def load_checkpoint(path: Path | str) -> LoadedCheckpoint:
    """Rebuild models and training state from a saved archive.

    Checkpoints are trusted local artifacts (they embed pickled RNG
    state), so this must only be pointed at files you produced.
    """
    path = Path(path)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r} in {path}")
    config = TrainConfig.from_dict(payload["config"])
    registry = parse_zone_registry(json.dumps(payload["registry"]))
    models = _construct_models(config, registry)
    models.denoiser.load_state_dict(payload["denoiser"])
    models.scorenet.load_state_dict(payload["scorenet"])
    models.codec.load_state_dict(payload["codec"])
    models.codec.freeze()
    history = [LossRecord(**r) for r in payload["history"]]
    return LoadedCheckpoint(
        models=models,
        config=config,
        step=payload["step"],
        history=history,
        optimizer_state=payload["optimizer"],
        torch_rng_state=payload["torch_rng"],
        py_rng_state=payload["py_rng"],
        path=path,
    )


# ---------------------------------------------------------------------------
# full training entry point


def _load_examples(
    config: TrainConfig, registry: list[ZoneSpec]
) -> tuple[list, list]:
    """Manifest -> (train records, val records) with images verified."""
    from . import data  # local import; data pulls in image I/O

    records = data.load_manifest(config.manifest)
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    if not train:
        raise ConfigError(f"manifest {config.manifest} has no train-split records")
    zones = registry_by_id(registry)
    unknown = sorted({r.zone_id for r in records} - set(zones))
    if unknown:
        raise ConfigError(f"manifest references zones missing from the registry: {unknown}")
    return train, val


def _record_image_tensor(record, crop_size: int) -> torch.Tensor:
    from . import geometry

    img = geometry.load_image(record.resolved_path)
    if img.shape[0] != crop_size or img.shape[1] != crop_size:
        img = geometry.bilinear_resize(img, crop_size, crop_size)
    return image_to_tensor(img)


def _encode_examples(
    models: ModelBundle, records: Sequence, crop_size: int
) -> list[TrainingExample]:
    examples = []
    with torch.no_grad():
        for record in records:
            tensor = _record_image_tensor(record, crop_size)
            latent = models.codec.encode(tensor)
            score = AgingScore(
                record.zone_id, record.raw_score, record.raw_score / record.scale_max
            )
            examples.append(
                TrainingExample(latent, record.zone_id, record.ethnicity, score)
            )
    return examples


def _build_optimizer(models: ModelBundle, config: TrainConfig) -> torch.optim.Adam:
    """Adam over both nets; ScoreNet may run at its own (usually lower) rate.

    After a supervised warm-up the score regressor should track the joint
    loop slowly — at the shared rate it unlearns its grounding within a few
    thousand steps, because near-clean one-step estimates carry labels
    uncorrelated with what they show.
    """
    return torch.optim.Adam(
        [
            {"params": list(models.denoiser.parameters()), "lr": config.lr},
            {
                "params": list(models.scorenet.parameters()),
                "lr": config.lr if config.scorenet_lr is None else config.scorenet_lr,
            },
        ]
    )


def _warmup_scorenet(
    scorenet: ScoreNet,
    examples: Sequence[TrainingExample],
    steps: int,
    lr: float,
    generator: torch.Generator,
) -> None:
    """Ground ScoreNet on clean latents before the joint loop starts.

    In the joint loop ScoreNet only ever sees one-step estimates labelled
    with the *requested* target; near t=0 the estimate still shows the
    source crop, so those labels are uncorrelated with the input and a
    cold-started regressor settles on predicting the mean.  A short
    supervised pass on (clean latent, recorded score) pairs gives the
    score loss a meaningful gradient direction from the first joint step.
    """
    if steps <= 0 or not examples:
        return
    latents = torch.stack([e.crop_latent.float() for e in examples])
    labels = torch.tensor(
        [e.source_score.normalized for e in examples], dtype=torch.float32
    )
    optimizer = torch.optim.Adam(scorenet.parameters(), lr=lr)
    batch = min(32, len(examples))
    for _ in range(steps):
        idx = torch.randint(len(examples), (batch,), generator=generator)
        loss = torch.nn.functional.mse_loss(scorenet(latents[idx]), labels[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()


def prepare_training(
    config: TrainConfig, resume_from: Optional[Path | str] = None
) -> tuple[TrainState, list[TrainingExample], list[TrainingExample], TrainConfig]:
    """Build (or restore) everything the step loop needs.

    Returns (state, train examples, val examples, effective config).  On
    resume the structural configuration comes from the checkpoint; only
    the step budget and output paths are taken from ``config``.
    """
    if resume_from is not None:
        loaded = load_checkpoint(resume_from)
        effective = replace(
            loaded.config,
            steps=config.steps,
            out_dir=config.out_dir,
            checkpoint_out=config.checkpoint_out,
            log_csv=config.log_csv,
        )
        models = loaded.models
        optimizer = _build_optimizer(models, effective)
        optimizer.load_state_dict(loaded.optimizer_state)
        rng = RngBundle.seeded(0)
        rng.torch_gen.set_state(loaded.torch_rng_state)
        rng.python.setstate(loaded.py_rng_state)
        state = TrainState(models, optimizer, rng, loaded.step, list(loaded.history))
        train_recs, val_recs = _load_examples(effective, models.registry)
        train_ex = _encode_examples(models, train_recs, effective.crop_size)
        val_ex = _encode_examples(models, val_recs, effective.crop_size)
        return state, train_ex, val_ex, effective

    registry = _load_registry(config)
    train_recs, val_recs = _load_examples(config, registry)
    torch.manual_seed(config.seed)  # network initialization determinism
    models = _construct_models(config, registry)
    if isinstance(models.codec, ToyCodec):
        images = [_record_image_tensor(r, config.crop_size) for r in train_recs]
        pretrain_codec(
            models.codec,
            images,
            steps=config.codec_pretrain_steps,
            batch_size=min(16, len(images)),
            lr=config.codec_lr,
            generator=torch.Generator().manual_seed(derive_seed(config.seed, "codec-pretrain")),
        )
        calibrate_codec(models.codec, images[: min(256, len(images))])
    models.codec.freeze()
    train_ex = _encode_examples(models, train_recs, config.crop_size)
    val_ex = _encode_examples(models, val_recs, config.crop_size)
    _warmup_scorenet(
        models.scorenet,
        train_ex,
        steps=config.scorenet_warmup_steps,
        lr=config.scorenet_warmup_lr,
        generator=torch.Generator().manual_seed(derive_seed(config.seed, "scorenet-warmup")),
    )
    optimizer = _build_optimizer(models, config)
    state = TrainState(models, optimizer, RngBundle.seeded(config.seed))
    return state, train_ex, val_ex, config


def train(
    config: TrainConfig,
    resume_from: Optional[Path | str] = None,
    progress: Optional[Callable[[LossRecord], None]] = None,
) -> Path:
    """Run the optimization loop to ``config.steps`` and checkpoint.

    Deterministic given the seed: the same config always produces the
    same checkpoint, and resuming an interrupted run matches the
    uninterrupted one bit for bit.
    """
    state, train_ex, _, effective = prepare_training(config, resume_from)
    out_dir = Path(effective.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = effective.resolved_log_csv()
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    fresh = state.step == 0 or not csv_path.exists()
    with open(csv_path, "a" if not fresh else "w") as log:
        if fresh:
            log.write(CSV_HEADER + "\n")
        while state.step < effective.steps:
            idx = torch.randint(
                0, len(train_ex), (effective.batch_size,), generator=state.rng.torch_gen
            )
            batch = [train_ex[int(i)] for i in idx]
            record = train_step(state, batch, effective.weights)
            log.write(record.csv_line() + "\n")
            log.flush()
            if progress is not None:
                progress(record)
            if (
                effective.checkpoint_every
                and state.step % effective.checkpoint_every == 0
                and state.step < effective.steps
            ):
                save_checkpoint(
                    out_dir / f"checkpoint_{state.step:06d}.pt", state, effective
                )
    final = effective.resolved_checkpoint_out()
    save_checkpoint(final, state, effective)
    return final


def codec_reconstruction_error(
    models: ModelBundle, records: Sequence, crop_size: int = 128
) -> float:
    """Held-out round-trip error of the frozen codec (diagnostic)."""
    images = [_record_image_tensor(r, crop_size) for r in records]
    return reconstruction_error(models.codec, images)
