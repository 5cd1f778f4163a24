"""Image-to-image aging: per-crop latent translation and face orchestration.

One crop translation = encode, diffuse to the first active timestep of
the planned grid (noise strength picks the suffix), guided multi-step
denoise against the score-carrying prompt with an empty-prompt
unconditional branch, decode.  The whole-face pass repeats this per
targeted zone in registry order, blending each translated crop back with
its feather mask; untargeted zones are untouched.

Determinism: the per-crop noise is seeded by the request seed mixed with
the zone id, so results do not depend on zone processing order for
non-overlapping zones, and identical requests reproduce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import torch

from .atlas import ZoneSpec, build_full_prompt
from .codec import image_to_tensor, tensor_to_image
from .diffusion import denoise, forward_diffuse, plan_timesteps
from .errors import DomainError, ShapeError, ValidationError
from .geometry import (
    CROP_SIZE,
    bilinear_resize,
    blend_crop,
    extract_crop,
    feather_mask,
    locate_zone,
)
from .networks import denoiser_predict
from .text import derive_seed
from .training import ModelBundle

# Verbatim refiner conditioning, including the original spelling.
REFINER_PROMPT = "Utra realistic image of a human face"

DEFAULT_REFINER_STRENGTH = 0.05


@dataclass(frozen=True)
class InferenceParams:
    noise_strength: float = 0.2  # gamma_n: schedule fraction applied before denoising
    num_steps: int = 40  # gamma_inf: grid resolution over the schedule
    guidance_scale: float = 0.8  # gamma_g: cond/uncond interpolation weight
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.noise_strength <= 1.0:
            raise DomainError(f"noise_strength {self.noise_strength} outside (0, 1]")
        if self.num_steps < 1:
            raise DomainError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.guidance_scale < 0.0:
            raise DomainError(f"guidance_scale must be >= 0, got {self.guidance_scale}")


@dataclass(frozen=True)
class ZoneTarget:
    zone_id: str
    target_normalized: float

    def __post_init__(self):
        if not 0.0 <= self.target_normalized <= 1.0:
            raise ValidationError(
                f"target for {self.zone_id!r} is {self.target_normalized}, outside [0, 1]"
            )


def translate_crop(
    crop: np.ndarray,
    zone: ZoneSpec,
    ethnicity: str,
    target: float,
    params: InferenceParams,
    models: ModelBundle,
) -> np.ndarray:
    """Re-render one crop at the requested aging score.

    The crop must be square RGB float in [0, 1] (the trained size is
    128x128; the caller resizes).  Deterministic under ``params.seed``.
    """
    if crop.ndim != 3 or crop.shape[2] != 3 or crop.shape[0] != crop.shape[1]:
        raise ShapeError(f"expected square (S, S, 3) crop, got shape {crop.shape}")
    if not 0.0 <= target <= 1.0:
        raise DomainError(f"target score {target} outside [0, 1]")
    sched = models.schedule
    plan = plan_timesteps(params.num_steps, params.noise_strength, sched)
    with torch.no_grad():
        z0 = models.codec.encode(image_to_tensor(crop))
        g = torch.Generator().manual_seed(params.seed)
        eps = torch.randn(z0.shape, generator=g, dtype=z0.dtype)
        z_start = forward_diffuse(z0, plan.active[0], eps, sched)
        cond = models.text_encoder(build_full_prompt(zone, ethnicity, target))
        uncond = models.text_encoder("")

        def predictor(z: torch.Tensor, t: torch.Tensor, c) -> torch.Tensor:
            return denoiser_predict(models.denoiser, z, int(t), c)

        z0_hat = denoise(
            z_start, plan, sched, cond, uncond, params.guidance_scale, predictor
        )
        return tensor_to_image(models.codec.decode(z0_hat.to(z0.dtype)))


TargetsLike = Union[Sequence[ZoneTarget], Mapping[str, float]]


def _normalize_targets(targets: TargetsLike, registry: Sequence[ZoneSpec]) -> dict[str, float]:
    valid = [z.zone_id for z in registry]
    if isinstance(targets, Mapping):
        items = [ZoneTarget(k, float(v)) for k, v in targets.items()]
    else:
        items = list(targets)
    unknown = sorted({t.zone_id for t in items} - set(valid))
    if unknown:
        raise ValidationError(f"unknown zone ids {unknown}; valid ids: {valid}")
    return {t.zone_id: t.target_normalized for t in items}


def age_face(
    face: np.ndarray,
    targets: TargetsLike,
    ethnicity: str,
    params: InferenceParams,
    models: ModelBundle,
    registry: Optional[Sequence[ZoneSpec]] = None,
    landmarks: Optional[Mapping[str, tuple[float, float]]] = None,
) -> np.ndarray:
    """Apply per-zone aging targets to an aligned face.

    Zones are processed in registry order; overlapping feathered regions
    therefore compose later-over-earlier.  Pixels outside every targeted
    zone's rectangle are bit-identical to the input.
    """
    registry = list(registry) if registry is not None else models.registry
    wanted = _normalize_targets(targets, registry)
    working = face.copy()
    if not wanted:
        return working
    for zone in registry:
        if zone.zone_id not in wanted:
            continue
        region = locate_zone(working, zone, landmarks)
        crop = extract_crop(working, region, CROP_SIZE)
        zone_params = replace(params, seed=derive_seed(params.seed, zone.zone_id))
        translated = translate_crop(
            crop, zone, ethnicity, wanted[zone.zone_id], zone_params, models
        )
        resized = bilinear_resize(translated, region.height, region.width)
        working = blend_crop(working, region, resized, feather_mask(region))
    return working


# ---------------------------------------------------------------------------
# refiner


class IdentityRefiner:
    """Desk-scale default: passes the face through untouched."""

    is_identity = True

    def refine(self, face: np.ndarray, prompt: str, strength: float) -> np.ndarray:
        del prompt, strength
        return face


class DiffusionRefiner:
    """Whole-face low-strength img2img pass with the trained model.

    Pluggable stand-in for an external refiner model; quality is bounded
    by the toy networks.  Deterministic via an internal derived seed.
    """

    is_identity = False

    def __init__(self, models: ModelBundle, num_steps: int = 40, seed: int = 0):
        self.models = models
        self.num_steps = num_steps
        self.seed = derive_seed(seed, "refiner")

    def refine(self, face: np.ndarray, prompt: str, strength: float) -> np.ndarray:
        if strength < 0.0 or strength > 1.0:
            raise DomainError(f"refiner strength {strength} outside [0, 1]")
        models = self.models
        with torch.no_grad():
            z0 = models.codec.encode(image_to_tensor(face))
            if strength == 0.0:
                return tensor_to_image(models.codec.decode(z0))
            sched = models.schedule
            plan = plan_timesteps(self.num_steps, strength, sched)
            g = torch.Generator().manual_seed(self.seed)
            eps = torch.randn(z0.shape, generator=g, dtype=z0.dtype)
            z_start = forward_diffuse(z0, plan.active[0], eps, sched)
            cond = models.text_encoder(prompt)
            uncond = models.text_encoder("")

            def predictor(z: torch.Tensor, t: torch.Tensor, c) -> torch.Tensor:
                return denoiser_predict(models.denoiser, z, int(t), c)

            z0_hat = denoise(z_start, plan, sched, cond, uncond, 1.0, predictor)
            return tensor_to_image(models.codec.decode(z0_hat.to(z0.dtype)))


def refine_face(
    face: np.ndarray,
    models: ModelBundle,
    strength: float = DEFAULT_REFINER_STRENGTH,
    refiner=None,
) -> np.ndarray:
    """Final whole-face blending pass; identity refiner by default."""
    del models  # reserved for refiners constructed here in the future
    active = refiner if refiner is not None else IdentityRefiner()
    return active.refine(face, REFINER_PROMPT, strength)
