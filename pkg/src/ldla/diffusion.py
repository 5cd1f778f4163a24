"""Noise schedule, forward diffusion, one-step clean estimate, guided sampling.

Latents are plain ``torch.Tensor`` grids of shape (C, H, W) or batched
(B, C, H, W); every operation here is shape-preserving arithmetic.  The
schedule holds the per-step noise rates ``betas`` and their cumulative
signal products ``alpha_bar`` in float64, and the arithmetic stays in
float64 end to end — float32 latents promote on entry and results come
back float64.  This matters: the one-step inversion divides by
sqrt(alpha_bar_t), which approaches 1/150 at the tail of the default
schedule, so any rounding of the noisy latent to float32 would be
amplified into ~1e-5 reconstruction error.  Callers cast back to their
working dtype at network or codec boundaries.

The multi-step sampler is deterministic (no ancestral noise): each step
forms the one-step clean estimate from the guided noise prediction and
re-projects it onto the next timestep of the plan.  This makes inference
reproducible under a seed and lets an oracle noise predictor invert the
forward process exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch

from .errors import DomainError, ShapeError

# Classic defaults: 1000 steps, linear beta ramp.
DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

NoisePredictor = Callable[[torch.Tensor, torch.Tensor, object], torch.Tensor]
"""Callable (latent, timestep tensor, conditioning) -> predicted noise."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion timestep schedule.

    ``betas`` and ``alpha_bar`` are float64 tensors of length ``T`` with
    ``alpha_bar[t]`` the cumulative product of ``1 - betas[:t+1]``.
    """

    T: int
    betas: torch.Tensor
    alpha_bar: torch.Tensor

    def coeffs(self, t: int) -> tuple[torch.Tensor, torch.Tensor]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) as float64 scalars."""
        if not 0 <= t < self.T:
            raise DomainError(f"timestep {t} outside [0, {self.T})")
        ab = self.alpha_bar[t]
        return ab.sqrt(), (1.0 - ab).sqrt()


@dataclass(frozen=True)
class TimestepPlan:
    """Inference timestep grid.

    ``full_grid`` holds ``num_steps`` timesteps uniformly spaced over
    [0, T), descending.  ``active`` is the suffix at or below the noise
    strength cutoff; only active steps are executed.
    """

    full_grid: tuple[int, ...]
    active: tuple[int, ...]


def make_schedule(
    T: int = DEFAULT_TIMESTEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build a linear-beta schedule with exact cumulative products."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise DomainError(
            f"beta bounds must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alpha_bar = torch.cumprod(1.0 - betas, dim=0)
    return NoiseSchedule(T=T, betas=betas, alpha_bar=alpha_bar)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {tuple(b.shape)} does not match {tuple(a.shape)}")


def forward_diffuse(
    z0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule
) -> torch.Tensor:
    """Noise a clean latent to timestep ``t``: sqrt(ab)*z0 + sqrt(1-ab)*eps.

    The result is float64 (see the module docstring); round-tripping
    through :func:`one_step_estimate` is then exact to ~1e-13 even for
    float32 inputs at the noisiest timesteps.
    """
    _check_same_shape(z0, eps, "forward_diffuse noise")
    c_signal, c_noise = sched.coeffs(t)
    return c_signal * z0.double() + c_noise * eps.double()


def one_step_estimate(
    zt: torch.Tensor, eps_pred: torch.Tensor, t: int, sched: NoiseSchedule
) -> torch.Tensor:
    """Clean-latent estimate from a noisy latent and a noise prediction.

    Inverts the forward closed form in a single step:
    (zt - sqrt(1-ab)*eps_pred) / sqrt(ab).  The division is the numerically
    delicate spot — 1/sqrt(ab) is ~150 at the schedule tail — hence the
    float64 arithmetic.
    """
    _check_same_shape(zt, eps_pred, "one_step_estimate prediction")
    c_signal, c_noise = sched.coeffs(t)
    return (zt.double() - c_noise * eps_pred.double()) / c_signal


def guided_epsilon(
    eps_cond: torch.Tensor, eps_uncond: torch.Tensor, g: float
) -> torch.Tensor:
    """Interpolate noise predictions: uncond + g * (cond - uncond)."""
    _check_same_shape(eps_cond, eps_uncond, "guided_epsilon")
    return eps_uncond + g * (eps_cond - eps_uncond)


def plan_timesteps(
    gamma_inf: int, gamma_n: float, sched: NoiseSchedule
) -> TimestepPlan:
    """Lay out the inference grid and select the executed suffix.

    ``gamma_inf`` timesteps are spread uniformly over [0, T) (both ends
    included, rounded to integers); the active suffix keeps those at or
    below floor(gamma_n * T).  Defaults (40, 0.2) on T=1000 give 8 active
    steps.
    """
    if not 1 <= gamma_inf <= sched.T:
        raise DomainError(f"gamma_inf {gamma_inf} outside [1, {sched.T}]")
    if not 0.0 < gamma_n <= 1.0:
        raise DomainError(f"gamma_n {gamma_n} outside (0, 1]")
    if gamma_inf == 1:
        grid = [0]
    else:
        span = torch.linspace(0, sched.T - 1, gamma_inf, dtype=torch.float64)
        grid = [int(v) for v in torch.round(span).tolist()]
    if len(set(grid)) != len(grid):
        raise DomainError(f"timestep grid of {gamma_inf} steps collapsed after rounding")
    full = tuple(sorted(grid, reverse=True))
    cutoff = int(gamma_n * sched.T)
    active = tuple(t for t in full if t <= cutoff)
    if not active:
        raise DomainError(
            f"no active timesteps for gamma_n={gamma_n} (cutoff {cutoff})"
        )
    return TimestepPlan(full_grid=full, active=active)


def denoise(
    z_start: torch.Tensor,
    plan: TimestepPlan,
    sched: NoiseSchedule,
    cond,
    uncond,
    g: float,
    denoiser: NoisePredictor,
    rng: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Run the active timesteps high-to-low and return the clean estimate.

    ``z_start`` must already be diffused to ``plan.active[0]``.  At each
    step the predictor is evaluated under both conditionings, combined with
    ``guided_epsilon``, and the update is deterministic: the clean estimate
    is re-projected onto the next (lower) timestep with the same guided
    noise.  ``rng`` is accepted for interface stability; the deterministic
    update draws nothing from it.  Exactly ``2 * len(plan.active)``
    predictor calls are made.
    """
    del rng
    z = z_start
    steps = plan.active
    for i, t in enumerate(steps):
        t_tensor = torch.as_tensor(t)
        eps_c = denoiser(z, t_tensor, cond)
        _check_same_shape(z, eps_c, "denoiser output (cond)")
        eps_u = denoiser(z, t_tensor, uncond)
        _check_same_shape(z, eps_u, "denoiser output (uncond)")
        eps_hat = guided_epsilon(eps_c, eps_u, g)
        z0_hat = one_step_estimate(z, eps_hat, t, sched)
        if i + 1 == len(steps):
            return z0_hat
        t_next = steps[i + 1]
        c_signal, c_noise = sched.coeffs(t_next)
        z = c_signal * z0_hat + c_noise * eps_hat.double()
    raise DomainError("plan has no active timesteps")
