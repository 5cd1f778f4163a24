"""Trainable networks: the conditional noise-prediction UNet and ScoreNet.

Both are deliberately small so the whole acceptance suite trains on a CPU.
The denoiser is a one-level encoder-decoder with a residual block per
stage; timestep and prompt conditioning enter every block as FiLM
(scale/shift) modulation of a shared embedding.  Prompt conditioning uses
the mean token vector of a :class:`~ldla.text.ConditionEmbedding`, and it
enters twice: through the shared FiLM embedding, and as a handful of
spatially broadcast channels concatenated to the latent before the first
conv.  The second path matters at this scale — it lets the very first
convolution draw prompt-determined structure instead of only re-weighting
structure already present in the latent.

ScoreNet is a convolutional regressor mapping a latent to a single
sigmoid-bounded score in [0, 1].

Construction draws initial weights from torch's global RNG; seed it first
when reproducible initialization matters (the training entry point does).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import NumericError, ShapeError
from .text import ConditionEmbedding


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 4
    base_channels: int = 16
    emb_dim: int = 32
    text_dim: int = 32
    cond_channels: int = 8


@dataclass(frozen=True)
class ScoreNetConfig:
    in_channels: int = 4
    hidden: int = 16


def micro_denoiser_config(in_channels: int = 3) -> DenoiserConfig:
    """Smallest useful config; paired with micro_scorenet_config it stays
    under 5k parameters total, which keeps finite-difference gradient
    checks fast."""
    return DenoiserConfig(
        in_channels=in_channels, base_channels=4, emb_dim=8, text_dim=8, cond_channels=4
    )


def micro_scorenet_config(in_channels: int = 3) -> ScoreNetConfig:
    return ScoreNetConfig(in_channels=in_channels, hidden=8)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal position features for (possibly batched) timesteps."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / max(half - 1, 1)
    )
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


class FilmResBlock(nn.Module):
    """3x3 conv pair with FiLM conditioning after the first conv."""

    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, 2 * c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(x)
        scale, shift = self.emb_proj(torch.nn.functional.silu(emb)).chunk(2, dim=-1)
        h = h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = torch.nn.functional.silu(h)
        h = self.conv2(h)
        return h + self.skip(x)


class Denoiser(nn.Module):
    """Conditional noise predictor epsilon(z_t, t, prompt)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        c, base, emb = config.in_channels, config.base_channels, config.emb_dim
        self.conv_in = nn.Conv2d(c + config.cond_channels, base, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb)
        )
        self.cond_proj = nn.Linear(config.text_dim, emb)
        self.cond_in = nn.Linear(config.text_dim, config.cond_channels)
        self.block_down = FilmResBlock(base, base, emb)
        self.down = nn.Conv2d(base, base * 2, 3, stride=2, padding=1)
        self.block_mid = FilmResBlock(base * 2, base * 2, emb)
        self.up = nn.ConvTranspose2d(base * 2, base, 4, stride=2, padding=1)
        self.block_up = FilmResBlock(base * 2, base, emb)
        self.conv_out = nn.Conv2d(base, c, 3, padding=1)

    @property
    def dtype(self) -> torch.dtype:
        return self.conv_out.weight.dtype

    def forward(self, z: torch.Tensor, t: torch.Tensor, cond_vec: torch.Tensor) -> torch.Tensor:
        """z: (B, C, H, W); t: (B,) timesteps; cond_vec: (B, text_dim)."""
        if z.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"latent has {z.shape[1]} channels, model expects {self.config.in_channels}"
            )
        if z.shape[-1] % 2 or z.shape[-2] % 2:
            raise ShapeError(f"latent spatial size {z.shape[-2:]} must be even")
        emb = self.time_mlp(timestep_embedding(t.to(self.dtype), self.config.emb_dim))
        emb = emb + self.cond_proj(cond_vec.to(self.dtype))
        cmap = self.cond_in(cond_vec.to(self.dtype))[:, :, None, None]
        zin = torch.cat([z, cmap.expand(-1, -1, z.shape[-2], z.shape[-1])], dim=1)
        h0 = self.conv_in(zin)
        h1 = self.block_down(h0, emb)
        h2 = self.down(h1)
        h3 = self.block_mid(h2, emb)
        h4 = self.up(h3)
        out = self.conv_out(self.block_up(torch.cat([h4, h1], dim=1), emb))
        if not torch.isfinite(out).all():
            raise NumericError(
                "non-finite denoiser activation, first occurring in "
                + _first_nonfinite_layer(self, zin, emb)
            )
        return out


class ScoreNet(nn.Module):
    """Latent -> scalar aging score in [0, 1] (sigmoid head)."""

    def __init__(self, config: ScoreNetConfig):
        super().__init__()
        self.config = config
        c, h = config.in_channels, config.hidden
        self.features = nn.Sequential(
            nn.Conv2d(c, h, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(h, h, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Linear(h, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """z: (B, C, H, W) -> (B,) scores in [0, 1]."""
        if z.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"latent has {z.shape[1]} channels, ScoreNet expects {self.config.in_channels}"
            )
        pooled = self.features(z).flatten(1)
        return torch.sigmoid(self.head(pooled)).squeeze(-1)


# ---------------------------------------------------------------------------
# convenience wrappers for single examples (the batched forward is the
# primitive; these adapt an unbatched latent plus a ConditionEmbedding)

def cond_vector(cond: ConditionEmbedding, dtype: torch.dtype) -> torch.Tensor:
    return cond.mean_vector().to(dtype)


def denoiser_predict(
    model: Denoiser, zt: torch.Tensor, t: int, cond: ConditionEmbedding
) -> torch.Tensor:
    """Single-example prediction; zt is (C, H, W).

    Casts the latent to the model dtype: sampling carries latents in
    float64, networks run in whatever they were trained in.
    """
    t_tensor = torch.as_tensor([float(t)])
    zt = zt.to(model.dtype)
    out = model(zt.unsqueeze(0), t_tensor, cond_vector(cond, model.dtype).unsqueeze(0))
    return out.squeeze(0)


def scorenet_predict(model: ScoreNet, z: torch.Tensor) -> torch.Tensor:
    """Single-example score as a 0-dim tensor."""
    return model(z.unsqueeze(0)).squeeze(0)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters and buffers, order-stable by name."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _first_nonfinite_layer(model: Denoiser, zin: torch.Tensor, emb: torch.Tensor) -> str:
    """Replay the forward pass layer by layer to name the first bad stage.

    ``zin`` is the latent with conditioning channels already concatenated,
    exactly what ``conv_in`` consumed in the failing pass.
    """
    with torch.no_grad():
        stages: list[tuple[str, torch.Tensor]] = []
        h0 = model.conv_in(zin)
        stages.append(("conv_in", h0))
        h1 = model.block_down(h0, emb)
        stages.append(("block_down", h1))
        h2 = model.down(h1)
        stages.append(("down", h2))
        h3 = model.block_mid(h2, emb)
        stages.append(("block_mid", h3))
        h4 = model.up(h3)
        stages.append(("up", h4))
        h5 = model.block_up(torch.cat([h4, h1], dim=1), emb)
        stages.append(("block_up", h5))
        stages.append(("conv_out", model.conv_out(h5)))
        for name, value in stages:
            if not torch.isfinite(value).all():
                return name
    return "conv_out"
