"""Frozen image codecs: pixel-identity and a small learned autoencoder.

Diffusion runs in latent space; the codec is the fixed bridge between
pixel crops and latents.  Two implementations:

* :class:`IdentityCodec` — latent == pixel grid (spatial factor 1).  Used
  by unit tests so diffusion algebra can be checked directly on pixels.
* :class:`ToyCodec` — a small convolutional autoencoder with spatial
  factor 4 (128x128x3 -> 32x32xC), pretrained on the synthetic corpus and
  then frozen.  Latents are standardized with per-channel statistics
  measured after pretraining so the diffusion process sees roughly
  unit-scale inputs.

Both codecs are frozen with respect to diffusion training: their
parameters never receive gradients and never enter the optimizer.

Images cross this boundary as (C, H, W) float tensors in [0, 1]; the
numpy (H, W, C) convention used by the geometry module converts here.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ShapeError


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, C) float array in [0,1] -> (C, H, W) tensor."""
    if image.ndim != 3:
        raise ShapeError(f"expected (H, W, C) image, got shape {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image)).to(dtype).permute(2, 0, 1)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(C, H, W) tensor -> (H, W, C) float32 array clamped to [0,1]."""
    if t.dim() != 3:
        raise ShapeError(f"expected (C, H, W) tensor, got shape {tuple(t.shape)}")
    return t.detach().clamp(0.0, 1.0).permute(1, 2, 0).to(torch.float32).cpu().numpy()


class LatentCodec(nn.Module):
    """Interface: encode pixels to latents and decode back.

    Subclasses set ``spatial_factor`` and ``latent_channels``.  encode and
    decode accept (C, H, W) or batched (B, C, H, W) tensors.
    """

    spatial_factor: int = 1
    latent_channels: int = 3

    def encode(self, image: torch.Tensor) -> torch.Tensor:  # pragma: no cover - interface
        raise NotImplementedError

    def decode(self, z: torch.Tensor) -> torch.Tensor:  # pragma: no cover - interface
        raise NotImplementedError

    def check_divisible(self, image: torch.Tensor) -> None:
        h, w = image.shape[-2], image.shape[-1]
        f = self.spatial_factor
        if h % f or w % f:
            raise ShapeError(
                f"image size {h}x{w} not divisible by codec spatial factor {f}"
            )

    def freeze(self) -> "LatentCodec":
        """Stop all parameter updates; always called before training/inference."""
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


class IdentityCodec(LatentCodec):
    """Latent space == pixel space.  decode(encode(x)) is x itself."""

    spatial_factor = 1

    def __init__(self, channels: int = 3):
        super().__init__()
        self.latent_channels = channels

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        return image

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return z


class ToyCodec(LatentCodec):
    """Learned factor-4 autoencoder for 3-channel crops.

    Encoder: two stride-2 convs with one full-resolution conv between.
    Decoder mirrors with transposed convs and a sigmoid so decoded pixels
    land in (0, 1).  ``latent_mean`` / ``latent_std`` buffers standardize
    encoder outputs; they are identity until :func:`calibrate_codec` runs.
    """

    spatial_factor = 4

    def __init__(self, latent_channels: int = 4, hidden: int = 32):
        super().__init__()
        self.latent_channels = latent_channels
        self.enc = nn.Sequential(
            nn.Conv2d(3, hidden, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, latent_channels, 3, stride=2, padding=1),
        )
        self.dec = nn.Sequential(
            nn.ConvTranspose2d(latent_channels, hidden, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(hidden, 3, 4, stride=2, padding=1),
        )
        self.register_buffer("latent_mean", torch.zeros(latent_channels, 1, 1))
        self.register_buffer("latent_std", torch.ones(latent_channels, 1, 1))

    def encode_raw(self, image: torch.Tensor) -> torch.Tensor:
        """Encoder output without standardization (used during pretraining)."""
        self.check_divisible(image)
        batched = image.dim() == 4
        x = image if batched else image.unsqueeze(0)
        z = self.enc(x)
        return z if batched else z.squeeze(0)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        z = self.encode_raw(image)
        return (z - self.latent_mean.to(z.dtype)) / self.latent_std.to(z.dtype)

    def decode_raw(self, z: torch.Tensor) -> torch.Tensor:
        batched = z.dim() == 4
        x = z if batched else z.unsqueeze(0)
        out = torch.sigmoid(self.dec(x))
        return out if batched else out.squeeze(0)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        z = z * self.latent_std.to(z.dtype) + self.latent_mean.to(z.dtype)
        return self.decode_raw(z)


def pretrain_codec(
    codec: ToyCodec,
    images: Sequence[torch.Tensor],
    steps: int = 600,
    batch_size: int = 16,
    lr: float = 2e-3,
    generator: torch.Generator | None = None,
) -> list[float]:
    """Fit the autoencoder by plain reconstruction MSE on pixel crops.

    ``images`` are (3, H, W) tensors in [0,1].  Returns the per-step loss
    trace.  The caller is expected to follow with :func:`calibrate_codec`
    and ``codec.freeze()``.
    """
    if not images:
        raise ValueError("pretrain_codec needs a nonempty image list")
    g = generator if generator is not None else torch.Generator().manual_seed(0)
    stack = torch.stack(list(images))
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    losses: list[float] = []
    codec.train()
    for _ in range(steps):
        idx = torch.randint(0, stack.shape[0], (batch_size,), generator=g)
        batch = stack[idx]
        recon = codec.decode_raw(codec.encode_raw(batch))
        loss = torch.mean((recon - batch) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    codec.eval()
    return losses


@torch.no_grad()
def calibrate_codec(codec: ToyCodec, images: Iterable[torch.Tensor]) -> None:
    """Set latent standardization buffers from encoder outputs over ``images``."""
    stack = torch.stack(list(images))
    z = codec.encode_raw(stack)
    mean = z.mean(dim=(0, 2, 3), keepdim=True).squeeze(0)
    std = z.std(dim=(0, 2, 3), keepdim=True).squeeze(0)
    codec.latent_mean.copy_(mean)
    codec.latent_std.copy_(std.clamp_min(1e-6))


@torch.no_grad()
def reconstruction_error(codec: LatentCodec, images: Sequence[torch.Tensor]) -> float:
    """Mean absolute per-pixel round-trip error over ``images``."""
    total = 0.0
    count = 0
    for img in images:
        recon = codec.decode(codec.encode(img))
        total += float(torch.mean(torch.abs(recon - img)))
        count += 1
    if count == 0:
        raise ValueError("no images given")
    return total / count
