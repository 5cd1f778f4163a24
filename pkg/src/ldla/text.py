"""Frozen text conditioning: deterministic hash-based token embeddings.

Stands in for a pretrained text encoder at desk scale.  Every whitespace
token is mapped to a fixed Gaussian vector seeded from its BLAKE2 digest,
so the same prompt always embeds identically and prompts differing in any
token (within the slot budget) differ in at least one vector.  The empty
prompt embeds as all padding (zero vectors), which is the unconditional
branch used by guided inference.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class ConditionEmbedding:
    """Token vectors for one prompt.

    tokens: (n_slots, dim) tensor; rows past ``n_real`` are zero padding.
    """

    tokens: torch.Tensor
    n_real: int
    source_prompt: str

    def mean_vector(self) -> torch.Tensor:
        """Mean over real token vectors; zeros for the empty prompt."""
        if self.n_real == 0:
            return torch.zeros(
                self.tokens.shape[1], dtype=self.tokens.dtype, device=self.tokens.device
            )
        return self.tokens[: self.n_real].mean(dim=0)


def _token_seed(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") & 0x7FFF_FFFF_FFFF_FFFF


def derive_seed(seed: int, label: str) -> int:
    """Mix a label into a base seed for independent substreams.

    Used wherever one user-facing seed must drive several decorrelated
    RNGs (codec pretraining, per-zone inference noise) in a way that is
    stable across runs and independent of call order.
    """
    return (seed ^ _token_seed(label)) & 0x7FFF_FFFF_FFFF_FFFF


class HashingTextEncoder:
    """Deterministic prompt embedder with a fixed slot budget.

    Not trainable and holds no parameters; the token -> vector map is a
    pure function of the token string, the embedding dim, and nothing
    else.  Prompts longer than ``n_slots`` tokens are rejected rather than
    silently truncated (truncation would break the distinctness contract).
    """

    def __init__(self, dim: int = 32, n_slots: int = 24, dtype: torch.dtype = torch.float32):
        if dim < 1 or n_slots < 1:
            raise ValueError("dim and n_slots must be positive")
        self.dim = dim
        self.n_slots = n_slots
        self.dtype = dtype
        self._cache: dict[str, torch.Tensor] = {}

    def _token_vector(self, token: str) -> torch.Tensor:
        vec = self._cache.get(token)
        if vec is None:
            g = torch.Generator().manual_seed(_token_seed(token))
            vec = torch.randn(self.dim, generator=g, dtype=torch.float64)
            self._cache[token] = vec
        return vec

    def embed(self, prompt: str) -> ConditionEmbedding:
        words = prompt.split()
        if len(words) > self.n_slots:
            raise ValueError(
                f"prompt has {len(words)} tokens, exceeding the {self.n_slots}-slot budget"
            )
        tokens = torch.zeros(self.n_slots, self.dim, dtype=self.dtype)
        for i, word in enumerate(words):
            tokens[i] = self._token_vector(word).to(self.dtype)
        return ConditionEmbedding(tokens=tokens, n_real=len(words), source_prompt=prompt)

    def __call__(self, prompt: str) -> ConditionEmbedding:
        return self.embed(prompt)
