"""Dataset manifests and the synthetic wrinkle-proxy corpus.

Real training data (scored face crops) is proprietary, so desk-scale runs
use generated stand-ins: flat skin-tone patches overlaid with oriented
sinusoidal stripes whose amplitude and count grow with the aging score.
The stripe axis follows the zone (forehead wrinkles run horizontally,
glabellar lines vertically, and so on), which gives an independently
measurable, monotone "aging" signal: band-limited Fourier energy along
the wrinkle axis.  :func:`wrinkle_density_oracle` is that measurement and
is used by tests to check score control end to end.

Manifests are UTF-8 JSON-lines, one record per line, with exactly the
keys of :class:`ManifestRecord`.  ``image_path`` may be relative; it
resolves against the manifest's directory at load time, but the written
form round-trips byte-identically.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .atlas import TARGET_GRID, ZoneSpec, default_zone_registry
from .errors import ParseError, ValidationError
from .geometry import save_image

MANIFEST_KEYS = ("image_path", "zone_id", "ethnicity", "raw_score", "scale_max", "split")
SPLITS = ("train", "val", "test")

# Stripe orientation per zone: 'h' = horizontal wrinkle lines (intensity
# varies along y), 'v' = vertical lines.  Unlisted zones default to 'h'.
WRINKLE_AXES: dict[str, str] = {
    "forehead": "h",
    "glabellar": "v",
    "nasolabial_folds": "v",
    "inter_ocular": "h",
    "upper_lip": "v",
    "under_eye": "h",
    "lip_corners": "v",
    "crows_feet": "h",
}

# Base skin tones keyed by the synthetic ethnicity labels used in prompts.
# Values keep amplitude + jitter headroom inside [0, 1] so stripes never
# clip (clipping would smear Fourier energy outside the measured band).
SYNTHETIC_TONES: dict[str, tuple[float, float, float]] = {
    "synthetic-a": (0.68, 0.60, 0.52),
    "synthetic-b": (0.56, 0.48, 0.42),
    "synthetic-c": (0.44, 0.38, 0.33),
}

DENSITY_NORM = 0.5  # stripe amplitude mapping to oracle density 1.0
_BAND_MAX_CYCLES = 10


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    zone_id: str
    ethnicity: str
    raw_score: float
    scale_max: float
    split: str
    resolved_path: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.scale_max > 0:
            raise ValidationError(f"scale_max must be positive, got {self.scale_max}")
        if not 0.0 <= self.raw_score <= self.scale_max:
            raise ValidationError(
                f"raw_score {self.raw_score} outside [0, {self.scale_max}]"
            )

    def as_json_line(self) -> str:
        return json.dumps(
            {
                "image_path": self.image_path,
                "zone_id": self.zone_id,
                "ethnicity": self.ethnicity,
                "raw_score": self.raw_score,
                "scale_max": self.scale_max,
                "split": self.split,
            }
        )


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read and validate a JSON-lines manifest.

    Every referenced image must exist; failures carry the line number.
    An empty manifest is legal but warns.
    """
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    missing: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {e}") from e
            if not isinstance(obj, dict) or set(obj) != set(MANIFEST_KEYS):
                raise ParseError(
                    f"{path}:{lineno}: record keys {sorted(obj) if isinstance(obj, dict) else obj!r} "
                    f"!= {sorted(MANIFEST_KEYS)}"
                )
            try:
                record = ManifestRecord(
                    image_path=str(obj["image_path"]),
                    zone_id=str(obj["zone_id"]),
                    ethnicity=str(obj["ethnicity"]),
                    raw_score=float(obj["raw_score"]),
                    scale_max=float(obj["scale_max"]),
                    split=str(obj["split"]),
                )
            except ValidationError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from e
            resolved = Path(record.image_path)
            if not resolved.is_absolute():
                resolved = base / resolved
            if not resolved.is_file():
                missing.append(str(resolved))
            records.append(
                ManifestRecord(
                    record.image_path,
                    record.zone_id,
                    record.ethnicity,
                    record.raw_score,
                    record.scale_max,
                    record.split,
                    resolved_path=resolved,
                )
            )
    if missing:
        raise ValidationError(
            f"{path}: {len(missing)} referenced image(s) missing: {missing[:8]}"
        )
    if not records:
        warnings.warn(f"manifest {path} is empty", stacklevel=2)
    return records


def write_manifest(path: str | Path, records: Sequence[ManifestRecord]) -> None:
    """Write records in canonical one-line-per-record form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.as_json_line() + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    """Knobs of the wrinkle-proxy generator.

    The density law is linear: stripe amplitude = amplitude_max * score,
    stripe count = count_min + round(count_span * score) full cycles
    across the crop — both monotone non-decreasing in the score.
    """

    n_per_zone: int
    crop_size: int = 128
    seed: int = 0
    zones: Optional[tuple[str, ...]] = None  # default: every registry zone
    amplitude_max: float = 0.28
    count_min: int = 2
    count_span: int = 4
    phase_jitter: float = math.pi / 8
    tone_jitter: float = 0.02
    val_fraction: float = 0.1
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.n_per_zone < 1:
            raise ValidationError("n_per_zone must be >= 1")
        if not 0.0 < self.amplitude_max <= 0.3:
            raise ValidationError("amplitude_max must be in (0, 0.3] to avoid clipping")
        if self.val_fraction + self.test_fraction >= 1.0:
            raise ValidationError("val_fraction + test_fraction must leave room for train")


def stripe_amplitude(cfg: SyntheticCorpusConfig, score: float) -> float:
    return cfg.amplitude_max * score


def stripe_count(cfg: SyntheticCorpusConfig, score: float) -> int:
    return cfg.count_min + round(cfg.count_span * score)


def synthesize_crop(
    zone_id: str,
    score: float,
    ethnicity: str,
    rng: np.random.Generator,
    cfg: Optional[SyntheticCorpusConfig] = None,
) -> np.ndarray:
    """One synthetic crop: flat tone plus score-scaled oriented stripes.

    Score 0 produces an exactly smooth patch (amplitude 0).  Consumes a
    fixed number of rng draws regardless of score, so corpora with
    different score assignments stay draw-aligned.
    """
    cfg = cfg or SyntheticCorpusConfig(n_per_zone=1)
    if ethnicity not in SYNTHETIC_TONES:
        raise ValidationError(
            f"unknown synthetic ethnicity {ethnicity!r}; known: {sorted(SYNTHETIC_TONES)}"
        )
    size = cfg.crop_size
    tone = np.array(SYNTHETIC_TONES[ethnicity], dtype=np.float64)
    tone = tone + rng.uniform(-cfg.tone_jitter, cfg.tone_jitter, size=3)
    phase = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter)
    amplitude = stripe_amplitude(cfg, score)
    cycles = stripe_count(cfg, score)
    coord = np.arange(size, dtype=np.float64) / size
    profile = amplitude * np.sin(2.0 * math.pi * cycles * coord + phase)
    axis = WRINKLE_AXES.get(zone_id, "h")
    crop = np.broadcast_to(tone, (size, size, 3)).copy()
    if axis == "h":
        crop += profile[:, None, None]
    else:
        crop += profile[None, :, None]
    return np.clip(crop, 0.0, 1.0).astype(np.float32)


def generate_synthetic_corpus(
    cfg: SyntheticCorpusConfig,
    out_dir: str | Path,
    registry: Optional[Sequence[ZoneSpec]] = None,
) -> Path:
    """Write PNG crops plus a manifest; byte-deterministic under the seed.

    Scores are drawn uniformly from the 5%-step grid so every percentage
    token that inference can request also appears in training prompts.
    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    registry = list(registry) if registry is not None else default_zone_registry()
    by_id = {z.zone_id: z for z in registry}
    zone_ids = list(cfg.zones) if cfg.zones else [z.zone_id for z in registry]
    unknown = sorted(set(zone_ids) - set(by_id))
    if unknown:
        raise ValidationError(f"corpus zones not in registry: {unknown}")
    rng = np.random.default_rng(cfg.seed)
    ethnicities = sorted(SYNTHETIC_TONES)
    records: list[ManifestRecord] = []
    for zone_id in zone_ids:
        zone = by_id[zone_id]
        for i in range(cfg.n_per_zone):
            score = TARGET_GRID[int(rng.integers(len(TARGET_GRID)))]
            ethnicity = ethnicities[int(rng.integers(len(ethnicities)))]
            u_split = rng.random()
            if u_split < cfg.test_fraction:
                split = "test"
            elif u_split < cfg.test_fraction + cfg.val_fraction:
                split = "val"
            else:
                split = "train"
            crop = synthesize_crop(zone_id, score, ethnicity, rng, cfg)
            rel = f"images/{zone_id}_{i:05d}.png"
            save_image(out_dir / rel, crop)
            records.append(
                ManifestRecord(
                    image_path=rel,
                    zone_id=zone_id,
                    ethnicity=ethnicity,
                    raw_score=score * zone.scale_max,
                    scale_max=zone.scale_max,
                    split=split,
                )
            )
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path


# ---------------------------------------------------------------------------
# independent density measurement


def wrinkle_density_oracle(crop: np.ndarray, zone: ZoneSpec) -> float:
    """Band-limited stripe strength along the zone's wrinkle axis, in [0,1].

    The luminance is averaged across the stripe direction to a 1-D
    profile; Fourier energy in cycle bins 1..10 is converted to an
    equivalent sinusoid amplitude and normalized by ``DENSITY_NORM``.
    A pure in-band sinusoid of amplitude a scores a / DENSITY_NORM; a
    constant crop scores exactly 0.
    """
    if crop.ndim != 3 or crop.shape[0] != crop.shape[1]:
        raise ValidationError(f"oracle expects a square (S, S, C) crop, got {crop.shape}")
    lum = crop.astype(np.float64).mean(axis=2)
    axis = WRINKLE_AXES.get(zone.zone_id, "h")
    profile = lum.mean(axis=1) if axis == "h" else lum.mean(axis=0)
    profile = profile - profile.mean()
    n = profile.shape[0]
    spectrum = np.fft.rfft(profile)
    hi = min(_BAND_MAX_CYCLES, spectrum.shape[0] - 1)
    band_power = float(np.sum(2.0 * np.abs(spectrum[1 : hi + 1]) ** 2) / (n * n))
    amplitude_est = math.sqrt(2.0 * band_power)
    return float(np.clip(amplitude_est / DENSITY_NORM, 0.0, 1.0))
