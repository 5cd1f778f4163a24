"""Facial-zone registry, aging-score normalization, and conditioning prompts.

A zone registry is a JSON array of zone records (see ``load_zone_registry``).
Each zone carries the maximum of its clinical grading scale; raw scores are
normalized to [0, 1] by dividing by that maximum and rendered in prompts as
integer percentages.  Three prompt roles exist per zone:

* the full prompt names the zone, the person's ethnicity, and the score,
* the zone prompt names only the zone (a per-zone identifier phrase),
* the target prompt is a full prompt carrying a sampled target score.

All functions here are pure; the registry is immutable after loading.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import DomainError, ParseError, ValidationError

# Target scores are drawn from a 5%-step grid so that every rendered
# percentage token is drawn from a small closed vocabulary.
TARGET_GRID_STEP = 0.05
TARGET_GRID = tuple(round(i * TARGET_GRID_STEP, 2) for i in range(21))

_REGISTRY_KEYS = {
    "zone_id",
    "display_noun",
    "zone_noun",
    "scale_max",
    "default_box",
    "feather_px",
}


@dataclass(frozen=True)
class ZoneSpec:
    """One facial zone with its grading scale and crop geometry.

    ``default_box`` is a fractional rectangle (x0, y0, x1, y1) in [0, 1]^2
    on an aligned face, used when no landmarks are available.  ``feather_px``
    is the blend feather width at crop resolution.
    """

    zone_id: str
    display_noun: str
    zone_noun: str
    scale_max: float
    default_box: tuple[float, float, float, float]
    feather_px: int

    def __post_init__(self):
        if not self.zone_id:
            raise ValidationError("zone_id must be non-empty")
        if not self.display_noun:
            raise ValidationError(f"zone {self.zone_id!r}: display_noun must be non-empty")
        if not self.zone_noun:
            raise ValidationError(f"zone {self.zone_id!r}: zone_noun must be non-empty")
        if not self.scale_max > 0:
            raise ValidationError(f"zone {self.zone_id!r}: scale_max must be > 0")
        x0, y0, x1, y1 = self.default_box
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise ValidationError(
                f"zone {self.zone_id!r}: default_box {self.default_box} is not a "
                "valid fractional rectangle"
            )
        if self.feather_px < 0:
            raise ValidationError(f"zone {self.zone_id!r}: feather_px must be >= 0")


@dataclass(frozen=True)
class AgingScore:
    """A raw clinical-scale score and its [0, 1] normalization."""

    zone_id: str
    raw: float
    normalized: float

    def __post_init__(self):
        if not 0.0 <= self.normalized <= 1.0:
            raise ValidationError(f"normalized score {self.normalized} outside [0, 1]")

    @classmethod
    def from_raw(cls, zone: ZoneSpec, raw: float) -> "AgingScore":
        return cls(zone.zone_id, raw, normalize_score(raw, zone.scale_max))


@dataclass(frozen=True)
class PromptBundle:
    """The three conditioning prompts for one training example.

    ``p_full`` carries the source score, ``p_target`` the sampled target
    score; they share the template and differ only in the percentage token.
    ``p_zone`` names the zone and carries no score.
    """

    p_full: str
    p_zone: str
    p_target: str
    target_normalized: float


def normalize_score(raw: float, scale_max: float) -> float:
    """Normalize a raw clinical score to [0, 1] by its scale maximum."""
    if not scale_max > 0:
        raise DomainError(f"scale_max must be > 0, got {scale_max}")
    if not 0.0 <= raw <= scale_max:
        raise DomainError(f"raw score {raw} outside [0, {scale_max}]")
    return raw / scale_max


def percent_to_normalized(percent: float) -> float:
    """Convert a human-facing percentage in [0, 100] to a normalized score."""
    if not 0.0 <= percent <= 100.0:
        raise DomainError(f"percent {percent} outside [0, 100]")
    return percent / 100.0


def _render_percent(normalized: float) -> str:
    # Integer percentage, ties rounding half up (round() would round
    # half to even, which drifts from the human-facing rendering).
    return f"{int(math.floor(normalized * 100.0 + 0.5))}%"


def build_full_prompt(zone: ZoneSpec, ethnicity: str, normalized: float) -> str:
    """Render the score-carrying prompt for a zone.

    The percentage is rounded to the nearest integer (ties up);
    the ethnicity label is passed through verbatim.
    """
    if not 0.0 <= normalized <= 1.0:
        raise DomainError(f"normalized score {normalized} outside [0, 1]")
    return (
        f"image of {zone.display_noun} with an aging score of "
        f"{_render_percent(normalized)} for a person of {ethnicity} ethnicity"
    )


def build_zone_prompt(zone: ZoneSpec) -> str:
    """Render the score-free zone-identifier prompt."""
    return f"image of {zone.zone_noun}"


def sample_target_prompt(
    zone: ZoneSpec, ethnicity: str, rng: random.Random, source_normalized: float = 0.0
) -> PromptBundle:
    """Draw a uniform target score from the 5% grid and build all prompts.

    ``source_normalized`` fills ``p_full``; the sampled target fills
    ``p_target``.  Deterministic given the rng state.
    """
    target = TARGET_GRID[rng.randrange(len(TARGET_GRID))]
    return PromptBundle(
        p_full=build_full_prompt(zone, ethnicity, source_normalized),
        p_zone=build_zone_prompt(zone),
        p_target=build_full_prompt(zone, ethnicity, target),
        target_normalized=target,
    )


def _parse_zone_record(index: int, obj) -> ZoneSpec:
    if not isinstance(obj, dict):
        raise ParseError(f"registry record {index}: expected an object, got {type(obj).__name__}")
    missing = _REGISTRY_KEYS - set(obj)
    if missing:
        raise ParseError(f"registry record {index}: missing keys {sorted(missing)}")
    unknown = set(obj) - _REGISTRY_KEYS
    if unknown:
        raise ParseError(f"registry record {index}: unknown keys {sorted(unknown)}")
    box = obj["default_box"]
    if not (isinstance(box, (list, tuple)) and len(box) == 4):
        raise ParseError(f"registry record {index}: default_box must be an array of 4 reals")
    try:
        return ZoneSpec(
            zone_id=str(obj["zone_id"]),
            display_noun=str(obj["display_noun"]),
            zone_noun=str(obj["zone_noun"]),
            scale_max=float(obj["scale_max"]),
            default_box=tuple(float(v) for v in box),
            feather_px=int(obj["feather_px"]),
        )
    except ValidationError as exc:
        raise ValidationError(f"registry record {index}: {exc}") from exc


def parse_zone_registry(text: str) -> list[ZoneSpec]:
    """Parse registry JSON text into validated zone specs."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"registry is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ParseError("registry top level must be a JSON array")
    zones = [_parse_zone_record(i, obj) for i, obj in enumerate(data)]
    seen: set[str] = set()
    for z in zones:
        if z.zone_id in seen:
            raise ValidationError(f"duplicate zone_id {z.zone_id!r} in registry")
        seen.add(z.zone_id)
    return zones


def load_zone_registry(path: str | Path) -> list[ZoneSpec]:
    """Load and validate a zone registry file (JSON array, UTF-8)."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_zone_registry(text)


def default_zone_registry() -> list[ZoneSpec]:
    """The registry shipped with the package (8 zones)."""
    text = resources.files("ldla.resources").joinpath("zones.json").read_text("utf-8")
    return parse_zone_registry(text)


def registry_by_id(zones: Sequence[ZoneSpec]) -> dict[str, ZoneSpec]:
    return {z.zone_id: z for z in zones}


def zone_as_record(zone: ZoneSpec) -> dict:
    """ZoneSpec -> the plain-JSON registry record shape (exact keys)."""
    return {
        "zone_id": zone.zone_id,
        "display_noun": zone.display_noun,
        "zone_noun": zone.zone_noun,
        "scale_max": zone.scale_max,
        "default_box": list(zone.default_box),
        "feather_px": zone.feather_px,
    }
