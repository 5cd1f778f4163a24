"""Per-crop translation, whole-face orchestration, and the refiner pass."""

import numpy as np
import pytest

from ldla.errors import DomainError, ShapeError, ValidationError
from ldla.geometry import locate_zone
from ldla.inference import (
    DEFAULT_REFINER_STRENGTH,
    REFINER_PROMPT,
    DiffusionRefiner,
    IdentityRefiner,
    InferenceParams,
    ZoneTarget,
    age_face,
    refine_face,
    translate_crop,
)


@pytest.fixture(scope="module")
def face(quick_models):
    del quick_models  # ordering only; keeps the session train run first
    rng = np.random.default_rng(21)
    return rng.random((128, 128, 3)).astype(np.float32)


def fast_params(**overrides):
    base = dict(noise_strength=0.2, num_steps=10, guidance_scale=0.8, seed=0)
    base.update(overrides)
    return InferenceParams(**base)


class TestParams:
    def test_defaults(self):
        p = InferenceParams()
        assert (p.noise_strength, p.num_steps, p.guidance_scale, p.seed) == (0.2, 40, 0.8, 0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"noise_strength": 0.0},
            {"noise_strength": 1.1},
            {"num_steps": 0},
            {"guidance_scale": -0.5},
        ],
    )
    def test_out_of_range_rejected(self, kwargs):
        with pytest.raises(DomainError):
            InferenceParams(**kwargs)

    def test_zone_target_validated(self):
        ZoneTarget("forehead", 1.0)
        with pytest.raises(ValidationError):
            ZoneTarget("forehead", 1.01)
        with pytest.raises(ValidationError):
            ZoneTarget("forehead", -0.2)


class TestTranslateCrop:
    def test_shape_and_range(self, quick_models, registry):
        crop = np.full((64, 64, 3), 0.5, dtype=np.float32)
        out = translate_crop(crop, registry[0], "synthetic-a", 0.5, fast_params(), quick_models)
        assert out.shape == crop.shape
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_deterministic(self, quick_models, registry):
        rng = np.random.default_rng(3)
        crop = rng.random((64, 64, 3)).astype(np.float32)
        a = translate_crop(crop, registry[0], "synthetic-a", 0.7, fast_params(), quick_models)
        b = translate_crop(crop, registry[0], "synthetic-a", 0.7, fast_params(), quick_models)
        assert np.array_equal(a, b)

    def test_seed_changes_output(self, quick_models, registry):
        crop = np.full((64, 64, 3), 0.5, dtype=np.float32)
        a = translate_crop(crop, registry[0], "synthetic-a", 0.7, fast_params(seed=0), quick_models)
        b = translate_crop(crop, registry[0], "synthetic-a", 0.7, fast_params(seed=1), quick_models)
        assert not np.array_equal(a, b)

    def test_non_square_rejected(self, quick_models, registry):
        with pytest.raises(ShapeError):
            translate_crop(
                np.zeros((64, 32, 3), dtype=np.float32),
                registry[0],
                "synthetic-a",
                0.5,
                fast_params(),
                quick_models,
            )
        with pytest.raises(ShapeError):
            translate_crop(
                np.zeros((64, 64), dtype=np.float32),
                registry[0],
                "synthetic-a",
                0.5,
                fast_params(),
                quick_models,
            )

    def test_target_domain_checked(self, quick_models, registry):
        crop = np.zeros((64, 64, 3), dtype=np.float32)
        with pytest.raises(DomainError):
            translate_crop(crop, registry[0], "synthetic-a", 1.5, fast_params(), quick_models)


class TestAgeFace:
    def test_empty_targets_is_copy(self, quick_models, face):
        out = age_face(face, {}, "synthetic-a", fast_params(), quick_models)
        assert out is not face
        assert np.array_equal(out, face)

    def test_unknown_zone_lists_valid_ids(self, quick_models, face):
        with pytest.raises(ValidationError, match="unknown zone ids.*nose.*forehead"):
            age_face(face, {"nose": 0.5}, "synthetic-a", fast_params(), quick_models)

    def test_bitwise_deterministic(self, quick_models, face):
        kwargs = dict(
            targets={"forehead": 0.8}, ethnicity="synthetic-a", params=fast_params(seed=5)
        )
        a = age_face(face, models=quick_models, **kwargs)
        b = age_face(face, models=quick_models, **kwargs)
        assert np.array_equal(a, b)

    def test_untargeted_pixels_untouched(self, quick_models, face, registry):
        out = age_face(face, {"forehead": 0.9}, "synthetic-a", fast_params(), quick_models)
        zone = next(z for z in registry if z.zone_id == "forehead")
        region = locate_zone(face, zone)
        mask = np.zeros(face.shape[:2], dtype=bool)
        mask[region.y0 : region.y1, region.x0 : region.x1] = True
        assert np.array_equal(out[~mask], face[~mask])
        assert not np.array_equal(out[mask], face[mask])

    def test_dict_and_zone_target_forms_agree(self, quick_models, face):
        a = age_face(face, {"upper_lip": 0.6}, "synthetic-a", fast_params(), quick_models)
        b = age_face(
            face, [ZoneTarget("upper_lip", 0.6)], "synthetic-a", fast_params(), quick_models
        )
        assert np.array_equal(a, b)

    def test_disjoint_zones_compose_independently(self, quick_models, face, registry):
        """With per-zone derived seeds, adding a second (non-overlapping)
        zone must not change what happens inside the first."""
        zones = {z.zone_id: z for z in registry}
        r1 = locate_zone(face, zones["forehead"])
        r2 = locate_zone(face, zones["upper_lip"])
        assert r1.y1 <= r2.y0  # genuinely disjoint on this face

        alone = age_face(face, {"forehead": 0.8}, "synthetic-a", fast_params(), quick_models)
        both = age_face(
            face,
            {"forehead": 0.8, "upper_lip": 0.3},
            "synthetic-a",
            fast_params(),
            quick_models,
        )
        sl = np.s_[r1.y0 : r1.y1, r1.x0 : r1.x1]
        assert np.array_equal(alone[sl], both[sl])

    def test_target_level_changes_result(self, quick_models, face):
        lo = age_face(face, {"forehead": 0.1}, "synthetic-a", fast_params(), quick_models)
        hi = age_face(face, {"forehead": 0.9}, "synthetic-a", fast_params(), quick_models)
        assert not np.array_equal(lo, hi)


class TestRefiners:
    def test_prompt_and_default_strength(self):
        assert REFINER_PROMPT == "Utra realistic image of a human face"
        assert DEFAULT_REFINER_STRENGTH == 0.05

    def test_identity_refiner(self, face):
        r = IdentityRefiner()
        assert r.is_identity
        assert r.refine(face, REFINER_PROMPT, 0.5) is face

    def test_refine_face_defaults_to_identity(self, quick_models, face):
        assert refine_face(face, quick_models) is face

    def test_diffusion_refiner_strength_zero_is_codec_round_trip(self, quick_models, face):
        from ldla.codec import image_to_tensor, tensor_to_image

        r = DiffusionRefiner(quick_models)
        out = r.refine(face, REFINER_PROMPT, 0.0)
        expected = tensor_to_image(
            quick_models.codec.decode(quick_models.codec.encode(image_to_tensor(face)))
        )
        assert np.array_equal(out, expected)

    def test_diffusion_refiner_deterministic(self, quick_models, face):
        r = DiffusionRefiner(quick_models, num_steps=10)
        a = r.refine(face, REFINER_PROMPT, 0.1)
        b = r.refine(face, REFINER_PROMPT, 0.1)
        assert np.array_equal(a, b)
        assert not r.is_identity

    def test_strength_validation(self, quick_models, face):
        r = DiffusionRefiner(quick_models)
        with pytest.raises(DomainError):
            r.refine(face, REFINER_PROMPT, -0.1)
        with pytest.raises(DomainError):
            r.refine(face, REFINER_PROMPT, 1.5)

    def test_refine_face_with_diffusion_refiner(self, quick_models, face):
        out = refine_face(
            face, quick_models, strength=0.1, refiner=DiffusionRefiner(quick_models, num_steps=8)
        )
        assert out.shape == face.shape
        assert not np.array_equal(out, face)
