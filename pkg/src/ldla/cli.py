"""Operator entry points: corpus generation, training, aging, eval, serving.

Every subcommand prints its fully resolved configuration (defaults +
config file + overrides) as JSON before doing anything, so runs are
self-describing and reproducible.  Exit codes: 0 success, 1 runtime
failure (diagnostic on stderr), 2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import data, evaluation, geometry, inference, training
from .atlas import default_zone_registry, load_zone_registry, percent_to_normalized
from .errors import LdlaError, ParseError, ValidationError

DEFAULT_PORT = 8742


def _echo_config(payload: dict) -> None:
    print(json.dumps({k: v for k, v in payload.items()}, indent=2, sort_keys=True))


def _registry_from(path: Optional[str]):
    return load_zone_registry(path) if path else default_zone_registry()


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    registry = _registry_from(args.registry)
    zones = tuple(args.zones.split(",")) if args.zones else None
    cfg = data.SyntheticCorpusConfig(
        n_per_zone=args.n_per_zone,
        crop_size=args.crop_size,
        seed=args.seed,
        zones=zones,
    )
    _echo_config(
        {
            "subcommand": "gen-corpus",
            "out": args.out,
            "registry": args.registry,
            "n_per_zone": cfg.n_per_zone,
            "crop_size": cfg.crop_size,
            "seed": cfg.seed,
            "zones": list(zones) if zones else [z.zone_id for z in registry],
        }
    )
    manifest = data.generate_synthetic_corpus(cfg, args.out, registry)
    print(f"wrote corpus manifest {manifest}")
    return 0


def _apply_train_overrides(config: training.TrainConfig, args) -> training.TrainConfig:
    weights = config.weights
    for name in ("lambda_full", "lambda_zone", "lambda_cycle", "lambda_score"):
        value = getattr(args, name)
        if value is not None:
            weights = replace(weights, **{name: value})
    updates = {"weights": weights}
    for name in ("seed", "steps", "checkpoint_out"):
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    return replace(config, **updates)


def cmd_train(args: argparse.Namespace) -> int:
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    config = training.TrainConfig.from_dict(raw)
    config = _apply_train_overrides(config, args)
    _echo_config({"subcommand": "train", "resume": args.resume, **config.to_dict()})

    def progress(record: training.LossRecord) -> None:
        if record.step % args.log_every == 0 or record.step == config.steps:
            print(
                f"step {record.step}/{config.steps} total {record.total:.5f} "
                f"(full {record.l_full:.5f} zone {record.l_zone:.5f} "
                f"cycle {record.l_cycle:.5f} score {record.l_score:.5f})",
                file=sys.stderr,
            )

    final = training.train(config, resume_from=args.resume, progress=progress)
    print(f"wrote checkpoint {final}")
    return 0


def parse_targets_arg(text: str, registry) -> dict[str, float]:
    """--targets value -> zone_id -> normalized score.

    Accepts a JSON object mapping zone ids to integer percents, or
    ``uniform:<percent>`` to target every registry zone at once.
    """
    if text.startswith("uniform:"):
        try:
            percent = float(text.split(":", 1)[1])
        except ValueError as e:
            raise ParseError(f"bad uniform percent in {text!r}") from e
        norm = percent_to_normalized(percent)
        return {z.zone_id: norm for z in registry}
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"--targets is neither JSON nor uniform:<percent>: {e}") from e
    if not isinstance(raw, dict):
        raise ParseError("--targets JSON must be an object of zone_id -> percent")
    return {str(k): percent_to_normalized(float(v)) for k, v in raw.items()}


def cmd_age(args: argparse.Namespace) -> int:
    loaded = training.load_checkpoint(args.checkpoint)
    models = loaded.models
    models.denoiser.eval()
    models.scorenet.eval()
    targets = parse_targets_arg(args.targets, models.registry)
    params = inference.InferenceParams(
        noise_strength=args.gamma_n,
        num_steps=args.gamma_inf,
        guidance_scale=args.gamma_g,
        seed=args.seed,
    )
    _echo_config(
        {
            "subcommand": "age",
            "checkpoint": str(args.checkpoint),
            "face": args.face,
            "out": args.out,
            "targets": {k: round(v * 100) for k, v in targets.items()},
            "ethnicity": args.ethnicity,
            "gamma_n": params.noise_strength,
            "gamma_inf": params.num_steps,
            "gamma_g": params.guidance_scale,
            "seed": params.seed,
            "refiner": "off" if args.no_refiner else "identity",
            "refiner_strength": args.refiner_strength,
            "landmarks": args.landmarks,
        }
    )
    face = geometry.load_image(args.face)
    landmarks = geometry.load_landmarks(args.landmarks) if args.landmarks else None
    aged = inference.age_face(
        face, targets, args.ethnicity, params, models, landmarks=landmarks
    )
    if not args.no_refiner:
        aged = inference.refine_face(aged, models, strength=args.refiner_strength)
    geometry.save_image(args.out, aged)
    print(f"wrote {args.out}")
    return 0


def _manifest_images(manifest_path: str) -> tuple[list, list[data.ManifestRecord]]:
    records = data.load_manifest(manifest_path)
    images = [geometry.load_image(r.resolved_path) for r in records]
    return images, records


def cmd_eval(args: argparse.Namespace) -> int:
    _echo_config(
        {
            "subcommand": "eval",
            "real": args.real,
            "generated": args.generated,
            "split_reference": args.split_reference,
            "checkpoint": args.checkpoint,
            "extractor_grid": args.extractor_grid,
            "seed": args.seed,
            "out": args.out,
        }
    )
    extractor = evaluation.mean_pool_features(args.extractor_grid)
    real_images, real_records = _manifest_images(args.real)
    gen_images, gen_records = _manifest_images(args.generated)
    fid = evaluation.frechet_distance(
        evaluation.compute_stats(real_images, extractor),
        evaluation.compute_stats(gen_images, extractor),
    )
    split_ref = None
    if args.split_reference:
        split_ref = evaluation.split_reference_fid(
            real_images, extractor, np.random.default_rng(args.seed)
        )
    mae = None
    if args.checkpoint:
        mae = _scorenet_mae(args.checkpoint, gen_images, gen_records)
    per_zone: dict[str, float] = {}
    zone_ids = sorted({r.zone_id for r in gen_records})
    for zone_id in zone_ids:
        real_z = [im for im, r in zip(real_images, real_records) if r.zone_id == zone_id]
        gen_z = [im for im, r in zip(gen_images, gen_records) if r.zone_id == zone_id]
        if len(real_z) >= 2 and len(gen_z) >= 2:
            per_zone[zone_id] = evaluation.frechet_distance(
                evaluation.compute_stats(real_z, extractor),
                evaluation.compute_stats(gen_z, extractor),
            )
    report = evaluation.EvalReport(
        fid=fid,
        mae=mae,
        split_reference=split_ref,
        per_zone=per_zone,
        config={
            "real": args.real,
            "generated": args.generated,
            "extractor": f"mean_pool_{args.extractor_grid}",
            "seed": args.seed,
        },
    )
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _scorenet_mae(checkpoint: str, images, records) -> float:
    import torch

    from .codec import image_to_tensor

    loaded = training.load_checkpoint(checkpoint)
    models = loaded.models
    models.scorenet.eval()
    predicted: list[float] = []
    target: list[float] = []
    with torch.no_grad():
        for img, record in zip(images, records):
            z = models.codec.encode(image_to_tensor(img))
            predicted.append(float(models.scorenet(z.unsqueeze(0)).squeeze(0)))
            target.append(record.raw_score / record.scale_max)
    return evaluation.mae_scores(predicted, target)


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    port = args.port if args.port is not None else int(os.environ.get("LDLA_PORT", DEFAULT_PORT))
    _echo_config(
        {
            "subcommand": "serve",
            "checkpoint": str(args.checkpoint),
            "host": args.host,
            "port": port,
            "cors_origins": args.cors_origin or ["*"],
            "workers": args.workers,
            "refiner": args.refiner,
        }
    )
    app = create_app(
        args.checkpoint,
        cors_origins=args.cors_origin or ["*"],
        workers=args.workers,
        refiner=args.refiner,
    )
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldla", description="Locally controlled face aging with latent diffusion."
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic wrinkle-proxy corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-per-zone", type=int, default=250)
    p.add_argument("--crop-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zones", help="comma-separated zone ids (default: all registry zones)")
    p.add_argument("--registry", help="zone registry JSON (default: packaged registry)")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train denoiser + ScoreNet from a config file")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lambda-full", type=float, dest="lambda_full")
    p.add_argument("--lambda-zone", type=float, dest="lambda_zone")
    p.add_argument("--lambda-cycle", type=float, dest="lambda_cycle")
    p.add_argument("--lambda-score", type=float, dest="lambda_score")
    p.add_argument("--checkpoint-out", dest="checkpoint_out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("age", help="apply per-zone aging targets to a face PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--face", required=True, help="input PNG (aligned face)")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument(
        "--targets",
        required=True,
        help='JSON {"zone_id": percent, ...} or uniform:<percent>',
    )
    p.add_argument("--ethnicity", default="synthetic-b")
    p.add_argument("--gamma-n", type=float, default=0.2, dest="gamma_n")
    p.add_argument("--gamma-inf", type=int, default=40, dest="gamma_inf")
    p.add_argument("--gamma-g", type=float, default=0.8, dest="gamma_g")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-refiner", action="store_true")
    p.add_argument("--refiner-strength", type=float, default=inference.DEFAULT_REFINER_STRENGTH)
    p.add_argument("--landmarks", help="landmark fixture JSON (default: registry boxes)")
    p.set_defaults(func=cmd_age)

    p = sub.add_parser("eval", help="FID/MAE between real and generated manifests")
    p.add_argument("--real", required=True, help="manifest of real images")
    p.add_argument("--generated", required=True, help="manifest of generated images")
    p.add_argument("--split-reference", action="store_true")
    p.add_argument("--checkpoint", help="enables ScoreNet MAE on the generated set")
    p.add_argument("--extractor-grid", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help=f"default: $LDLA_PORT or {DEFAULT_PORT}")
    p.add_argument("--cors-origin", action="append", help="repeatable; default *")
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--refiner", choices=("identity", "diffusion"), default="identity")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LdlaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
