"""Command line interface.

Thin wrapper over the library: every subcommand parses arguments, calls the
same functions the HTTP service uses, and prints file paths or JSON. Exit
codes: 0 success, 1 expected failure (bad arguments, missing files, domain
errors), 2 unexpected internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .deltafile import DeltaRegistry, load_delta, save_delta
from .diffusion import get_backbone, list_backbones
from .encoders import get_encoder, list_encoders
from .engine import DeltaApplication, GenerationConfig, SweepAxis, generate_with_deltas, sweep_grid
from .errors import AttrDeltaError
from .evaluation import (
    EvalProtocol,
    aggregate_rows,
    evaluate_delta,
    plot_sweep,
    toy_adapters,
    write_rows_csv,
)
from .extraction import extract_clip_diff_delta
from .imaging import save_sample_png
from .inversion import (
    PairInversionConfig,
    learn_pair_delta,
    mask_to_subject,
    subject_rows_to_attribute_delta,
)
from .prompts import builtin_prompt_sets, load_prompt_set, locate_subject
from .training import DeltaTrainConfig, train_attribute_delta

DEFAULT_REGISTRY = os.environ.get("ATTRDELTA_REGISTRY", "./deltas")
DEFAULT_BACKBONE = "toy-mix16"
DEFAULT_ENCODER = "toy-agg16"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(message)


def _registry(args) -> DeltaRegistry:
    return DeltaRegistry(args.registry)


def _load_prompt_set(ref: str):
    builtin = builtin_prompt_sets()
    if ref in builtin:
        return load_prompt_set(builtin[ref])
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(
            f"prompt set {ref!r} is neither a built-in "
            f"({', '.join(builtin)}) nor a file"
        )
    return load_prompt_set(path)


def _load_image(ref: str) -> np.ndarray:
    path = Path(ref)
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".json":
        return np.asarray(json.loads(path.read_text()), dtype=np.float64)
    raise ValueError(f"image must be .npy or .json, got {ref!r}")


def _parse_scales(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"bad scale list {text!r}; expected comma-separated numbers")


def _parse_apply(spec: str, registry: DeltaRegistry) -> DeltaApplication:
    """delta_key:subject:scale[:occurrence][:delay] -> application."""
    parts = spec.split(":")
    if len(parts) < 3:
        raise ValueError(
            f"bad --apply {spec!r}; expected delta:subject:scale[:occurrence][:delay]"
        )
    delta = registry.load(parts[0])
    occurrence: int | str = 0
    if len(parts) > 3 and parts[3]:
        occurrence = "all" if parts[3] == "all" else int(parts[3])
    delay = int(parts[4]) if len(parts) > 4 and parts[4] else 0
    return DeltaApplication(
        delta=delta,
        subject_word=parts[1],
        scale=float(parts[2]),
        occurrence=occurrence,
        delay_steps=delay,
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_extract(args) -> int:
    encoder = get_encoder(args.encoder)
    pset = _load_prompt_set(args.prompt_set)
    delta = extract_clip_diff_delta(encoder, pset, fix_articles=not args.no_fix_articles)
    if args.name:
        delta = delta.renamed(args.name)
    reg = _registry(args)
    path = reg.save(delta)
    print(f"saved {delta.attribute_name}@{delta.encoder_id} -> {path}")
    return 0


def cmd_train(args) -> int:
    encoder = get_encoder(args.encoder)
    backbone = get_backbone(args.backbone)
    pset = _load_prompt_set(args.prompt_set)
    cfg = DeltaTrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        alphas_per_item=args.alphas_per_item,
        seed=args.seed,
        anchor_mode=args.delay_mode,
        anchor_steps=args.anchor_steps,
        anchor_guidance=args.anchor_guidance,
        anchor_seed_pool=args.anchor_seed_pool,
        lr_decay=args.lr_decay,
    )
    print(
        f"training {pset.attribute_name!r} on {args.backbone}/{args.encoder}: "
        f"steps={cfg.steps} batch={cfg.batch_size} lr={cfg.learning_rate} "
        f"wd={cfg.weight_decay} alphas={cfg.alphas_per_item} "
        f"anchor_mode={cfg.anchor_mode} lr_decay={cfg.lr_decay} seed={cfg.seed}"
    )

    def log(entry):
        if entry.step % max(1, cfg.steps // 10) == 0 or entry.step == 1:
            print(f"  step {entry.step:5d}  loss {entry.loss:.6f}  |delta| {entry.delta_norm:.4f}")

    delta = train_attribute_delta(backbone, encoder, pset, cfg, log_fn=None if args.quiet else log)
    if args.name:
        delta = delta.renamed(args.name)
    path = _registry(args).save(delta)
    print(f"saved {delta.attribute_name}@{delta.encoder_id} -> {path}")
    return 0


def cmd_invert_pair(args) -> int:
    encoder = get_encoder(args.encoder)
    backbone = get_backbone(args.backbone)
    image = _load_image(args.image)
    cfg = PairInversionConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        lr_decay=args.lr_decay,
    )
    losses = []
    delta = learn_pair_delta(
        backbone, encoder, image, args.caption, cfg,
        log_fn=lambda e: losses.append(e.loss),
    )
    print(f"inverted {args.image} against {args.caption!r}: "
          f"loss {losses[0]:.4e} -> {losses[-1]:.4e}")
    if args.subject:
        tp = encoder.encode(args.caption)
        span = locate_subject(tp, args.subject)
        delta = mask_to_subject(delta, span)
        if args.attribute:
            attr = subject_rows_to_attribute_delta(delta, span, args.attribute)
            path = _registry(args).save(attr)
            print(f"saved {attr.attribute_name}@{attr.encoder_id} -> {path}")
    if args.out_matrix:
        np.savez(
            args.out_matrix,
            matrix=delta.matrix,
            optimized_mask=delta.optimized_mask,
            caption=delta.caption,
            encoder_id=delta.encoder_id,
        )
        print(f"wrote offset matrix -> {args.out_matrix}")
    return 0


def cmd_apply(args) -> int:
    backbone = get_backbone(args.backbone)
    reg = _registry(args)
    apps = tuple(_parse_apply(s, reg) for s in args.apply)
    encoder_ids = {a.delta.encoder_id for a in apps}
    if len(encoder_ids) > 1:
        raise ValueError(f"applications mix encoders: {sorted(encoder_ids)}")
    encoder = get_encoder(encoder_ids.pop() if apps else args.encoder)
    cfg = GenerationConfig(
        prompt=args.prompt,
        seed=args.seed,
        steps=args.steps,
        guidance_weight=args.guidance,
        applications=apps,
    )
    result = generate_with_deltas(backbone, encoder, cfg)
    out = Path(args.out)
    save_sample_png(result.sample, out)
    sidecar = out.with_suffix(".json")
    sidecar.write_text(json.dumps(result.provenance, indent=2))
    print(f"wrote {out} and {sidecar}")
    return 0


def cmd_sweep(args) -> int:
    backbone = get_backbone(args.backbone)
    reg = _registry(args)
    delta = reg.load(args.delta)
    encoder = get_encoder(delta.encoder_id)
    axes = [
        SweepAxis(
            delta=delta,
            subject_word=args.subject,
            scales=_parse_scales(args.scales),
            delay_steps=args.delay,
        )
    ]
    if args.delta2:
        delta2 = reg.load(args.delta2)
        axes.append(
            SweepAxis(
                delta=delta2,
                subject_word=args.subject2 or args.subject,
                scales=_parse_scales(args.scales2 or args.scales),
                delay_steps=args.delay,
            )
        )
    base = GenerationConfig(
        prompt=args.prompt, seed=args.seed, steps=args.steps, guidance_weight=args.guidance
    )
    result = sweep_grid(backbone, encoder, base, axes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "prompt": args.prompt,
        "seed": args.seed,
        "axes": [
            {"delta": f"{ax.delta.attribute_name}@{ax.delta.encoder_id}",
             "subject": ax.subject_word, "scales": list(ax.scales)}
            for ax in result.axes
        ],
        "cells": [],
    }
    for i, cell in enumerate(result.cells):
        name = f"cell_{i:03d}.png"
        save_sample_png(cell.result.sample, out_dir / name)
        manifest["cells"].append(
            {"scales": list(cell.scales), "image": name, "unmodified": cell.unmodified}
        )
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(result.cells)} cells -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    backbone = get_backbone(args.backbone)
    reg = _registry(args)
    delta = reg.load(args.delta)
    encoder = get_encoder(delta.encoder_id)
    protocol = EvalProtocol(
        nouns=tuple(args.nouns.split(",")),
        seeds=tuple(range(args.seeds)),
        scales=_parse_scales(args.scales),
        pole_plus_template=args.pole_plus,
        pole_minus_template=args.pole_minus,
        modes=tuple(args.modes.split(",")),
        delayed_steps=args.delayed_steps,
        steps=args.steps,
        guidance_weight=args.guidance,
    )
    adapters = toy_adapters(backbone, encoder)
    rows = evaluate_delta(backbone, encoder, adapters, delta, protocol)
    write_rows_csv(rows, args.out_csv)
    print(f"wrote {len(rows)} rows -> {args.out_csv}")
    if args.out_plot:
        plot_sweep(rows, args.out_plot, title=delta.attribute_name)
        print(f"wrote plot -> {args.out_plot}")
    for cell in aggregate_rows(rows):
        print(
            f"  mode={cell['mode']:8s} scale={cell['scale']:+.1f}  "
            f"dir-score {cell['delta_clip_bi_mean']:+.4f} +-{cell['delta_clip_bi_std']:.4f}  "
            f"perceptual {cell['perceptual_change_mean']:.4f}"
        )
    return 0


def cmd_ls(args) -> int:
    entries, problems = _registry(args).scan()
    if args.json:
        print(
            json.dumps(
                {
                    "deltas": [
                        {
                            "key": e.key,
                            "name": e.name,
                            "encoder_id": e.encoder_id,
                            "method": e.method,
                            "embedding_dim": e.embedding_dim,
                            "training_nouns": list(e.training_nouns),
                            "created_at": e.created_at,
                        }
                        for e in entries
                    ],
                    "warnings": problems,
                }
            )
        )
        return 0
    if not entries:
        print(f"no deltas in {args.registry}")
    for e in entries:
        print(f"{e.key:40s} {e.method:22s} dim={e.embedding_dim} nouns={','.join(e.training_nouns)}")
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(
        registry_root=args.registry,
        backbone_id=args.backbone,
        encoder_id=args.encoder,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    p = _Parser(prog="attrdelta", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--registry", default=DEFAULT_REGISTRY,
                        help=f"delta registry directory (default {DEFAULT_REGISTRY})")

    sp = sub.add_parser("extract", help="training-free delta from contrastive prompts")
    common(sp)
    sp.add_argument("--prompt-set", required=True, help="built-in name or YAML path")
    sp.add_argument("--encoder", default=DEFAULT_ENCODER, choices=list_encoders())
    sp.add_argument("--name", help="override the attribute name")
    sp.add_argument("--no-fix-articles", action="store_true")
    sp.set_defaults(fn=cmd_extract)

    sp = sub.add_parser("train", help="learn a delta by guidance matching")
    common(sp)
    sp.add_argument("--prompt-set", required=True)
    sp.add_argument("--encoder", default=DEFAULT_ENCODER, choices=list_encoders())
    sp.add_argument("--backbone", default=DEFAULT_BACKBONE, choices=list_backbones())
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--batch-size", type=int, default=10)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--weight-decay", type=float, default=0.333)
    sp.add_argument("--alphas-per-item", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delay-mode", default="noise-injection",
                    choices=["noise-injection", "trajectory-truncation"],
                    help="how training anchors are produced")
    sp.add_argument("--anchor-steps", type=int, default=50)
    sp.add_argument("--anchor-guidance", type=float, default=7.5)
    sp.add_argument("--anchor-seed-pool", type=int, default=None)
    sp.add_argument("--lr-decay", default="none", choices=["none", "cosine"])
    sp.add_argument("--name")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("invert-pair", help="invert one image into an embedding offset")
    common(sp)
    sp.add_argument("--image", required=True, help=".npy or .json sample vector")
    sp.add_argument("--caption", required=True)
    sp.add_argument("--encoder", default=DEFAULT_ENCODER, choices=list_encoders())
    sp.add_argument("--backbone", default="toy-linear16", choices=list_backbones())
    sp.add_argument("--steps", type=int, default=75)
    sp.add_argument("--batch-size", type=int, default=1)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--weight-decay", type=float, default=0.333)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--lr-decay", default="none", choices=["none", "cosine"])
    sp.add_argument("--subject", help="mask the offset down to this word's span")
    sp.add_argument("--attribute", help="with --subject: save span rows as this attribute")
    sp.add_argument("--out-matrix", help="write the full offset matrix (.npz)")
    sp.set_defaults(fn=cmd_invert_pair)

    sp = sub.add_parser("apply", help="generate with deltas applied")
    common(sp)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--apply", action="append", default=[],
                    metavar="DELTA:SUBJECT:SCALE[:OCC][:DELAY]",
                    help="repeatable application spec")
    sp.add_argument("--encoder", default=DEFAULT_ENCODER, choices=list_encoders(),
                    help="used when no applications are given")
    sp.add_argument("--backbone", default=DEFAULT_BACKBONE, choices=list_backbones())
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--guidance", type=float, default=7.5)
    sp.add_argument("--out", default="out.png")
    sp.set_defaults(fn=cmd_apply)

    sp = sub.add_parser("sweep", help="scale grid over one or two deltas")
    common(sp)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--delta", required=True)
    sp.add_argument("--subject", required=True)
    sp.add_argument("--scales", default="-2,-1,0,1,2")
    sp.add_argument("--delta2")
    sp.add_argument("--subject2")
    sp.add_argument("--scales2")
    sp.add_argument("--delay", type=int, default=0)
    sp.add_argument("--backbone", default=DEFAULT_BACKBONE, choices=list_backbones())
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--guidance", type=float, default=7.5)
    sp.add_argument("--out-dir", default="sweep_out")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("eval", help="metric sweep with CSV and plot output")
    common(sp)
    sp.add_argument("--delta", required=True)
    sp.add_argument("--nouns", default="person,man,woman,doctor")
    sp.add_argument("--seeds", type=int, default=25, help="seeds 0..N-1 per noun")
    sp.add_argument("--scales", default="-2,-1,0,1,2")
    sp.add_argument("--pole-plus", required=True,
                    help="positive pole template with a {noun} slot")
    sp.add_argument("--pole-minus", required=True)
    sp.add_argument("--modes", default="normal")
    sp.add_argument("--delayed-steps", type=int, default=10)
    sp.add_argument("--backbone", default=DEFAULT_BACKBONE, choices=list_backbones())
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--guidance", type=float, default=7.5)
    sp.add_argument("--out-csv", default="eval.csv")
    sp.add_argument("--out-plot")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ls", help="list persisted deltas")
    common(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_ls)

    sp = sub.add_parser("serve", help="run the HTTP control service")
    common(sp)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8787)
    sp.add_argument("--backbone", default=DEFAULT_BACKBONE, choices=list_backbones())
    sp.add_argument("--encoder", default=DEFAULT_ENCODER, choices=list_encoders())
    sp.set_defaults(fn=cmd_serve)

    return p


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _fail("usage", str(exc))
        return 1
    try:
        return args.fn(args)
    except UsageError as exc:
        _fail("usage", str(exc))
        return 1
    except (AttrDeltaError, KeyError, ValueError, OSError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else str(exc.args[0])
        _fail(type(exc).__name__, msg)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        _fail(type(exc).__name__, f"internal error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
