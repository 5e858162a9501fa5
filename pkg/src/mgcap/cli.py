"""Command-line entry point: ``mgcap {train,eval,gradcheck,synth,inspect}``.

Configuration comes from ``--config FILE`` (``key = value`` lines) and any
number of ``--key=value`` overrides, which win over the file.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, net
from .canonical import canonical_report, render_branches
from .config import RunConfig, load_config
from .data import SyntheticSpec, generate_synthetic, load_ppm, resize_bilinear
from .data.transforms import center_crop_to, square
from .errors import CheckpointError, ConfigError, MgcapError
from .gradcheck import SCOPES, run_gradcheck
from .linalg import sym_eig_stack
from .model import MgcapModel
from .spectral import normalize_forward, rectify, spectrum_map
from .train import (CHECKPOINT_NAME, CONFIG_NAME, evaluate, load_split, model_from_checkpoint,
                    run_manifest, train)


def _split_overrides(extra: list[str]) -> dict[str, str]:
    """``--key=value`` or ``--key value`` pairs left over by argparse."""
    pairs: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            i += 1
            value = extra[i]
        else:
            raise ConfigError(f"override {tok!r} needs a value")
        pairs[key] = value
        i += 1
    return pairs


def _config(args, extra) -> RunConfig:
    path = args.config
    if path is None and getattr(args, "checkpoint", None):
        beside = Path(args.checkpoint).parent / CONFIG_NAME
        path = beside if beside.exists() else None
    return load_config(path, _split_overrides(extra))


def _load_model(cfg: RunConfig, checkpoint: str, num_classes: int, channels: int) -> MgcapModel:
    model = MgcapModel(cfg.pipeline(num_classes, channels), seed=cfg.seed)
    params, _, _ = model_from_checkpoint(checkpoint, model)
    model.params = params
    return model


# ---------------------------------------------------------------- commands

def cmd_train(args, extra) -> int:
    cfg = _config(args, extra)
    result = train(cfg, run_manifest(cfg), args.out, resume=args.resume)
    final = [m for m in result.metrics if m[0] == result.metrics[-1][0]] if result.metrics else []
    for epoch, stage, tag, loss, top1 in final:
        print(f"epoch {epoch} stage {stage} {tag}: loss {loss:.6f} top1 {top1:.6f}")
    print(f"wrote {Path(args.out) / CHECKPOINT_NAME}")
    return 0


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


def confusion_csv(m: np.ndarray, names: list[str]) -> str:
    lines = ["true\\pred," + ",".join(names)]
    for name, row in zip(names, m):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def cmd_eval(args, extra) -> int:
    if not Path(args.checkpoint).is_file():
        raise CheckpointError(f"checkpoint {args.checkpoint} not found")
    cfg = _config(args, extra)
    manifest = run_manifest(cfg)
    data = load_split(manifest, args.split, cfg)
    model = _load_model(cfg, args.checkpoint, manifest.num_classes, data.images.shape[-1])
    loss, top1, preds = evaluate(model, data, cfg)
    m = confusion_matrix(data.labels, preds, manifest.num_classes)
    for k, name in enumerate(manifest.class_names):
        total = int(m[k].sum())
        acc = m[k, k] / total if total else float("nan")
        print(f"{name}: {acc:.6f} ({int(m[k, k])}/{total})")
    print(f"overall {args.split}: top1 {top1:.6f} loss {loss:.6f} n={len(data)}")
    out = Path(args.confusion) if args.confusion else (
        Path(args.checkpoint).parent / f"confusion_{args.split}.csv")
    out.write_text(confusion_csv(m, manifest.class_names), encoding="utf-8", newline="\n")
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args, extra) -> int:
    if extra:
        raise ConfigError(f"gradcheck takes no overrides, got {extra}")
    report = run_gradcheck(args.scope, args.trials, args.seed, args.degenerate)
    print(report.line())
    return 0 if report.passed else 1


def cmd_synth(args, extra) -> int:
    if extra:
        raise ConfigError(f"synth takes no overrides, got {extra}")
    spec = SyntheticSpec(num_classes=args.classes, samples_per_class=args.samples_per_class,
                         image_size=args.image_size, noise_sigma=args.noise, seed=args.seed)
    manifest = generate_synthetic(spec, args.out, args.train_ratio, args.split_seed)
    n_train = len(manifest.subset("train"))
    print(f"wrote {len(manifest.records)} images ({n_train} train) to {args.out}")
    return 0


def _fmt(values) -> str:
    return " ".join(f"{v:.6g}" for v in values)


def cmd_inspect(args, extra) -> int:
    if not Path(args.checkpoint).is_file():
        raise CheckpointError(f"checkpoint {args.checkpoint} not found")
    cfg = _config(args, extra)
    img = square(load_ppm(args.image))
    if img.shape[0] != cfg.image_size:
        img = resize_bilinear(img, cfg.image_size)
    img = center_crop_to(img, cfg.crop_size)
    num_classes = args.classes
    if num_classes is None:
        num_classes = run_manifest(cfg).num_classes
    model = _load_model(cfg, args.checkpoint, num_classes, img.shape[-1])
    pc = model.cfg
    x = render_branches(img, pc.transforms, pc.granularity.crop_ratios, cfg.input_size)[None]
    fused, (_, _, max_caches) = model.pooled(x)
    normalized, _ = normalize_forward(fused, pc.norm, pc.eps_lo, pc.eps_hi)
    probs = net.classify(normalized, model.params)[0]
    print("probabilities: " + _fmt(probs))
    print(f"predicted: {int(np.argmax(probs))}")
    for entry in canonical_report(max_caches, pc.transforms.angles_deg):
        print(f"granularity {entry['level']} (ratio {pc.granularity.crop_ratios[entry['level']]}): "
              f"canonical angle {entry['angle_deg']:g} deg, dominance {entry['dominance']}")
    nu = sym_eig_stack(fused)[0][0]
    print("spectrum before: " + _fmt(nu))
    # identity mode bypasses the decomposition, so its output keeps the raw spectrum
    after = nu if pc.norm == "identity" else spectrum_map(pc.norm, rectify(nu, pc.eps_lo, pc.eps_hi).values)
    print(f"spectrum after ({pc.norm}): " + _fmt(after))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mgcap",
        description="Multi-granularity canonical-appearance second-order pooling.",
        epilog="Extra --key=value arguments override config keys (train, eval, inspect).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="run directory (checkpoint, metrics, config)")
    t.add_argument("--resume", action="store_true", help="continue from the run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-class accuracy and confusion matrix")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="defaults to config.txt beside the checkpoint")
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--confusion", help="confusion CSV path")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference verification")
    g.add_argument("scope", choices=SCOPES, metavar="scope",
                   help="one of: " + ", ".join(SCOPES))
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--degenerate", action="store_true",
                   help="spectral scopes: repeated-eigenvalue inputs")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write the synthetic rotated-texture dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--samples-per-class", type=int, default=200)
    s.add_argument("--image-size", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-ratio", type=float, default=0.5)
    s.add_argument("--split-seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    i = sub.add_parser("inspect", help="single-image forward pass report")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--config", help="defaults to config.txt beside the checkpoint")
    i.add_argument("--classes", type=int, help="class count (default: from the manifest)")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args, extra)
    except (MgcapError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"mgcap: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
