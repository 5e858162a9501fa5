"""Two-stage training: classifier head first, then the whole network.

Randomness is derived from ``(seed, stage, epoch[, sample])`` so results do
not depend on iteration order, and a resumed run replays exactly.  After
every epoch the parameters and momentum buffers are rounded to float32, the
precision the checkpoint stores, so a checkpoint reloads to the exact state
that produced the logged metrics.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net
from .canonical import render_branches
from .checkpoint import check_shapes, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data.manifest import DatasetManifest, load_images, read_manifest, split
from .data.transforms import center_crop_to, hflip, random_crop
from .errors import EmptyDataset
from .model import MgcapModel

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "stage", "split", "loss", "top1")
CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "config.txt"
# rendered branch stacks are kept in memory below this size
BRANCH_CACHE_BYTES = 512 * 2 ** 20


@dataclass
class Split:
    images: np.ndarray
    labels: np.ndarray
    _branches: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.labels)


def run_manifest(cfg: RunConfig) -> DatasetManifest:
    """The configured manifest, re-split when ``train_ratio`` is set."""
    manifest = read_manifest(cfg.manifest)
    if cfg.train_ratio > 0:
        manifest = split(manifest, cfg.train_ratio, cfg.split_seed)
    return manifest


def load_split(manifest: DatasetManifest, tag: str, cfg: RunConfig) -> Split:
    images, labels = load_images(manifest, tag, cfg.image_size)
    return Split(images, labels)


def render_batch(images: np.ndarray, model: MgcapModel, cfg: RunConfig,
                 rngs: list[np.random.Generator] | None = None) -> np.ndarray:
    """Crop (random + flip when ``rngs`` is given, else centered) and render branches."""
    pc = model.cfg
    out = []
    for i, img in enumerate(images):
        if rngs is not None:
            img = hflip(random_crop(img, cfg.crop_size, rngs[i]), rngs[i])
        else:
            img = center_crop_to(img, cfg.crop_size)
        out.append(render_branches(img, pc.transforms, pc.granularity.crop_ratios, cfg.input_size))
    return np.asarray(out)


def eval_branches(split: Split, model: MgcapModel, cfg: RunConfig, idx: np.ndarray) -> np.ndarray:
    """Deterministic (eval-mode) branch inputs, memoized when they fit."""
    if split._branches is None:
        pc = model.cfg
        per = (pc.granularity.levels * pc.transforms.count * cfg.input_size ** 2
               * split.images.shape[-1] * 8)
        if per * len(split) <= BRANCH_CACHE_BYTES:
            split._branches = render_batch(split.images, model, cfg)
        else:
            return render_batch(split.images[idx], model, cfg)
    return split._branches[idx]


def batches(n: int, size: int):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


def evaluate(model: MgcapModel, split: Split, cfg: RunConfig) -> tuple[float, float, np.ndarray]:
    """Forward-only pass; returns (mean loss, top-1 accuracy, predictions)."""
    if len(split) == 0:
        raise EmptyDataset("cannot evaluate an empty split")
    total, preds = 0.0, []
    for idx in batches(len(split), cfg.batch_size):
        probs = model.predict(eval_branches(split, model, cfg, idx))
        loss, _ = net.cross_entropy(probs, split.labels[idx])
        total += loss * len(idx)
        preds.append(probs.argmax(axis=1))
    preds = np.concatenate(preds)
    return total / len(split), float(np.mean(preds == split.labels)), preds


def _epoch_rng(cfg: RunConfig, stage: int, epoch: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stage, epoch, *extra])


def train_epoch(model: MgcapModel, split: Split, cfg: RunConfig, stage: int, epoch: int,
                opt: net.OptimizerState, head_features: np.ndarray | None = None) -> tuple[float, float]:
    """One pass over ``split`` in a seeded random order.

    Stage 1 updates only the head; when ``head_features`` (normalized SPD
    features of a frozen backbone) is given, the backbone is skipped.
    """
    if len(split) == 0:
        raise EmptyDataset("training split is empty")
    order = _epoch_rng(cfg, stage, epoch).permutation(len(split))
    head_only = stage == 1
    names = model.head_names() if head_only else model.trainable_names()
    total, correct = 0.0, 0
    for idx in batches(len(order), cfg.batch_size):
        sel = order[idx]
        labels = split.labels[sel]
        if head_features is not None:
            logits, vec = net.head_forward(model.params, head_features[sel])
            probs = net.softmax(logits)
            loss, d_logits = net.cross_entropy(probs, labels)
            grads, _ = net.head_backward(model.params, vec, d_logits, model.cfg.order)
        else:
            if cfg.augment:
                rngs = [_epoch_rng(cfg, stage, epoch, int(i)) for i in sel]
                x = render_batch(split.images[sel], model, cfg, rngs)
            else:
                x = eval_branches(split, model, cfg, sel)
            loss, probs, grads = model.loss_and_grads(x, labels, head_only=head_only)
        if not head_only:
            grads = net.clip_grad_norm(grads, names, cfg.grad_clip)
        net.sgd_momentum_step(model.params, grads, opt, names)
        total += loss * len(sel)
        correct += int(np.sum(probs.argmax(axis=1) == labels))
    return total / len(order), correct / len(order)


def head_features(model: MgcapModel, split: Split, cfg: RunConfig) -> np.ndarray:
    feats = []
    for idx in batches(len(split), cfg.batch_size):
        feats.append(model.features(eval_branches(split, model, cfg, idx))[0])
    return np.concatenate(feats)


def round_to_f32(arrays: dict[str, np.ndarray]) -> None:
    for k, v in arrays.items():
        arrays[k] = v.astype(np.float32).astype(np.float64)


def format_metrics(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for epoch, stage, tag, loss, top1 in rows:
        w.writerow([epoch, stage, tag, f"{loss:.6f}", f"{top1:.6f}"])
    return buf.getvalue()


def read_metrics(path: Path) -> list[tuple]:
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(e), int(s), t, float(l), float(a)) for e, s, t, l, a in rows]


@dataclass
class TrainResult:
    model: MgcapModel
    metrics: list[tuple]
    test_top1: float | None


def checkpoint_tensors(model: MgcapModel, opt: net.OptimizerState | None, stage: int,
                       epoch_in_stage: int, global_epoch: int) -> dict[str, np.ndarray]:
    tensors = {f"param/{k}": v for k, v in model.params.items()}
    if opt is not None:
        tensors.update({f"opt/{k}": v for k, v in opt.velocity.items()})
    tensors["meta/progress"] = np.array([stage, epoch_in_stage, global_epoch], dtype=np.float64)
    return tensors


def model_from_checkpoint(path, model: MgcapModel) -> tuple[dict, dict, np.ndarray]:
    tensors = load_checkpoint(path)
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    check_shapes(params, model.param_shapes())
    velocity = {k[4:]: v for k, v in tensors.items() if k.startswith("opt/")}
    progress = tensors.get("meta/progress", np.zeros(3))
    return params, velocity, progress


def train(cfg: RunConfig, manifest: DatasetManifest, out_dir: str | Path | None = None,
          resume: bool = False) -> TrainResult:
    """Stage 1 (head, ``lr_stage1``) then stage 2 (everything, ``lr_stage2``)."""
    train_split = load_split(manifest, "train", cfg)
    test_split = load_split(manifest, "test", cfg) if manifest.subset("test") else None
    pc = cfg.pipeline(manifest.num_classes, train_split.images.shape[-1])
    model = MgcapModel(pc, seed=cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    metrics: list[tuple] = []
    start_stage, start_epoch, velocity = 1, 0, {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_NAME).write_text(cfg.to_text(), encoding="utf-8", newline="\n")
        if resume and (out / CHECKPOINT_NAME).exists():
            params, velocity, progress = model_from_checkpoint(out / CHECKPOINT_NAME, model)
            model.params = params
            stage, done, global_done = (int(x) for x in progress)
            start_stage, start_epoch = stage, done
            if (out / METRICS_NAME).exists():
                metrics = [r for r in read_metrics(out / METRICS_NAME) if r[0] <= global_done]
            log.info("resuming at stage %d after %d epochs", stage, done)

    def record(global_epoch, stage, stage_epoch, opt, tr_feats=None, te_feats=None):
        for tag, split, feats in (("train", train_split, tr_feats), ("test", test_split, te_feats)):
            if split is None:
                continue
            if feats is not None:
                probs = net.softmax(net.head_forward(model.params, feats)[0])
                loss, _ = net.cross_entropy(probs, split.labels)
                acc = float(np.mean(probs.argmax(axis=1) == split.labels))
            else:
                loss, acc, _ = evaluate(model, split, cfg)
            metrics.append((global_epoch, stage, tag, loss, acc))
            log.info("epoch %d stage %d %s loss %.4f top1 %.4f", global_epoch, stage, tag, loss, acc)
        if out is not None:
            save_checkpoint(out / CHECKPOINT_NAME,
                            checkpoint_tensors(model, opt, stage, stage_epoch, global_epoch))
            (out / METRICS_NAME).write_text(format_metrics(metrics), encoding="utf-8", newline="\n")

    stages = ((1, cfg.epochs_stage1, cfg.lr_stage1, cfg.decay_every_stage1),
              (2, cfg.epochs_stage2, cfg.lr_stage2, cfg.decay_every_stage2))
    global_epoch = 0
    for stage, epochs, base_lr, every in stages:
        if stage < start_stage:
            global_epoch += epochs
            continue
        first = start_epoch if stage == start_stage else 0
        global_epoch += first
        opt = net.OptimizerState(base_lr, cfg.momentum, cfg.weight_decay,
                                 dict(velocity) if stage == start_stage else {})
        if first >= epochs:
            continue
        tr_feats = te_feats = fit_feats = None
        if stage == 1:
            # frozen backbone: normalized features never change during this stage
            tr_feats = head_features(model, train_split, cfg)
            if first == 0:
                net.fit_head_standardizer(model.params, net.sym_vectorize(tr_feats))
            te_feats = head_features(model, test_split, cfg) if test_split is not None else None
            fit_feats = None if cfg.augment else tr_feats
        for e in range(first, epochs):
            opt.lr = net.step_decay_lr(base_lr, e, every, cfg.lr_decay)
            train_epoch(model, train_split, cfg, stage, e, opt, fit_feats)
            round_to_f32(model.params)
            round_to_f32(opt.velocity)
            global_epoch += 1
            record(global_epoch, stage, e + 1, opt, tr_feats, te_feats)
    test_top1 = None
    tests = [m for m in metrics if m[2] == "test"]
    if tests:
        test_top1 = tests[-1][4]
    return TrainResult(model, metrics, test_top1)
