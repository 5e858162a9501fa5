"""The assembled network: per-granularity Siamese backbones, second-order
pooling, canonical maxout, granularity fusion, spectral normalization and the
linear classifier.

Inputs are pre-rendered branch stacks of shape ``(B, S, |Phi|, H, W, C)``
(see ``canonical.render_branches``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import net
from .canonical import (GranularitySpec, MaxoutCache, TransformSet, fuse_granularities,
                        fuse_granularities_backward, maxout, maxout_backward)
from .errors import ShapeMismatch
from .sop import PoolCache, SopConfig, pool_backward, pool_forward
from .spectral import (DEGENERACY_TOL, EPS_HI, EPS_LO, SpectralCache, check_mode,
                       normalize_backward, normalize_forward)


@dataclass(frozen=True)
class PipelineConfig:
    num_classes: int = 8
    in_channels: int = 1
    channels: int = 32
    input_size: int = 56
    transforms: TransformSet = field(default_factory=TransformSet)
    granularity: GranularitySpec = field(default_factory=GranularitySpec)
    norm: str = "sqrt_e"
    sop: SopConfig = field(default_factory=SopConfig)
    eps_lo: float = EPS_LO
    eps_hi: float = EPS_HI
    degeneracy_tol: float = DEGENERACY_TOL
    head_bias: bool = True

    def __post_init__(self):
        check_mode(self.norm)

    @property
    def order(self) -> int:
        return self.sop.output_order(self.channels)


def level_prefix(level: int) -> str:
    return f"g{level}."


@dataclass
class ForwardCache:
    backbone: list
    pool: list[PoolCache]
    maxout: list[MaxoutCache]
    fused: np.ndarray
    spectral: SpectralCache
    normalized: np.ndarray
    vec: np.ndarray
    probs: np.ndarray


class MgcapModel:
    def __init__(self, cfg: PipelineConfig, seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for s in range(cfg.granularity.levels):
                for k, v in net.init_backbone(cfg.in_channels, cfg.channels, rng).items():
                    params[level_prefix(s) + k] = v
            params.update(net.init_head(cfg.order, cfg.num_classes, rng, cfg.head_bias))
        self.params = params

    # -- parameter groups
    def backbone_params(self, level: int) -> dict[str, np.ndarray]:
        p = level_prefix(level)
        return {k[len(p):]: v for k, v in self.params.items() if k.startswith(p)}

    def head_names(self) -> list[str]:
        return sorted(k for k in self.params if k.startswith("head.") and k not in net.HEAD_BUFFERS)

    def trainable_names(self) -> list[str]:
        return sorted(k for k in self.params if k not in net.HEAD_BUFFERS)

    def param_shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.params.items()}

    # -- forward
    def _check_input(self, x: np.ndarray) -> None:
        cfg = self.cfg
        want = (cfg.granularity.levels, cfg.transforms.count)
        if x.ndim != 6 or x.shape[1:3] != want or x.shape[-1] != cfg.in_channels:
            raise ShapeMismatch(
                f"expected (B, {want[0]}, {want[1]}, H, W, {cfg.in_channels}), got {x.shape}")

    def pooled(self, x: np.ndarray):
        """Fused (pre-normalization) SPD matrices ``(B, c, c)`` plus caches."""
        self._check_input(x)
        cfg = self.cfg
        b, levels, phi = x.shape[:3]
        bb_caches, pool_caches, max_caches, per_level = [], [], [], []
        for s in range(levels):
            flat = x[:, s].reshape((b * phi,) + x.shape[3:])
            feats, bc = net.backbone_forward(self.backbone_params(s), flat)
            g_plus, pc = pool_forward(feats, cfg.sop)
            g_max, mc = maxout(g_plus.reshape((b, phi) + g_plus.shape[-2:]), axis=1)
            bb_caches.append(bc)
            pool_caches.append(pc)
            max_caches.append(mc)
            per_level.append(g_max)
        fused = fuse_granularities(per_level)
        return fused, (bb_caches, pool_caches, max_caches)

    def features(self, x: np.ndarray):
        """Normalized SPD features ``(B, c, c)`` and the forward caches."""
        fused, caches = self.pooled(x)
        cfg = self.cfg
        normalized, sc = normalize_forward(fused, cfg.norm, cfg.eps_lo, cfg.eps_hi)
        return normalized, fused, sc, caches

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        normalized, fused, sc, (bb, pc, mc) = self.features(x)
        logits, vec = net.head_forward(self.params, normalized)
        probs = net.softmax(logits)
        return probs, ForwardCache(bb, pc, mc, fused, sc, normalized, vec, probs)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    # -- backward
    def backward(self, cache: ForwardCache, d_logits: np.ndarray, head_only: bool = False):
        cfg = self.cfg
        grads, d_norm = net.head_backward(self.params, cache.vec, d_logits, cfg.order)
        if head_only:
            return grads
        d_fused = normalize_backward(cache.spectral, d_norm, cfg.degeneracy_tol)
        levels = cfg.granularity.levels
        d_levels = fuse_granularities_backward(d_fused, levels)
        for s in range(levels):
            d_branches = maxout_backward(cache.maxout[s], d_levels[s], axis=1)
            b, phi = d_branches.shape[:2]
            d_branches = d_branches.reshape((b * phi,) + d_branches.shape[2:])
            d_feats = pool_backward(cache.pool[s], d_branches, cfg.sop)
            g, _ = net.backbone_backward(self.backbone_params(s), cache.backbone[s], d_feats)
            for k, v in g.items():
                grads[level_prefix(s) + k] = v
        return grads

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, head_only: bool = False):
        probs, cache = self.forward(x)
        loss, d_logits = net.cross_entropy(probs, labels)
        return loss, probs, self.backward(cache, d_logits, head_only)
