"""Finite-difference verification of every hand-written backward pass.

Each trial draws a random input ``X``, a random linear read-out ``W`` and a
random direction ``D``; the analytic directional derivative ``<grad, D>`` of
``L(X) = <W, f(X)>`` is compared with a difference quotient along ``D``.

Piecewise-smooth layers (ReLU, max-pool, maxout, the eigenvalue clamp) are
guarded: a trial whose discrete routing changes anywhere in the stencil is
redrawn, as is a spectral trial whose eigenvalues nearly coincide.  The number
of redraws is reported.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import net
from .canonical import GranularitySpec, TransformSet, maxout, maxout_backward
from .linalg import sym
from .model import MgcapModel, PipelineConfig
from .sop import (covariance, covariance_backward, feature_mean, feature_mean_backward,
                  gaussian_embed, gaussian_embed_backward, trace_ridge, trace_ridge_backward)
from .spectral import normalize_backward, normalize_forward

SCOPES = ("covariance", "gaussian", "ridge", "spectral_log", "spectral_sqrt",
          "maxout", "backbone", "full")
CLOSED_FORM = ("covariance", "gaussian", "ridge", "maxout")
TOL_CLOSED = 1e-5
TOL_OTHER = 1e-4
MAX_REDRAWS = 50


def tolerance(scope: str) -> float:
    return TOL_CLOSED if scope in CLOSED_FORM else TOL_OTHER


def rel_err(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central(fn, h: float) -> float:
    return (fn(h) - fn(-h)) / (2.0 * h)


def five_point(fn, h: float) -> float:
    return (8.0 * (fn(h) - fn(-h)) - (fn(2 * h) - fn(-2 * h))) / (12.0 * h)


class Redraw(Exception):
    """Raised inside a trial when a guard trips."""


@dataclass
class GradcheckReport:
    scope: str
    trials: int
    max_rel_err: float
    tol: float
    redraws: int
    finite: bool
    seconds: float
    degenerate: bool = False

    @property
    def passed(self) -> bool:
        return self.finite and self.max_rel_err <= self.tol

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = " degenerate" if self.degenerate else ""
        return (f"{self.scope}{extra}: {tag} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e} "
                f"trials={self.trials} redraws={self.redraws} finite={self.finite} "
                f"time={self.seconds:.1f}s")


# ---------------------------------------------------------------- random inputs

def _sym_direction(rng, n: int) -> np.ndarray:
    d = sym(rng.normal(size=(n, n)))
    return d / np.linalg.norm(d, 2)


def _spd(rng, n: int, lo: float = 1e-2, hi: float = 1e2, min_gap: float = 1e-3) -> np.ndarray:
    vals = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    s = np.sort(vals)
    if n > 1 and np.min(np.diff(s) / s[1:]) < min_gap:
        raise Redraw
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return sym((q * vals) @ q.T)


# ---------------------------------------------------------------- closed-form scopes

def _trial_covariance(rng) -> float:
    c, n = rng.integers(2, 7), rng.integers(4, 20)
    f = rng.normal(size=(c, n))
    w = rng.normal(size=(c, c))
    d = rng.normal(size=(c, n))
    analytic = float(np.sum(covariance_backward(f, w) * d))
    numeric = central(lambda t: float(np.sum(w * covariance(f + t * d))), 1e-4)
    return rel_err(analytic, numeric)


def _trial_gaussian(rng) -> float:
    c, n = rng.integers(2, 7), rng.integers(4, 20)
    conv = "mean" if rng.random() < 0.5 else "sum"
    f = rng.normal(size=(c, n))
    w = rng.normal(size=(c + 1, c + 1))
    d = rng.normal(size=(c, n))

    def forward(x):
        return gaussian_embed(covariance(x), feature_mean(x, conv))

    dc, dmu = gaussian_embed_backward(covariance(f), feature_mean(f, conv), w)
    grad = covariance_backward(f, dc) + feature_mean_backward(f, dmu, conv)
    analytic = float(np.sum(grad * d))
    numeric = central(lambda t: float(np.sum(w * forward(f + t * d))), 1e-4)
    return rel_err(analytic, numeric)


def _trial_ridge(rng) -> float:
    c = rng.integers(2, 10)
    lam = float(10.0 ** rng.uniform(-6, 0))
    g = sym(rng.normal(size=(c, c)))
    w = rng.normal(size=(c, c))
    d = _sym_direction(rng, c)
    analytic = float(np.sum(trace_ridge_backward(g, lam, w) * d))
    numeric = central(lambda t: float(np.sum(w * trace_ridge(g + t * d, lam))), 1e-4)
    return rel_err(analytic, numeric)


def _trial_maxout(rng) -> float:
    phi, c = rng.integers(2, 13), rng.integers(2, 8)
    x = rng.normal(size=(phi, c, c))
    w = rng.normal(size=(c, c))
    d = rng.normal(size=(phi, c, c))
    h = 1e-6
    out, cache = maxout(x, axis=0)
    for t in (h, -h):
        if not np.array_equal(maxout(x + t * d, axis=0)[1].argmax_index, cache.argmax_index):
            raise Redraw
    analytic = float(np.sum(maxout_backward(cache, w, axis=0) * d))
    numeric = central(lambda t: float(np.sum(w * maxout(x + t * d, axis=0)[0])), h)
    return rel_err(analytic, numeric)


# ---------------------------------------------------------------- spectral scopes

_SPECTRAL_ORDERS = (3, 8, 33)


def _spectral_trial(mode: str):
    def trial(rng, k: int) -> float:
        n = _SPECTRAL_ORDERS[k % len(_SPECTRAL_ORDERS)]
        g = _spd(rng, n)
        w = rng.normal(size=(n, n))
        d = _sym_direction(rng, n)
        _, cache = normalize_forward(g, mode)
        analytic = float(np.sum(normalize_backward(cache, w) * d))
        h = 1e-3 * float(cache.eig.eigvals.min())
        numeric = five_point(lambda t: float(np.sum(w * normalize_forward(g + t * d, mode)[0])), h)
        return rel_err(analytic, numeric)
    return trial


def degenerate_inputs(rng, n: int) -> list[np.ndarray]:
    """lambda*I at three scales plus rank-one-plus-ridge matrices."""
    mats = [lam * np.eye(n) for lam in (1e-4, 1.0, 1e3)]
    v = rng.normal(size=n)
    for ridge in (1e-4, 1.0):
        mats.append(np.outer(v, v) + ridge * np.eye(n))
    return mats


def spectral_degenerate(mode: str, seed: int = 0, trials: int = 100) -> GradcheckReport:
    """Fully or partly repeated spectra.

    Random upstream gradients must stay finite.  For ``f(G) = trace(g(G))``,
    whose gradient ``g'(G)`` is unaffected by the zeroed Loewner entries, the
    backward pass must also match finite differences.
    """
    t0 = time.perf_counter()
    worst, finite, count = 0.0, True, 0
    for k in range(trials):
        rng = np.random.default_rng([seed, SCOPES.index(f"spectral_{mode[:-2]}"), 1, k])
        n = _SPECTRAL_ORDERS[k % len(_SPECTRAL_ORDERS)]
        for g in degenerate_inputs(rng, n):
            _, cache = normalize_forward(g, mode)
            finite &= bool(np.all(np.isfinite(normalize_backward(cache, rng.normal(size=(n, n))))))
            grad = normalize_backward(cache, np.eye(n))
            finite &= bool(np.all(np.isfinite(grad)))
            d = _sym_direction(rng, n)
            h = 1e-3 * float(cache.rect.values.min())
            numeric = five_point(lambda t: float(np.trace(normalize_forward(g + t * d, mode)[0])), h)
            worst = max(worst, rel_err(float(np.sum(grad * d)), numeric))
            count += 1
    scope = "spectral_log" if mode == "log_e" else "spectral_sqrt"
    return GradcheckReport(scope, count, worst, tolerance(scope), 0, finite,
                           time.perf_counter() - t0, degenerate=True)


# ---------------------------------------------------------------- network scopes

def _backbone_signature(cache: net.BackboneCache) -> list[np.ndarray]:
    return list(cache.relu_masks) + list(cache.pool_args)


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _trial_backbone(rng) -> float:
    params = net.init_backbone(1, 4, rng)
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.normal(0.0, 0.1, params[k].shape)
    x = rng.uniform(0.0, 1.0, (2, 8, 8, 1))
    feats, cache = net.backbone_forward(params, x)
    w = rng.normal(size=feats.shape)
    grads, dx = net.backbone_backward(params, cache, w, need_dx=True)
    grads["input"] = dx
    sig = _backbone_signature(cache)
    h = 1e-6
    worst = 0.0
    for name in sorted(grads):
        base = x if name == "input" else params[name]
        d = rng.normal(size=base.shape)

        def loss(t, name=name, base=base, d=d):
            if name == "input":
                f, c = net.backbone_forward(params, base + t * d)
            else:
                f, c = net.backbone_forward({**params, name: base + t * d}, x)
            if not _same(_backbone_signature(c), sig):
                raise Redraw
            return float(np.sum(w * f))

        worst = max(worst, rel_err(float(np.sum(grads[name] * d)), central(loss, h)))
    return worst


def tiny_pipeline(norm: str = "sqrt_e") -> PipelineConfig:
    """2 classes, D=4, 8x8 single-channel input, two transforms, one granularity."""
    return PipelineConfig(num_classes=2, in_channels=1, channels=4, input_size=8,
                          transforms=TransformSet(2), granularity=GranularitySpec((1.0,)),
                          norm=norm)


def _full_signature(model: MgcapModel, x: np.ndarray):
    fused, (bb, _, mc) = model.pooled(x)
    _, sc = normalize_forward(fused, model.cfg.norm, model.cfg.eps_lo, model.cfg.eps_hi)
    sig = [m.argmax_index for m in mc] + [sc.rect.mask]
    for c in bb:
        sig += _backbone_signature(c)
    return sig, sc


def _trial_full(rng) -> float:
    model = MgcapModel(tiny_pipeline(), seed=int(rng.integers(2 ** 31)))
    d_vec = net.sym_vec_dim(model.cfg.order)
    model.params["head.w"] = rng.normal(0.0, 0.5, model.params["head.w"].shape)
    model.params["head.mean"] = rng.normal(0.0, 0.1, d_vec)
    model.params["head.scale"] = rng.uniform(0.5, 2.0, d_vec)
    x = rng.uniform(0.0, 1.0, (3, 1, 2, 8, 8, 1))
    labels = rng.integers(0, 2, 3)
    sig, sc = _full_signature(model, x)
    nu = np.sort(sc.eig.eigvals, axis=-1)
    if np.min(np.diff(nu, axis=-1) / np.maximum(np.abs(nu[..., 1:]), 1e-300)) < 1e-6:
        raise Redraw
    _, _, grads = model.loss_and_grads(x, labels)
    h = 1e-6
    worst = 0.0
    for name in model.trainable_names():
        base = model.params[name]
        d = rng.normal(size=base.shape)

        def loss(t, name=name, base=base, d=d):
            m = MgcapModel(model.cfg, params={**model.params, name: base + t * d})
            if not _same(_full_signature(m, x)[0], sig):
                raise Redraw
            return net.cross_entropy(m.predict(x), labels)[0]

        worst = max(worst, rel_err(float(np.sum(grads[name] * d)), central(loss, h)))
    return worst


_TRIALS = {
    "covariance": lambda rng, k: _trial_covariance(rng),
    "gaussian": lambda rng, k: _trial_gaussian(rng),
    "ridge": lambda rng, k: _trial_ridge(rng),
    "spectral_log": _spectral_trial("log_e"),
    "spectral_sqrt": _spectral_trial("sqrt_e"),
    "maxout": lambda rng, k: _trial_maxout(rng),
    "backbone": lambda rng, k: _trial_backbone(rng),
    "full": lambda rng, k: _trial_full(rng),
}


def run_scope(scope: str, trials: int = 100, seed: int = 0) -> GradcheckReport:
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; valid scopes: {', '.join(SCOPES)}")
    t0 = time.perf_counter()
    fn = _TRIALS[scope]
    worst, redraws, finite = 0.0, 0, True
    for k in range(trials):
        for attempt in range(MAX_REDRAWS):
            rng = np.random.default_rng([seed, SCOPES.index(scope), 0, k, attempt])
            try:
                err = fn(rng, k)
                break
            except Redraw:
                redraws += 1
        else:
            raise RuntimeError(f"{scope}: trial {k} hit a guard {MAX_REDRAWS} times")
        finite &= bool(np.isfinite(err))
        worst = max(worst, err) if np.isfinite(err) else np.inf
    return GradcheckReport(scope, trials, worst, tolerance(scope), redraws, finite,
                           time.perf_counter() - t0)


def run_gradcheck(scope: str, trials: int = 100, seed: int = 0,
                  degenerate: bool = False) -> GradcheckReport:
    if degenerate:
        if scope not in ("spectral_log", "spectral_sqrt"):
            raise ValueError("--degenerate applies to spectral_log and spectral_sqrt only")
        return spectral_degenerate("log_e" if scope == "spectral_log" else "sqrt_e", seed, trials)
    return run_scope(scope, trials, seed)
