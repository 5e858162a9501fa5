"""Desk-scale backbone, classifier head over the SPD feature, loss and optimizer.

Tensors are NHWC.  Parameters live in plain ``dict[str, np.ndarray]`` so the
optimizer, checkpointing and gradient checks can walk them by name.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

MOMENTUM = 0.9
WEIGHT_DECAY = 5e-4


# ---------------------------------------------------------------- layers

def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution, stride 1, zero pad 1.  ``w`` is ``(3, 3, Cin, Cout)``."""
    n, h, wd, cin = x.shape
    if w.shape[:3] != (3, 3, cin):
        raise ShapeMismatch(f"kernel {w.shape} does not take {cin} input channels")
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i:i + h, j:j + wd] for i in range(3) for j in range(3)],
                          axis=-1).reshape(n * h * wd, 9 * cin)
    out = cols @ w.reshape(9 * cin, -1) + b
    return out.reshape(n, h, wd, -1), cols


def conv3x3_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape,
                     need_dx: bool = True):
    n, h, wd, cin = x_shape
    cout = w.shape[-1]
    d = dout.reshape(-1, cout)
    dw = (cols.T @ d).reshape(w.shape)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d @ w.reshape(9 * cin, cout).T).reshape(n, h, wd, 9, cin)
    dxp = np.zeros((n, h + 2, wd + 2, cin))
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i:i + h, j:j + wd] += dcols[:, :, :, k]
    return dxp[:, 1:-1, 1:-1], dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2 max pool, stride 2; odd trailing rows/columns are dropped."""
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    win = (x[:, :2 * h2, :2 * w2].reshape(n, h2, 2, w2, 2, c)
           .transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4))
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(dout: np.ndarray, arg: np.ndarray, x_shape) -> np.ndarray:
    n, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    win = np.zeros((n, h2, w2, c, 4))
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :2 * h2, :2 * w2] = (win.reshape(n, h2, w2, c, 2, 2)
                               .transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c))
    return dx


# ---------------------------------------------------------------- backbone

BACKBONE_LAYERS = ("conv1", "conv2", "conv3")


def init_backbone(in_channels: int, out_channels: int, rng: np.random.Generator,
                  widths: tuple[int, int] = (16, 32)) -> dict[str, np.ndarray]:
    """He fan-in initialization, zero biases."""
    chans = (in_channels, widths[0], widths[1], out_channels)
    params = {}
    for k, name in enumerate(BACKBONE_LAYERS):
        fan_in = 9 * chans[k]
        params[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (3, 3, chans[k], chans[k + 1]))
        params[f"{name}.b"] = np.zeros(chans[k + 1])
    return params


@dataclass
class BackboneCache:
    x_shapes: list
    cols: list
    relu_masks: list
    pool_args: list
    pool_in_shapes: list
    out_hw: tuple[int, int]


def backbone_forward(params: dict[str, np.ndarray], x: np.ndarray):
    """conv-relu-pool, conv-relu-pool, conv.  Returns features ``(B, D, N)``.

    The last convolution has no activation, so the pooled statistics see
    signed responses.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatch(f"backbone expects (B, H, W, C), got {x.shape}")
    cache = BackboneCache([], [], [], [], [], (0, 0))
    h = x
    for k, name in enumerate(BACKBONE_LAYERS):
        cache.x_shapes.append(h.shape)
        h, cols = conv3x3_forward(h, params[f"{name}.w"], params[f"{name}.b"])
        cache.cols.append(cols)
        if k < 2:
            mask = h > 0
            h = h * mask
            cache.relu_masks.append(mask)
            cache.pool_in_shapes.append(h.shape)
            h, arg = maxpool2_forward(h)
            cache.pool_args.append(arg)
    n, hh, ww, d = h.shape
    cache.out_hw = (hh, ww)
    return np.ascontiguousarray(h.reshape(n, hh * ww, d).transpose(0, 2, 1)), cache


def backbone_backward(params: dict[str, np.ndarray], cache: BackboneCache, d_features: np.ndarray,
                      need_dx: bool = False):
    """Gradients of the backbone parameters (and optionally the input)."""
    n, d, _ = d_features.shape
    hh, ww = cache.out_hw
    g = d_features.transpose(0, 2, 1).reshape(n, hh, ww, d)
    grads = {}
    dx = None
    for k in reversed(range(len(BACKBONE_LAYERS))):
        name = BACKBONE_LAYERS[k]
        if k < 2:
            g = maxpool2_backward(g, cache.pool_args[k], cache.pool_in_shapes[k])
            g = g * cache.relu_masks[k]
        want_dx = k > 0 or need_dx
        dx, grads[f"{name}.w"], grads[f"{name}.b"] = conv3x3_backward(
            g, cache.cols[k], params[f"{name}.w"], cache.x_shapes[k], need_dx=want_dx)
        g = dx
    return grads, dx


def feature_grid(size: int) -> int:
    """Spatial side of the backbone output for a ``size``-pixel input."""
    return (size // 2) // 2


# ---------------------------------------------------------------- head

def sym_vec_dim(order: int) -> int:
    return order * (order + 1) // 2


def sym_vectorize(g: np.ndarray) -> np.ndarray:
    """Upper triangle with off-diagonal entries scaled by sqrt(2).

    The scaling makes the Euclidean inner product of two vectors equal the
    Frobenius inner product of the symmetric matrices.
    """
    c = g.shape[-1]
    iu, ju = np.triu_indices(c)
    scale = np.where(iu == ju, 1.0, np.sqrt(2.0))
    return g[..., iu, ju] * scale


def sym_vectorize_backward(dv: np.ndarray, order: int) -> np.ndarray:
    iu, ju = np.triu_indices(order)
    off = iu != ju
    out = np.zeros(dv.shape[:-1] + (order, order))
    out[..., iu, ju] = np.where(off, dv / np.sqrt(2.0), dv)
    out[..., ju[off], iu[off]] = dv[..., off] / np.sqrt(2.0)
    return out


HEAD_BUFFERS = ("head.mean", "head.scale")


def init_head(order: int, num_classes: int, rng: np.random.Generator,
              bias: bool = True) -> dict[str, np.ndarray]:
    """Linear classifier over the vectorized feature.

    ``head.mean`` / ``head.scale`` standardize the vectorized feature before
    the affine map.  They are frozen buffers (identity until
    ``fit_head_standardizer`` sets them), so the head still computes an affine
    function of the feature; they only precondition the optimization.
    """
    d = sym_vec_dim(order)
    params = {
        "head.w": rng.normal(0.0, 0.01, (num_classes, d)),
        "head.mean": np.zeros(d),
        "head.scale": np.ones(d),
    }
    if bias:
        params["head.b"] = np.zeros(num_classes)
    return params


def fit_head_standardizer(params: dict[str, np.ndarray], vecs: np.ndarray,
                          floor: float = 1e-8) -> None:
    # one shared scale: per-dimension scaling blew up low-variance directions
    # once the backbone started moving in stage 2
    std = vecs.std(axis=0)
    params["head.mean"] = vecs.mean(axis=0)
    params["head.scale"] = np.full_like(std, max(floor, float(np.sqrt(np.mean(std ** 2)))))


def head_forward(params: dict[str, np.ndarray], g: np.ndarray):
    """Logits for normalized SPD features; also returns the standardized vectors."""
    w = params["head.w"]
    v = sym_vectorize(g)
    if v.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"feature of order {g.shape[-1]} does not fit head width {w.shape[1]}")
    z = (v - params["head.mean"]) / params["head.scale"]
    logits = z @ w.T
    if "head.b" in params:
        logits = logits + params["head.b"]
    return logits, z


def head_backward(params: dict[str, np.ndarray], z: np.ndarray, d_logits: np.ndarray, order: int):
    grads = {"head.w": d_logits.T @ z}
    if "head.b" in params:
        grads["head.b"] = d_logits.sum(axis=0)
    dv = (d_logits @ params["head.w"]) / params["head.scale"]
    return grads, sym_vectorize_backward(dv, order)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(g: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Class probabilities for one normalized SPD feature or a stack of them."""
    return softmax(head_forward(params, g)[0])


def cross_entropy(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean ``-log p[label]`` and its gradient with respect to the logits."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(np.asarray(labels))
    k = probs.shape[-1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range for {k} classes")
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    return loss, d_logits / n


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    lr: float
    momentum: float = MOMENTUM
    weight_decay: float = WEIGHT_DECAY
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      state: OptimizerState, names=None) -> None:
    """In place: ``v <- m v + (g + wd w)``, ``w <- w - lr v``.

    Only ``names`` (default: every key of ``grads``) are touched, in sorted
    order.
    """
    for name in sorted(grads if names is None else names):
        w = params[name]
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = state.momentum * v + (grads[name] + state.weight_decay * w)
        state.velocity[name] = v
        params[name] = w - state.lr * v


def clip_grad_norm(grads: dict[str, np.ndarray], names, max_norm: float) -> dict[str, np.ndarray]:
    """Rescale ``names`` jointly so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(np.sum(grads[k] ** 2) for k in names)))
    if max_norm <= 0 or total <= max_norm:
        return grads
    return {k: v * (max_norm / total) for k, v in grads.items()}


def step_decay_lr(base_lr: float, epoch: int, every: int, factor: float) -> float:
    """Learning rate after ``epoch`` completed epochs of a step-decay schedule."""
    if every <= 0:
        return base_lr
    return base_lr * factor ** (epoch // every)
