"""Positional encoding, small MLPs with hand-written backprop, and Adam.

Two MLP families drive the reconstruction: an elevation-residual net
(22 -> 128 x 6 -> 1, ReLU, linear head) evaluated on encoded vertex
coordinates, and per-camera color decoders (32 -> 16 -> 3, ReLU then
sigmoid) evaluated on the per-vertex color codes. Gradients are exact
reverse-mode; no autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POSENC_FREQUENCIES = 5
POSENC_DIM = 2 + 2 * 2 * POSENC_FREQUENCIES  # identity + sin/cos per axis

ELEVATION_LAYERS = (22, 128, 128, 128, 128, 128, 128, 128, 1)
COLOR_LAYERS = (32, 16, 3)
EMBEDDING_DIM = 8
EMBEDDING_INIT = 0.1

LR_ELEVATION_MLP = 0.01
LR_COLOR_MLPS = 0.005
LR_SEM_LOGITS = 0.1
LR_COLOR_CODES = 0.005

CHECKPOINT_MAGIC = "EMIE1"


@dataclass
class PositionalEncoding:
    """Sinusoidal lift of (x, y) to 22 features on bbox-normalized coords.

    Output layout: [px, py] then, for k = 0..4, [sin(2^k pi p), cos(2^k pi p)]
    with each block holding the x entry before the y entry.
    """

    bbox: tuple  # (xmin, ymin, xmax, ymax)
    num_frequencies: int = POSENC_FREQUENCIES
    include_input: bool = True

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bbox
        if xmax - xmin <= 0 or ymax - ymin <= 0:
            raise ValueError("positional encoding bbox must have positive extent on both axes")

    @property
    def output_dim(self):
        return 2 + 2 * 2 * self.num_frequencies

    def encode(self, xy):
        """Encode (N, 2) coordinates; inputs are clamped to the bbox."""
        xy = np.asarray(xy)
        dtype = xy.dtype if xy.dtype in (np.float32, np.float64) else np.float64
        xmin, ymin, xmax, ymax = self.bbox
        lo = np.array([xmin, ymin], dtype=dtype)
        hi = np.array([xmax, ymax], dtype=dtype)
        p = np.clip(xy.astype(dtype), lo, hi)
        p = 2.0 * (p - lo) / (hi - lo) - 1.0
        out = np.empty(p.shape[:-1] + (self.output_dim,), dtype=dtype)
        col = 0
        if self.include_input:
            out[..., 0:2] = p
            col = 2
        for k in range(self.num_frequencies):
            ang = (2.0**k * np.pi) * p
            out[..., col : col + 2] = np.sin(ang)
            out[..., col + 2 : col + 4] = np.cos(ang)
            col += 4
        return out


def positional_encode(x, y, pe):
    """Single-point encoding, returns a vector of pe.output_dim entries."""
    return pe.encode(np.array([[x, y]], dtype=np.float64))[0]


class Mlp:
    """Fully connected net: affine + ReLU per hidden layer, optional sigmoid head.

    Weights are stored (fan_in, fan_out) so a batch forward is x @ W + b.
    """

    def __init__(self, weights, biases, output_activation="none"):
        if output_activation not in ("none", "sigmoid"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.weights = list(weights)
        self.biases = list(biases)
        self.output_activation = output_activation
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match layer width")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def astype(self, dtype):
        return Mlp(
            [W.astype(dtype) for W in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.output_activation,
        )

    def parameters(self):
        """Flat list alternating W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def forward(self, x):
        y, _ = self.forward_cached(x, keep_cache=False)
        return y

    def forward_cached(self, x, keep_cache=True):
        x = np.asarray(x)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.in_dim:
            raise ValueError(f"input width {h.shape[-1]} != first layer {self.in_dim}")
        acts = [h] if keep_cache else None
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < n_layers - 1:
                h = np.maximum(h, 0)
            elif self.output_activation == "sigmoid":
                h = _sigmoid(h)
            if keep_cache:
                acts.append(h)
        return (h[0], acts) if squeeze else (h, acts)

    def backward(self, cache, grad_out):
        """Exact gradients from cached activations.

        Returns ([(dW, db), ...], grad_input); grad_out must match the
        forward output shape.
        """
        acts = cache
        g = np.asarray(grad_out)
        squeeze = g.ndim == 1
        if squeeze:
            g = g[None, :]
        if g.shape[-1] != self.out_dim:
            raise ValueError("upstream gradient width does not match output layer")
        if self.output_activation == "sigmoid":
            s = acts[-1]
            g = g * s * (1.0 - s)
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            x_in = acts[i]
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0)
            dW = x_in.T @ g
            db = g.sum(axis=0)
            grads[i] = (dW, db)
            g = g @ self.weights[i].T
        grad_in = g[0] if squeeze else g
        return grads, grad_in


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def mlp_forward(params, x):
    """Functional forward pass (spec operation surface)."""
    return params.forward(x)


def mlp_backward(params, x, upstream_gradient):
    """Exact reverse-mode gradients of the forward map at input x."""
    _, cache = params.forward_cached(x)
    return params.backward(cache, upstream_gradient)


def _he_uniform(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def _xavier_uniform(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def make_mlp(layer_sizes, rng, output_activation="none", zero_last=False, dtype=np.float64):
    """He-uniform hidden layers; Xavier (or zeros) on the output layer."""
    weights, biases = [], []
    n = len(layer_sizes) - 1
    for i in range(n):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        if i < n - 1:
            W = _he_uniform(rng, fan_in, fan_out, dtype)
        elif zero_last:
            W = np.zeros((fan_in, fan_out), dtype=dtype)
        else:
            W = _xavier_uniform(rng, fan_in, fan_out, dtype)
        weights.append(W)
        biases.append(np.zeros(fan_out, dtype=dtype))
    return Mlp(weights, biases, output_activation)


def make_elevation_mlp(rng, dtype=np.float64):
    """Residual net over encoded coordinates; zero output layer so the
    predicted residual starts at exactly zero."""
    return make_mlp(ELEVATION_LAYERS, rng, "none", zero_last=True, dtype=dtype)


def make_color_mlp(rng, dtype=np.float64):
    return make_mlp(COLOR_LAYERS, rng, "sigmoid", dtype=dtype)


def make_shared_color_mlp(rng, dtype=np.float64):
    """Single decoder over code concatenated with a per-camera embedding."""
    layers = (COLOR_LAYERS[0] + EMBEDDING_DIM,) + COLOR_LAYERS[1:]
    return make_mlp(layers, rng, "sigmoid", dtype=dtype)


def softmax_cross_entropy(logits, target_class):
    """Cross-entropy of softmax(logits) against a class index.

    Returns (loss, gradient) with gradient = softmax(logits) - one_hot.
    """
    logits = np.asarray(logits)
    n = logits.shape[-1]
    target_class = int(target_class)
    if not 0 <= target_class < n:
        raise ValueError(f"target class {target_class} outside 0..{n - 1}")
    p = _softmax(logits)
    loss = -np.log(p[target_class])
    grad = p.copy()
    grad[target_class] -= 1.0
    return float(loss), grad


def softmax_cross_entropy_batch(logits, targets):
    """Row-wise cross-entropy: logits (N, C), targets (N,) class indices."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError("target class outside logit range")
    p = _softmax(logits)
    rows = np.arange(logits.shape[0])
    losses = -np.log(np.maximum(p[rows, targets], np.finfo(p.dtype).tiny))
    grad = p
    grad[rows, targets] -= 1.0
    return losses, grad


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AdamState:
    """Per-tensor first/second moments and shared step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param):
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_step(param, grad, state, lr):
    """Bias-corrected Adam update, in place on `param`."""
    if grad.shape != param.shape:
        raise ValueError("gradient shape does not match parameter")
    state.step += 1
    t = state.step
    state.m += (1.0 - state.beta1) * (grad - state.m)
    state.v += (1.0 - state.beta2) * (grad * grad - state.v)
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


@dataclass
class ParamGroup:
    """Named set of tensors updated at one learning rate."""

    name: str
    lr: float
    params: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def register(self, param):
        self.params.append(param)
        self.states.append(AdamState.for_param(param))
        return param

    def apply(self, grads):
        for p, g, s in zip(self.params, grads, self.states):
            adam_step(p, g, s, self.lr)


def predict_elevations(mesh, pe, mlp_hr):
    """Final elevations: z0 plus the residual net over encoded coordinates."""
    feats = pe.encode(mesh.xy)
    residual = mlp_hr.forward(feats)[:, 0]
    return mesh.z0 + residual


def decode_colors(color_codes, camera_id, color_mlps):
    """Per-vertex RGB in (0,1) from this camera's decoder."""
    if camera_id not in color_mlps:
        raise KeyError(f"no color decoder registered for camera {camera_id}")
    return color_mlps[camera_id].forward(color_codes)


def decode_colors_with_embedding(color_codes, camera_embedding, shared_mlp):
    """Shared-decoder variant: camera identity enters via the embedding."""
    codes = np.asarray(color_codes)
    emb = np.broadcast_to(
        np.asarray(camera_embedding, dtype=codes.dtype), (codes.shape[0], len(camera_embedding))
    )
    return shared_mlp.forward(np.concatenate([codes, emb], axis=1))


def save_checkpoint(path, tensors, meta=None):
    """Write tensors as one little-endian float64 blob plus a text header.

    The sidecar header (path + '.hdr') starts with the magic, then
    `meta key value` lines, then `tensor name shape offset` lines where
    shape is comma-separated and offset counts 8-byte elements.
    """
    path = str(path)
    offsets = {}
    off = 0
    with open(path, "wb") as f:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            offsets[name] = (arr.shape, off)
            f.write(arr.tobytes())
            off += arr.size
    lines = [CHECKPOINT_MAGIC]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    for name, (shape, offset) in offsets.items():
        shape_s = ",".join(str(s) for s in shape) if shape else "1"
        lines.append(f"tensor {name} {shape_s} {offset}")
    with open(path + ".hdr", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint -> (tensors, meta)."""
    path = str(path)
    with open(path + ".hdr", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}.hdr")
    meta = {}
    table = []
    for ln in lines[1:]:
        kind, rest = ln.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "tensor":
            name, shape_s, off_s = rest.rsplit(" ", 2)
            shape = tuple(int(s) for s in shape_s.split(","))
            table.append((name, shape, int(off_s)))
        else:
            raise ValueError(f"unknown header line kind {kind!r}")
    blob = np.fromfile(path, dtype="<f8")
    tensors = {}
    for name, shape, off in table:
        size = int(np.prod(shape))
        tensors[name] = blob[off : off + size].reshape(shape).copy()
    return tensors, meta
