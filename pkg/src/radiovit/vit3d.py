"""3D Vision Transformer in numpy with explicit reverse-mode gradients.

Every layer is a pair of functions: ``*_forward`` returns the output and a
cache, ``*_backward`` consumes the upstream gradient and that cache. Arrays
carry arbitrary leading batch axes; the last axis is the feature axis.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IndivisibleDims, NoRecordedForward, ShapeMismatch
from .volume import Volume

Params = dict[str, np.ndarray]

GELU_COEF = math.sqrt(2.0 / math.pi)
LN_EPS = 1e-5


@dataclass(frozen=True)
class Vit3dConfig:
    image_size: tuple[int, int, int] = (256, 256, 64)
    patch_size: int = 32
    embed_dim: int = 128
    num_blocks: int = 2
    num_heads: int = 16
    dropout_rate: float = 0.1
    mlp_hidden_dim: int = 0  # 0 means 4 * embed_dim
    pool: str = "cls"

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        if self.mlp_hidden_dim <= 0:
            object.__setattr__(self, "mlp_hidden_dim", 4 * self.embed_dim)
        p = self.patch_size
        if p <= 0 or any(s <= 0 or s % p for s in self.image_size):
            raise IndivisibleDims(f"image size {self.image_size} is not divisible by patch size {p}")
        if self.embed_dim % self.num_heads:
            raise ShapeMismatch(f"embed_dim {self.embed_dim} is not divisible by {self.num_heads} heads")
        if self.embed_dim < 2:
            raise ShapeMismatch("embed_dim must exceed 1 for layer norm")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.pool not in ("cls", "mean"):
            raise ValueError(f"pool must be 'cls' or 'mean', got {self.pool!r}")

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(s // self.patch_size for s in self.image_size)

    @property
    def num_patches(self) -> int:
        return math.prod(self.grid)

    @property
    def patch_dim(self) -> int:
        return self.patch_size**3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Vit3dConfig":
        return cls(**{**d, "image_size": tuple(d["image_size"])})


# ---------------------------------------------------------------------------
# patches


def _as_batch(x) -> tuple[np.ndarray, bool]:
    if isinstance(x, Volume):
        x = x.voxels
    elif isinstance(x, (list, tuple)):
        return np.stack([v.voxels if isinstance(v, Volume) else v for v in x]), True
    x = np.asarray(x)
    return (x[None], False) if x.ndim == 3 else (x, True)


def patchify(v, p: int) -> np.ndarray:
    """Cut (H, W, D) voxels into non-overlapping p-cubes.

    Patches are enumerated slab by slab along depth, then row-major over the
    in-plane grid; each cube is flattened depth-major, then row-major. A
    leading batch axis is carried through.
    """
    x, batched = _as_batch(v)
    b, h, w, d = x.shape
    if p <= 0 or h % p or w % p or d % p:
        raise IndivisibleDims(f"volume {(h, w, d)} is not divisible by patch size {p}")
    nh, nw, nd = h // p, w // p, d // p
    cubes = x.reshape(b, nh, p, nw, p, nd, p).transpose(0, 5, 1, 3, 6, 2, 4)
    out = cubes.reshape(b, nd * nh * nw, p**3)
    return out if batched else out[0]


def unpatchify(patches: np.ndarray, p: int, shape: tuple[int, int, int]) -> np.ndarray:
    x = np.asarray(patches)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    h, w, d = shape
    nh, nw, nd = h // p, w // p, d // p
    if x.shape[1:] != (nh * nw * nd, p**3) or h % p or w % p or d % p:
        raise ShapeMismatch(f"patches {x.shape[1:]} do not tile {shape} with p={p}")
    cubes = x.reshape(x.shape[0], nd, nh, nw, p, p, p).transpose(0, 2, 5, 3, 6, 1, 4)
    out = cubes.reshape(x.shape[0], h, w, d)
    return out if batched else out[0]


# ---------------------------------------------------------------------------
# layers


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def layer_norm_forward(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def layer_norm_backward(dy, cache):
    xhat, rstd, gamma = cache
    dxhat = dy * gamma
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    flat = dy.reshape(-1, dy.shape[-1])
    dgamma = (flat * xhat.reshape(flat.shape)).sum(axis=0)
    dbeta = flat.sum(axis=0)
    return dx, dgamma, dbeta


def gelu(x):
    """Tanh approximation of GELU."""
    return 0.5 * x * (1.0 + np.tanh(GELU_COEF * (x + 0.044715 * x**3)))


def gelu_grad(x):
    t = np.tanh(GELU_COEF * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_COEF * (1.0 + 3 * 0.044715 * x * x)


def mlp_forward(x, w1, b1, w2, b2):
    pre = x @ w1 + b1
    act = gelu(pre)
    return act @ w2 + b2, (x, pre, act)


def mlp_backward(dy, cache, w1, w2):
    x, pre, act = cache
    dact, dw2, db2 = linear_backward(dy, act, w2)
    dpre = dact * gelu_grad(pre)
    dx, dw1, db1 = linear_backward(dpre, x, w1)
    return dx, dw1, db1, dw2, db2


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x, h):
    *lead, t, d = x.shape
    return x.reshape(*lead, t, h, d // h).swapaxes(-2, -3)


def _merge_heads(x):
    *lead, h, t, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, t, h * dh)


def attention_forward(x, p: Params, heads: int):
    """Multi-head self-attention over the token axis.

    ``p`` holds ``wq, bq, wk, bk, wv, bv, wo, bo``; the cache keeps the
    attention weights under ``"weights"`` for inspection.
    """
    d = x.shape[-1]
    if d % heads or p["wq"].shape != (d, d):
        raise ShapeMismatch(f"attention over width {d} with {heads} heads and wq {p['wq'].shape}")
    scale = np.asarray(1.0 / math.sqrt(d // heads), dtype=x.dtype)
    q = _split_heads(x @ p["wq"] + p["bq"], heads)
    k = _split_heads(x @ p["wk"] + p["bk"], heads)
    v = _split_heads(x @ p["wv"] + p["bv"], heads)
    weights = softmax((q @ k.swapaxes(-1, -2)) * scale)
    ctx = _merge_heads(weights @ v)
    out = ctx @ p["wo"] + p["bo"]
    return out, {"x": x, "q": q, "k": k, "v": v, "weights": weights, "ctx": ctx, "scale": scale, "heads": heads}


def attention_backward(dy, cache, p: Params):
    x, q, k, v, a = cache["x"], cache["q"], cache["k"], cache["v"], cache["weights"]
    heads, scale = cache["heads"], cache["scale"]
    grads = {}
    dctx, grads["wo"], grads["bo"] = linear_backward(dy, cache["ctx"], p["wo"])
    dctx = _split_heads(dctx, heads)
    da = dctx @ v.swapaxes(-1, -2)
    dv = a.swapaxes(-1, -2) @ dctx
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.swapaxes(-1, -2) @ q
    dx = np.zeros_like(x)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dxi, grads["w" + name], grads["b" + name] = linear_backward(_merge_heads(dproj), x, p["w" + name])
        dx += dxi
    return dx, grads


def dropout_forward(x, rate: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout; returns the output and the scaled keep mask (None when inactive)."""
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs a generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


BLOCK_KEYS = ("ln1.gamma", "ln1.beta", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
              "ln2.gamma", "ln2.beta", "w1", "b1", "w2", "b2")


def encoder_block_forward(x, p: Params, heads: int, rate: float, train: bool, rng=None):
    """Pre-norm residual block: attention sublayer then MLP sublayer."""
    h1, ln1 = layer_norm_forward(x, p["ln1.gamma"], p["ln1.beta"])
    a, attn = attention_forward(h1, p, heads)
    a, mask1 = dropout_forward(a, rate, train, rng)
    x1 = x + a
    h2, ln2 = layer_norm_forward(x1, p["ln2.gamma"], p["ln2.beta"])
    m, mlp = mlp_forward(h2, p["w1"], p["b1"], p["w2"], p["b2"])
    m, mask2 = dropout_forward(m, rate, train, rng)
    return x1 + m, (ln1, attn, mask1, ln2, mlp, mask2)


def encoder_block_backward(dy, cache, p: Params):
    ln1, attn, mask1, ln2, mlp, mask2 = cache
    g = {}
    dm = dropout_backward(dy, mask2)
    dh2, g["w1"], g["b1"], g["w2"], g["b2"] = mlp_backward(dm, mlp, p["w1"], p["w2"])
    dx1, g["ln2.gamma"], g["ln2.beta"] = layer_norm_backward(dh2, ln2)
    dx1 = dx1 + dy
    da = dropout_backward(dx1, mask1)
    dh1, attn_grads = attention_backward(da, attn, p)
    g.update(attn_grads)
    dx, g["ln1.gamma"], g["ln1.beta"] = layer_norm_backward(dh1, ln1)
    return dx + dx1, g


# ---------------------------------------------------------------------------
# parameters


def param_shapes(config: Vit3dConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; also the checkpoint manifest order."""
    d, hidden = config.embed_dim, config.mlp_hidden_dim
    shapes = [
        ("patch_embed.w", (config.patch_dim, d)),
        ("patch_embed.b", (d,)),
        ("class_token", (1, d)),
        ("pos_embed", (config.num_patches + 1, d)),
    ]
    block = {
        "ln1.gamma": (d,), "ln1.beta": (d,),
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
        "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
        "ln2.gamma": (d,), "ln2.beta": (d,),
        "w1": (d, hidden), "b1": (hidden,), "w2": (hidden, d), "b2": (d,),
    }
    for i in range(config.num_blocks):
        shapes += [(f"blocks.{i}.{key}", block[key]) for key in BLOCK_KEYS]
    shapes += [("norm.gamma", (d,)), ("norm.beta", (d,)), ("head.w", (d, 1)), ("head.b", (1,))]
    return shapes


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draws with anything beyond two standard deviations redrawn."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config: Vit3dConfig, rng: np.random.Generator | int = 0, dtype=np.float32) -> Params:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    params = {}
    for name, shape in param_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if name == "class_token" or (leaf.startswith("w") and name != "pos_embed"):
            value = truncated_normal(rng, shape)
        elif leaf == "gamma":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = value.astype(dtype)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def block_params(params: Params, i: int) -> Params:
    prefix = f"blocks.{i}."
    return {key: params[prefix + key] for key in BLOCK_KEYS}


def check_params(params: Params, config: Vit3dConfig) -> None:
    for name, shape in param_shapes(config):
        if name not in params:
            raise ShapeMismatch(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeMismatch(f"{name} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# whole network


def encode(tokens, params: Params, config: Vit3dConfig, train: bool = False, rng=None):
    """Run the encoder stack over a token sequence; returns output and caches."""
    caches = []
    x = tokens
    for i in range(config.num_blocks):
        x, cache = encoder_block_forward(x, block_params(params, i), config.num_heads, config.dropout_rate, train, rng)
        caches.append(cache)
    return x, caches


def embed_patches(patches, params: Params) -> np.ndarray:
    """Project flattened patches, prepend the class token, add positions.

    ``patches`` is (N, p^3) or (B, N, p^3); the result has N + 1 rows.
    """
    x = np.asarray(patches)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    w = params["patch_embed.w"]
    if x.shape[-1] != w.shape[0] or params["pos_embed"].shape[0] != x.shape[1] + 1:
        raise ShapeMismatch(f"patches {x.shape[1:]} do not fit embedding {w.shape} / positions {params['pos_embed'].shape}")
    tokens = x @ w + params["patch_embed.b"]
    cls = np.broadcast_to(params["class_token"], (x.shape[0], 1, w.shape[1]))
    z = np.concatenate([cls, tokens], axis=1) + params["pos_embed"]
    return z if batched else z[0]


def vit_forward(params: Params, config: Vit3dConfig, volumes, train: bool = False, rng=None):
    """Logits for a batch of volumes plus the cache needed by :func:`vit_backward`."""
    x, _ = _as_batch(volumes)
    if x.shape[1:] != config.image_size:
        raise ShapeMismatch(f"volume shape {x.shape[1:]} does not match configured {config.image_size}")
    dtype = params["patch_embed.w"].dtype
    patches = patchify(x.astype(dtype, copy=False), config.patch_size)
    z = embed_patches(patches, params)
    z, emb_mask = dropout_forward(z, config.dropout_rate, train, rng)

    z, block_caches = encode(z, params, config, train, rng)
    normed, ln = layer_norm_forward(z, params["norm.gamma"], params["norm.beta"])
    pooled = normed[:, 0, :] if config.pool == "cls" else normed[:, 1:, :].mean(axis=1)
    logits = (pooled @ params["head.w"] + params["head.b"])[:, 0]
    cache = {"patches": patches, "emb_mask": emb_mask, "blocks": block_caches, "ln": ln, "pooled": pooled, "tokens_shape": z.shape}
    return logits, cache


def vit_backward(params: Params, config: Vit3dConfig, cache, dlogits) -> Params:
    """Gradients of every named parameter given dLoss/dlogit per batch item."""
    dlogits = np.asarray(dlogits, dtype=params["head.w"].dtype).reshape(-1, 1)
    grads = {}
    grads["head.w"] = cache["pooled"].T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.w"].T

    b, t, d = cache["tokens_shape"]
    dnormed = np.zeros((b, t, d), dtype=dpooled.dtype)
    if config.pool == "cls":
        dnormed[:, 0, :] = dpooled
    else:
        dnormed[:, 1:, :] = dpooled[:, None, :] / (t - 1)
    dz, grads["norm.gamma"], grads["norm.beta"] = layer_norm_backward(dnormed, cache["ln"])

    for i in reversed(range(config.num_blocks)):
        dz, g = encoder_block_backward(dz, cache["blocks"][i], block_params(params, i))
        for key, value in g.items():
            grads[f"blocks.{i}.{key}"] = value

    dz = dropout_backward(dz, cache["emb_mask"])
    grads["pos_embed"] = dz.sum(axis=0)
    grads["class_token"] = dz[:, :1, :].sum(axis=0)
    _, grads["patch_embed.w"], grads["patch_embed.b"] = linear_backward(dz[:, 1:, :], cache["patches"], params["patch_embed.w"])
    return {name: grads[name].reshape(shape).astype(params[name].dtype, copy=False) for name, shape in param_shapes(config)}


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Vit3d:
    """Stateful wrapper: holds parameters and the cache of the last train-mode pass."""

    config: Vit3dConfig
    params: Params = field(default=None)
    _cache: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.config)
        check_params(self.params, self.config)

    @classmethod
    def initialize(cls, config: Vit3dConfig, seed: int = 0, dtype=np.float32) -> "Vit3d":
        return cls(config, init_params(config, np.random.default_rng(seed), dtype))

    def forward(self, volumes, train: bool = False, rng=None) -> np.ndarray:
        """Probabilities for a batch (or a single volume, giving a 1-element array)."""
        logits, cache = vit_forward(self.params, self.config, volumes, train, rng)
        self._cache = cache if train else None
        return sigmoid(logits)

    def logits(self, volumes, train: bool = False, rng=None) -> np.ndarray:
        logits, cache = vit_forward(self.params, self.config, volumes, train, rng)
        self._cache = cache if train else None
        return logits

    def backward(self, dlogits) -> Params:
        if self._cache is None:
            raise NoRecordedForward("backward needs a preceding train-mode forward pass")
        return vit_backward(self.params, self.config, self._cache, dlogits)

    def predict_proba(self, volumes) -> np.ndarray:
        return self.forward(volumes, train=False)
