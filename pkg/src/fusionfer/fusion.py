"""Fusion attention network: key generator, dot-product + local attention, classifier.

Everything works on batches of row vectors, shape ``(N, d)``. Parameters live in
an ordered ``dict[str, np.ndarray]`` so the optimizer, the gradient checker and the
checkpoint writer can all walk them by name. Dense weights are stored ``(out, in)``.

Forward for one batch, with ``Xm`` the main-view and ``Xa`` the auxiliary-view
features::

    F = keygen(Xm, Xa)                       # fused key features, (N, d)
    Q, K, V = Xm Wq' + bq, F Wk' + bk, F Wv' + bv
    A = attention(Q, K, V)                   # per sample, n_heads tokens of width d_k
    L = conv3(A Wo' + bo, kernel)            # local attention, zero padded
    B = L + Xm                               # skip connection
    logits = relu(B W1' + b1) W2' + b2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fusionfer.features import N_CLASSES, PairedDataset, ShapeMismatch, make_rng

STRATEGIES = ("Mean", "Concat", "UpDownMean", "UpDownConcat")
KEYGEN_LAYERS = {"Mean": 1, "Concat": 1, "UpDownMean": 2, "UpDownConcat": 3}
LOG_FLOOR = -700.0


class EmptyDataset(ValueError):
    pass


def keygen_widths(strategy: str, d: int) -> list[tuple[int, int]]:
    """``(in, out)`` widths of each key-generator dense layer."""
    if strategy == "Mean":
        return [(d, d)]
    if strategy == "Concat":
        return [(2 * d, d)]
    if strategy == "UpDownMean":
        return [(d, 2 * d), (2 * d, d)]
    if strategy == "UpDownConcat":
        return [(2 * d, 2 * d), (2 * d, 2 * d), (2 * d, d)]
    raise ValueError(f"unknown key-generator strategy {strategy!r}; expected one of {STRATEGIES}")


@dataclass(frozen=True)
class FusionConfig:
    d_model: int
    n_heads: int = 2
    strategy: str = "Concat"
    hidden: int = 0  # classifier hidden width; 0 means d_model
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown key-generator strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.hidden == 0:
            object.__setattr__(self, "hidden", self.d_model)

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def keygen_layers(self) -> int:
        return KEYGEN_LAYERS[self.strategy]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d = self.d_model
        shapes = {}
        for i, (fan_in, fan_out) in enumerate(keygen_widths(self.strategy, d)):
            shapes[f"keygen.{i}.weight"] = (fan_out, fan_in)
            shapes[f"keygen.{i}.bias"] = (fan_out,)
        for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
            shapes[f"{name}.weight"] = (d, d)
            shapes[f"{name}.bias"] = (d,)
        shapes["local.kernel"] = (3,)
        shapes["classifier.0.weight"] = (self.hidden, d)
        shapes["classifier.0.bias"] = (self.hidden,)
        shapes["classifier.1.weight"] = (self.n_classes, self.hidden)
        shapes["classifier.1.bias"] = (self.n_classes,)
        return shapes


class FusionModel:
    def __init__(self, config: FusionConfig, params: dict[str, np.ndarray]):
        shapes = config.param_shapes()
        n_keygen = sum(1 for k in params if k.startswith("keygen.") and k.endswith(".weight"))
        if n_keygen != config.keygen_layers:
            raise ValueError(
                f"{config.strategy} key generator needs {config.keygen_layers} dense layer(s), got {n_keygen}"
            )
        if set(params) != set(shapes):
            raise ValueError(f"parameter names differ from config: {sorted(set(params) ^ set(shapes))}")
        self.config = config
        self.params = {}
        for name, shape in shapes.items():
            p = np.array(params[name], dtype=np.float64)
            if p.shape != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {p.shape}")
            self.params[name] = p

    @classmethod
    def init(cls, config: FusionConfig, seed: int = 0, rng: np.random.Generator | None = None) -> "FusionModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight, bias and the kernel."""
        rng = rng if rng is not None else make_rng(seed)
        params = {}
        for name, shape in config.param_shapes().items():
            if name == "local.kernel":
                fan_in = 3
            else:
                layer = name.rsplit(".", 1)[0]
                fan_in = config.param_shapes()[f"{layer}.weight"][1]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
        return cls(config, params)

    @property
    def keygen_layers(self) -> int:
        return self.config.keygen_layers

    def copy(self) -> "FusionModel":
        return FusionModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def predict(self, f_main, f_aux) -> np.ndarray:
        logits, _ = fusion_forward(f_main, f_aux, self)
        return logits.argmax(axis=-1)


# ---------------------------------------------------------------------------
# building blocks


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def scaled_dot_attention(Q, K, V, d_k: int | None = None, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes; leading axes are batch axes."""
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"incompatible attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    d_k = Q.shape[-1] if d_k is None else d_k
    weights = softmax(Q @ np.swapaxes(K, -1, -2) / math.sqrt(d_k))
    out = weights @ V
    return (out, weights) if return_weights else out


def dense(x, weight, bias) -> np.ndarray:
    return x @ weight.T + bias


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def _keygen_input(f_main, f_aux, strategy):
    if strategy in ("Mean", "UpDownMean"):
        return 0.5 * (f_main + f_aux)
    return np.concatenate([f_main, f_aux], axis=-1)


def key_generate(f_main, f_aux, model_or_strategy, layers=None) -> np.ndarray:
    """Fuse the two views into key features of width d.

    Pass a :class:`FusionModel`, or a strategy name with an explicit list of
    ``(weight, bias)`` layers. ReLU sits between layers, never after the last.
    """
    if isinstance(model_or_strategy, FusionModel):
        strategy = model_or_strategy.config.strategy
        p = model_or_strategy.params
        layers = [(p[f"keygen.{i}.weight"], p[f"keygen.{i}.bias"]) for i in range(KEYGEN_LAYERS[strategy])]
    else:
        strategy = model_or_strategy
        if len(layers) != KEYGEN_LAYERS[strategy]:
            raise ValueError(f"{strategy} needs {KEYGEN_LAYERS[strategy]} layer(s), got {len(layers)}")
    f_main = np.asarray(f_main, dtype=np.float64)
    f_aux = np.asarray(f_aux, dtype=np.float64)
    if f_main.shape != f_aux.shape:
        raise ShapeMismatch(f"view shapes differ: {f_main.shape} vs {f_aux.shape}")
    h = _keygen_input(f_main, f_aux, strategy)
    for i, (w, b) in enumerate(layers):
        if h.shape[-1] != w.shape[1]:
            raise ShapeMismatch(f"key-generator layer {i} expects width {w.shape[1]}, got {h.shape[-1]}")
        h = dense(h, w, b)
        if i < len(layers) - 1:
            h = relu(h)
    return h


def local_attention(x, kernel) -> np.ndarray:
    """Width-3 zero-padded correlation along the last axis: y[i] = k0 x[i-1] + k1 x[i] + k2 x[i+1]."""
    x = np.asarray(x, dtype=np.float64)
    k0, k1, k2 = np.asarray(kernel, dtype=np.float64)
    y = k1 * x
    y[..., 1:] += k0 * x[..., :-1]
    y[..., :-1] += k2 * x[..., 1:]
    return y


# ---------------------------------------------------------------------------
# forward / loss / backward


@dataclass
class ForwardCache:
    x_main: np.ndarray
    keygen_in: list = field(default_factory=list)  # input to each keygen layer
    keygen_pre: list = field(default_factory=list)  # pre-activation of each keygen layer
    fused: np.ndarray = None
    q: np.ndarray = None
    k: np.ndarray = None
    v: np.ndarray = None
    weights: np.ndarray = None
    attn: np.ndarray = None
    proj: np.ndarray = None
    block: np.ndarray = None
    hidden_pre: np.ndarray = None
    hidden: np.ndarray = None
    logits: np.ndarray = None
    model: FusionModel = None


def fusion_forward(f_main, f_aux, model: FusionModel):
    """Return ``(logits, cache)``; 1-D inputs are treated as a batch of one."""
    cfg, p = model.config, model.params
    xm = np.atleast_2d(np.asarray(f_main, dtype=np.float64))
    xa = np.atleast_2d(np.asarray(f_aux, dtype=np.float64))
    if xm.shape != xa.shape or xm.shape[1] != cfg.d_model:
        raise ShapeMismatch(f"expected two (N, {cfg.d_model}) inputs, got {xm.shape} and {xa.shape}")
    n, d, heads, dk = xm.shape[0], cfg.d_model, cfg.n_heads, cfg.d_k
    c = ForwardCache(x_main=xm, model=model)

    h = _keygen_input(xm, xa, cfg.strategy)
    n_layers = cfg.keygen_layers
    for i in range(n_layers):
        c.keygen_in.append(h)
        z = dense(h, p[f"keygen.{i}.weight"], p[f"keygen.{i}.bias"])
        c.keygen_pre.append(z)
        h = relu(z) if i < n_layers - 1 else z
    c.fused = h

    c.q = dense(xm, p["q_proj.weight"], p["q_proj.bias"])
    c.k = dense(h, p["k_proj.weight"], p["k_proj.bias"])
    c.v = dense(h, p["v_proj.weight"], p["v_proj.bias"])
    qh, kh, vh = (a.reshape(n, heads, dk) for a in (c.q, c.k, c.v))
    out, c.weights = scaled_dot_attention(qh, kh, vh, dk, return_weights=True)
    c.attn = out.reshape(n, d)
    c.proj = dense(c.attn, p["out_proj.weight"], p["out_proj.bias"])
    c.block = local_attention(c.proj, p["local.kernel"]) + xm
    c.hidden_pre = dense(c.block, p["classifier.0.weight"], p["classifier.0.bias"])
    c.hidden = relu(c.hidden_pre)
    c.logits = dense(c.hidden, p["classifier.1.weight"], p["classifier.1.bias"])
    return c.logits, c


def cross_entropy(logits, labels) -> float:
    """Summed (not averaged) categorical cross-entropy over the batch."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"{logits.shape[0]} logit rows for {labels.shape[0]} labels")
    logp = np.maximum(log_softmax(logits), LOG_FLOOR)
    return float(-logp[np.arange(labels.size), labels].sum())


def _local_attention_backward(grad_out, x, kernel):
    k0, k1, k2 = kernel
    gk = np.array(
        [
            np.sum(grad_out[:, 1:] * x[:, :-1]),
            np.sum(grad_out * x),
            np.sum(grad_out[:, :-1] * x[:, 1:]),
        ]
    )
    gx = k1 * grad_out
    gx[:, :-1] += k0 * grad_out[:, 1:]
    gx[:, 1:] += k2 * grad_out[:, :-1]
    return gx, gk


def fusion_backward(cache: ForwardCache, labels) -> dict[str, np.ndarray]:
    """Gradients of :func:`cross_entropy` w.r.t. every parameter, keyed like ``model.params``."""
    model = cache.model
    cfg, p = model.config, model.params
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n, d, heads, dk = cache.x_main.shape[0], cfg.d_model, cfg.n_heads, cfg.d_k
    g = {}

    dz = softmax(cache.logits)
    dz[np.arange(n), labels] -= 1.0

    g["classifier.1.weight"] = dz.T @ cache.hidden
    g["classifier.1.bias"] = dz.sum(axis=0)
    dh = (dz @ p["classifier.1.weight"]) * (cache.hidden_pre > 0)
    g["classifier.0.weight"] = dh.T @ cache.block
    g["classifier.0.bias"] = dh.sum(axis=0)
    dblock = dh @ p["classifier.0.weight"]

    # the skip branch feeds x_main, which has no parameters
    dproj, g["local.kernel"] = _local_attention_backward(dblock, cache.proj, p["local.kernel"])
    g["out_proj.weight"] = dproj.T @ cache.attn
    g["out_proj.bias"] = dproj.sum(axis=0)
    dattn = (dproj @ p["out_proj.weight"]).reshape(n, heads, dk)

    w = cache.weights
    qh, kh, vh = (a.reshape(n, heads, dk) for a in (cache.q, cache.k, cache.v))
    dw = dattn @ np.swapaxes(vh, -1, -2)
    dvh = np.swapaxes(w, -1, -2) @ dattn
    ds = w * (dw - np.sum(dw * w, axis=-1, keepdims=True)) / math.sqrt(dk)
    dq = (ds @ kh).reshape(n, d)
    dk_ = (np.swapaxes(ds, -1, -2) @ qh).reshape(n, d)
    dv = dvh.reshape(n, d)

    g["q_proj.weight"] = dq.T @ cache.x_main
    g["q_proj.bias"] = dq.sum(axis=0)
    g["k_proj.weight"] = dk_.T @ cache.fused
    g["k_proj.bias"] = dk_.sum(axis=0)
    g["v_proj.weight"] = dv.T @ cache.fused
    g["v_proj.bias"] = dv.sum(axis=0)
    dh = dk_ @ p["k_proj.weight"] + dv @ p["v_proj.weight"]

    for i in reversed(range(cfg.keygen_layers)):
        g[f"keygen.{i}.weight"] = dh.T @ cache.keygen_in[i]
        g[f"keygen.{i}.bias"] = dh.sum(axis=0)
        if i:
            dh = (dh @ p[f"keygen.{i}.weight"]) * (cache.keygen_pre[i - 1] > 0)

    return {name: g[name] for name in p}


def loss_and_grads(model: FusionModel, f_main, f_aux, labels):
    logits, cache = fusion_forward(f_main, f_aux, model)
    return cross_entropy(logits, labels), fusion_backward(cache, labels)


# ---------------------------------------------------------------------------
# optimizer and training


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, grad in grads.items():
        if params[name].shape != grad.shape:
            raise ShapeMismatch(f"{name}: parameter {params[name].shape} vs gradient {grad.shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, grad in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 100
    batch: int = 512
    lr: float = 1e-4
    seed: int = 0


def train_fusion(paired: PairedDataset, hyper: TrainConfig = TrainConfig(), model_config: FusionConfig | None = None):
    """Train a fusion model with Adam; returns ``(model, per-iteration batch losses)``.

    One PCG64 stream seeds both the initialization and the batch order, so a fixed
    seed replays exactly. Batches walk a shuffled permutation, reshuffling on wrap.
    """
    if len(paired) == 0:
        raise EmptyDataset("cannot train on an empty paired dataset")
    if model_config is None:
        model_config = FusionConfig(paired.main.dim)
    elif model_config.d_model != paired.main.dim:
        raise ShapeMismatch(f"model d_model={model_config.d_model} but embeddings have dim {paired.main.dim}")
    rng = make_rng(hyper.seed)
    model = FusionModel.init(model_config, rng=rng)
    state = AdamState(lr=hyper.lr)
    xm, xa, y = paired.main.vectors, paired.aux.vectors, paired.labels
    n = len(paired)
    bs = min(hyper.batch, n)
    order, pos = rng.permutation(n), 0
    history = []
    for _ in range(hyper.iters):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos : pos + bs]
        pos += bs
        loss, grads = loss_and_grads(model, xm[idx], xa[idx], y[idx])
        adam_step(model.params, grads, state)
        history.append(loss)
    return model, history

