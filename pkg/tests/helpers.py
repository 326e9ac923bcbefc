"""Independent oracles shared by the unit and acceptance tests.

Nothing here calls into the forward/backward code it checks, except through
the loss value used by finite differences.
"""

import math

import numpy as np

from fusionfer.fusion import FusionConfig, FusionModel, cross_entropy, fusion_forward, loss_and_grads


def reference_logits(xm, xa, model):
    """Layer-by-layer recomputation of the fusion forward pass with explicit loops."""
    cfg, p = model.config, model.params
    d, heads, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    out = []
    for m, a in zip(np.atleast_2d(xm), np.atleast_2d(xa)):
        h = list(0.5 * (m + a)) if cfg.strategy in ("Mean", "UpDownMean") else list(m) + list(a)
        n_layers = cfg.keygen_layers
        for i in range(n_layers):
            w, b = p[f"keygen.{i}.weight"], p[f"keygen.{i}.bias"]
            h = [sum(w[r, c] * h[c] for c in range(len(h))) + b[r] for r in range(w.shape[0])]
            if i < n_layers - 1:
                h = [max(v, 0.0) for v in h]

        def lin(name, x):
            w, b = p[f"{name}.weight"], p[f"{name}.bias"]
            return [sum(w[r, c] * x[c] for c in range(len(x))) + b[r] for r in range(w.shape[0])]

        q, k, v = lin("q_proj", list(m)), lin("k_proj", h), lin("v_proj", h)
        att = []
        for t in range(heads):
            qt = q[t * dk : (t + 1) * dk]
            scores = [sum(qt[j] * k[s * dk + j] for j in range(dk)) / math.sqrt(dk) for s in range(heads)]
            mx = max(scores)
            e = [math.exp(s - mx) for s in scores]
            wts = [x / sum(e) for x in e]
            att += [sum(wts[s] * v[s * dk + j] for s in range(heads)) for j in range(dk)]
        o = lin("out_proj", att)
        k0, k1, k2 = p["local.kernel"]
        loc = [
            (k0 * o[i - 1] if i > 0 else 0.0) + k1 * o[i] + (k2 * o[i + 1] if i < d - 1 else 0.0)
            for i in range(d)
        ]
        block = [loc[i] + m[i] for i in range(d)]
        hid = [max(x, 0.0) for x in lin("classifier.0", block)]
        out.append(lin("classifier.1", hid))
    return np.array(out)


def finite_difference_grads(model, xm, xa, y, step=1e-5):
    grads = {}
    for name, param in model.params.items():
        g = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + step
            up = cross_entropy(fusion_forward(xm, xa, model)[0], y)
            param[idx] = orig - step
            down = cross_entropy(fusion_forward(xm, xa, model)[0], y)
            param[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def gradient_errors(analytic, numeric, small=1e-6):
    """Worst (relative error over large entries, absolute error over small ones) per tensor."""
    out = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        scale = np.maximum(np.abs(a), np.abs(n))
        big = scale >= small
        rel = np.abs(a - n)[big] / scale[big] if big.any() else np.zeros(1)
        ab = np.abs(a - n)[~big] if (~big).any() else np.zeros(1)
        out[name] = (float(rel.max()), float(ab.max()))
    return out


def random_problem(seed, d=8, n_heads=2, batch=4, strategy="Concat"):
    rng = np.random.default_rng(seed)
    model = FusionModel.init(FusionConfig(d, n_heads, strategy), seed=seed)
    xm = rng.normal(size=(batch, d))
    xa = rng.normal(size=(batch, d))
    y = rng.integers(0, 8, batch)
    return model, xm, xa, y


def check_gradients(seed, strategy="Concat", **kw):
    model, xm, xa, y = random_problem(seed, strategy=strategy, **kw)
    _, analytic = loss_and_grads(model, xm, xa, y)
    numeric = finite_difference_grads(model, xm, xa, y)
    return gradient_errors(analytic, numeric)
