"""Two-view synthetic embeddings where neither view alone identifies the class.

Classes are arranged on a ring. The main view places class ``c`` in group
``c // 2`` and the auxiliary view in group ``((c + 1) % 8) // 2``, so each view
confuses a different pair of neighbours. A weak within-pair cue on one axis
leaves each view at roughly 0.7 Bayes accuracy; intersecting the two groupings
pins the class down.

Per-view layout (``dim`` >= 5): axes 0-3 carry a scaled one-hot of the group,
axis 4 carries ``+/- pair_shift`` for the two members of the group, the rest is
pure noise. Noise is isotropic N(0, 1) and independent across views, so the
nearest-mean rule is the Bayes classifier for either view and for both jointly.
"""

from __future__ import annotations

import numpy as np

from fusionfer.features import N_CLASSES, EmbeddingSet, PairedDataset, make_rng

GROUP_SCALE = 2.7
PAIR_SHIFT = 0.7


def view_means(dim: int = 8, group_scale: float = GROUP_SCALE, pair_shift: float = PAIR_SHIFT):
    """Class means ``(main, aux)``, each of shape ``(8, dim)``."""
    if dim < 5:
        raise ValueError("dim must be at least 5")
    means = []
    for offset in (0, 1):
        mu = np.zeros((N_CLASSES, dim))
        for c in range(N_CLASSES):
            shifted = (c + offset) % N_CLASSES
            mu[c, shifted // 2] = group_scale
            mu[c, 4] = pair_shift if shifted % 2 else -pair_shift
        means.append(mu)
    return means[0], means[1]


def make_two_view_dataset(n_per_class: int, dim: int = 8, seed: int = 0, n_videos: int = 4, **kw) -> PairedDataset:
    rng = make_rng(seed)
    mu_main, mu_aux = view_means(dim, **kw)
    labels = np.repeat(np.arange(N_CLASSES), n_per_class)
    labels = labels[rng.permutation(labels.size)]
    xm = mu_main[labels] + rng.standard_normal((labels.size, dim))
    xa = mu_aux[labels] + rng.standard_normal((labels.size, dim))
    ids = [f"s{i:06d}" for i in range(labels.size)]
    videos = [f"v{i % n_videos}" for i in range(labels.size)]
    frames = np.arange(labels.size) // n_videos
    return PairedDataset(
        EmbeddingSet(ids, videos, frames, labels, xm),
        EmbeddingSet(ids, videos, frames, labels, xa),
    )


def bayes_predict(x_main=None, x_aux=None, dim: int = 8, **kw) -> np.ndarray:
    """Nearest-mean (= Bayes) labels from either view or both."""
    mu_main, mu_aux = view_means(dim, **kw)
    score = 0.0
    if x_main is not None:
        score = score + ((np.asarray(x_main)[:, None, :] - mu_main[None]) ** 2).sum(-1)
    if x_aux is not None:
        score = score + ((np.asarray(x_aux)[:, None, :] - mu_aux[None]) ** 2).sum(-1)
    return np.argmin(score, axis=1)


def fit_linear_baseline(x, y, iters: int = 500, lr: float = 0.05, seed: int = 0):
    """Multinomial logistic regression trained with full-batch Adam; returns ``(W, b)``."""
    from fusionfer.fusion import AdamState, adam_step, softmax

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    rng = make_rng(seed)
    params = {"W": rng.normal(0, 0.01, (N_CLASSES, x.shape[1])), "b": np.zeros(N_CLASSES)}
    state = AdamState(lr=lr)
    for _ in range(iters):
        p = softmax(x @ params["W"].T + params["b"])
        p[np.arange(y.size), y] -= 1.0
        adam_step(params, {"W": p.T @ x / y.size, "b": p.mean(0)}, state)
    return params["W"], params["b"]


def linear_predict(W, b, x) -> np.ndarray:
    return np.argmax(np.asarray(x) @ W.T + b, axis=1)
