"""Channel-grouping multi-attention over a W x H x C feature map.

The grouping map sees the globally average-pooled feature map::

    g[m, c] = weight[m, c] * mean_{w,h} E[w, h, c] + bias[m]
    A_m[w, h] = sigmoid(sum_c g[m, c] * E[w, h, c])
    f[m, c] = sum_{w,h} A_m[w, h] * E[w, h, c]

Batched functions take ``E`` with shape ``(n, W, H, C)``; attention maps are
``(n, M, W, H)`` and part features ``(n, M, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Parallel, rng_for, sigmoid

LAMBDA = 5.0
ZETA = 0.02


@dataclass
class GroupingModel:
    weight: np.ndarray  # (M, C)
    bias: np.ndarray  # (M,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("grouping weight must be (M, C) and bias (M,)")
        if self.weight.shape[0] < 2:
            raise ValueError("need at least two parts")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("grouping parameters must be finite")

    @property
    def M(self):
        return self.weight.shape[0]

    @property
    def C(self):
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, M, C):
        return cls(np.zeros((M, C)), np.zeros(M))

    @classmethod
    def random(cls, M, C, rng, scale=0.01):
        return cls(rng.normal(0.0, scale, size=(M, C)), np.zeros(M))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def copy(self):
        return GroupingModel(self.weight.copy(), self.bias.copy())


@dataclass
class PartSet:
    features: np.ndarray  # (M, C)
    attention: np.ndarray  # (M, W, H)
    source_dims: tuple


def _check_channels(model, E):
    if E.shape[-1] != model.C:
        raise ValueError(f"feature map has {E.shape[-1]} channels, grouping expects {model.C}")


def pool(E):
    return E.mean(axis=(-3, -2))


def compute_grouping(model: GroupingModel, feature_map):
    """Per-instance grouping weights, ``(M, C)`` (or ``(n, M, C)`` for a batch)."""
    E = np.asarray(feature_map, dtype=np.float64)
    _check_channels(model, E)
    p = pool(E)
    return model.weight * p[..., None, :] + model.bias[:, None]


def attention_map(g, feature_map):
    """Attention map of one part from its grouping row ``g`` (length C)."""
    E = np.asarray(feature_map, dtype=np.float64)
    return sigmoid(np.tensordot(E, np.asarray(g, dtype=np.float64), axes=([-1], [0])))


def attention_maps(g, E):
    """``g`` (n, M, C), ``E`` (n, W, H, C) -> (n, M, W, H)."""
    return sigmoid(np.einsum("nmc,nwhc->nmwh", g, E))


def part_features(A, feature_map):
    """``f[m, c] = sum_{w,h} A[m, w, h] * E[w, h, c]``; batched if ``A`` is 4-D."""
    A = np.asarray(A, dtype=np.float64)
    E = np.asarray(feature_map, dtype=np.float64)
    if A.ndim == 3:
        return np.einsum("mwh,whc->mc", A, E)
    return np.einsum("nmwh,nwhc->nmc", A, E)


def forward(model: GroupingModel, feature_map):
    """Attention and part features for one map; returns a PartSet."""
    E = np.asarray(feature_map, dtype=np.float64)
    g = compute_grouping(model, E)
    A = np.stack([attention_map(g[m], E) for m in range(model.M)])
    return PartSet(part_features(A, E), A, E.shape)


def forward_batch(model: GroupingModel, E, parallel: Parallel | None = None):
    """``(features (n, M, C), attention (n, M, W, H))`` for a batch of maps."""
    E = np.asarray(E, dtype=np.float64)
    _check_channels(model, E)
    parallel = parallel or Parallel()

    def run(s):
        Es = E[s]
        A = attention_maps(compute_grouping(model, Es), Es)
        return part_features(A, Es), A

    out = parallel.map(run, len(E))
    if not out:
        W, H = E.shape[1:3]
        return np.zeros((0, model.M, model.C)), np.zeros((0, model.M, W, H))
    return np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])


def global_features(E):
    """Sum-pooled feature map, the attention-free global representation."""
    return np.asarray(E, dtype=np.float64).sum(axis=(-3, -2))


# --------------------------------------------------------------------------
# part-learning losses


def _peak_sqdist(A):
    """Squared index distance from each cell to the map's peak.

    ``A`` is ``(..., W, H)``; ties go to the smallest row-major index.
    """
    W, H = A.shape[-2:]
    flat = A.reshape(*A.shape[:-2], W * H)
    peak = np.argmax(flat, axis=-1)
    pw, ph = np.divmod(peak, H)
    w = np.arange(W)[:, None]
    h = np.arange(H)[None, :]
    return (w - pw[..., None, None]) ** 2 + (h - ph[..., None, None]) ** 2.0


def loss_dis(A_m):
    """Compactness of one attention map around its peak."""
    A_m = np.asarray(A_m, dtype=np.float64)
    return float(np.sum(A_m * _peak_sqdist(A_m)))


def _others_max(A):
    """For maps ``(..., M, P)``: max over the other parts and which part it is."""
    order = np.argsort(-A, axis=-2, kind="stable")
    t1, t2 = order[..., 0, :], order[..., 1, :]
    v1 = np.take_along_axis(A, t1[..., None, :], axis=-2)[..., 0, :]
    v2 = np.take_along_axis(A, t2[..., None, :], axis=-2)[..., 0, :]
    m = np.arange(A.shape[-2])[:, None]
    is_top = m == t1[..., None, :]
    return np.where(is_top, v2[..., None, :], v1[..., None, :]), t1, t2


def loss_div(A, m, zeta=ZETA):
    """Overlap of map ``m`` with the strongest competing map, less a margin."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] < 2:
        raise ValueError("diversity loss needs at least two maps")
    others = np.delete(A, m, axis=0).max(axis=0)
    return float(np.sum(A[m] * (others - zeta)))


def loss_prt_maps(A, lam=LAMBDA, zeta=ZETA):
    """Part loss and its gradient with respect to the attention maps.

    ``A`` is ``(M, W, H)`` or ``(n, M, W, H)``; the value is summed over
    instances. Peak positions and the selected competitor are held fixed
    when differentiating.
    """
    A = np.asarray(A, dtype=np.float64)
    single = A.ndim == 3
    if single:
        A = A[None]
    n, M, W, H = A.shape
    if M < 2:
        raise ValueError("part loss needs at least two maps")
    D = _peak_sqdist(A)
    flat = A.reshape(n, M, W * H)
    others, t1, t2 = _others_max(flat)
    value = float(np.sum(A * D) + lam * np.sum(flat * (others - zeta)))

    grad = D.reshape(n, M, W * H) + lam * (others - zeta)
    parts = np.arange(M)[None, :, None]
    top1 = parts == t1[:, None, :]
    top2 = parts == t2[:, None, :]
    a_top = np.take_along_axis(flat, t1[:, None, :], axis=1)
    total = flat.sum(axis=1, keepdims=True)
    # map t1 is the competitor for every other part; t2 only for t1
    grad = grad + lam * (top1 * (total - a_top) + top2 * a_top)
    grad = grad.reshape(n, M, W, H)
    return value, (grad[0] if single else grad)


def loss_prt(A, lam=LAMBDA, zeta=ZETA):
    return loss_prt_maps(A, lam, zeta)[0]


def backward(model: GroupingModel, E, A, dA=None, df=None):
    """Gradients of a scalar loss with respect to the grouping parameters.

    ``dA`` is the loss gradient w.r.t. attention maps ``(n, M, W, H)``,
    ``df`` w.r.t. part features ``(n, M, C)``. Either may be None.
    """
    E = np.asarray(E, dtype=np.float64)
    total = np.zeros_like(A) if dA is None else np.array(dA, dtype=np.float64)
    if df is not None:
        total = total + np.einsum("nmc,nwhc->nmwh", df, E)
    dZ = total * A * (1.0 - A)
    dg = np.einsum("nmwh,nwhc->nmc", dZ, E)
    p = pool(E)
    return {
        "weight": np.einsum("nmc,nc->mc", dg, p),
        "bias": dg.sum(axis=(0, 2)),
    }


def prt_objective(model: GroupingModel, E, lam=LAMBDA, zeta=ZETA, parallel=None):
    """Summed part loss over a batch and its gradient w.r.t. grouping params."""
    E = np.asarray(E, dtype=np.float64)
    parallel = parallel or Parallel()

    def run(s):
        Es = E[s]
        A = attention_maps(compute_grouping(model, Es), Es)
        val, dA = loss_prt_maps(A, lam, zeta)
        return val, backward(model, Es, A, dA=dA)

    value, grads = 0.0, {"weight": np.zeros_like(model.weight), "bias": np.zeros_like(model.bias)}
    for val, g in parallel.map(run, len(E)):
        value += val
        grads["weight"] += g["weight"]
        grads["bias"] += g["bias"]
    return value, grads


# --------------------------------------------------------------------------
# initialisation


def _cluster_points(points, M, rng, iters=50):
    # farthest-point seeding, then Lloyd iterations
    centers = [points[rng.integers(len(points))]]
    for _ in range(1, M):
        d = np.min([((points - c) ** 2).sum(-1) for c in centers], axis=0)
        centers.append(points[int(np.argmax(d))])
    centers = np.array(centers, dtype=np.float64)
    assign = np.zeros(len(points), dtype=np.int64)
    for it in range(iters):
        d = ((points[:, None] - centers[None]) ** 2).sum(-1)
        new = np.argmin(d, axis=1)
        if it > 0 and np.array_equal(new, assign):
            break
        assign = new
        for m in range(M):
            if np.any(assign == m):
                centers[m] = points[assign == m].mean(axis=0)
    return assign


def init_grouping(E, M, seed=0, target_logit=6.0, name="grouping"):
    """Channel-grouping initialisation from where each channel peaks.

    Channels are clustered by their mean peak coordinates over ``E``
    ``(n, W, H, C)``. Part ``m`` gets positive weight on its cluster and
    negative weight elsewhere, scaled so the median peak logit of an
    instance's own part is ``target_logit``.
    """
    E = np.asarray(E, dtype=np.float64)
    n, W, H, C = E.shape
    rng = rng_for(seed, name)
    flat = E.reshape(n, W * H, C)
    peak = np.argmax(flat, axis=1)
    coords = np.stack(np.divmod(peak, H), axis=-1).astype(np.float64).mean(axis=0)
    if len(np.unique(coords, axis=0)) < M:
        assign = np.arange(C) % M
        rng.shuffle(assign)
    else:
        assign = _cluster_points(coords, M, rng)
    sign = np.where(assign[None, :] == np.arange(M)[:, None], 1.0, -1.0)
    # orient each row so that the pooled activation it multiplies is positive
    base = GroupingModel(sign * np.sign(pool(E).mean(axis=0) + 1e-12)[None, :], np.zeros(M))
    logits = np.einsum("nmc,nwhc->nmwh", compute_grouping(base, E), E)
    peak_logit = np.median(logits.reshape(n, M, -1).max(axis=-1))
    scale = target_logit / peak_logit if peak_logit > 0 else 1.0
    return GroupingModel(base.weight * scale, np.zeros(M))
