"""Per-part isotropic Gaussian mixtures and the type-posterior embedding.

Each part m has K prototypes (stored as rows, ``means[m]`` is ``(K, C)``),
priors over them and one variance shared by its components. The embedding of
an instance is the ``(M, K)`` matrix of posteriors over types, one row per part.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .datamodel import VISUAL, VISUAL_FLAT, Codebook
from .numerics import LOG_2PI, log_sum_exp, rng_for

EM_MAX_STEPS = 300
EM_TOL = 1e-6
MIN_VARIANCE = 1e-6
EMPTY_MASS = 1e-12


@dataclass
class PartMixture:
    means: np.ndarray  # (K, C)
    priors: np.ndarray  # (K,)
    variance: float

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.variance = float(self.variance)
        if self.variance <= 0:
            raise ValueError("mixture variance must be positive")
        if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValueError("mixture priors must be a probability vector")

    @property
    def K(self):
        return len(self.priors)

    def log_joint(self, F):
        """``log prior_k + log N(f; mean_k, variance I)`` for rows of ``F`` -> (n, K)."""
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        C = F.shape[1]
        sq = sqdist(F, self.means)
        with np.errstate(divide="ignore"):
            logp = np.log(self.priors)
        return logp[None] - 0.5 * C * (LOG_2PI + np.log(self.variance)) - sq / (2.0 * self.variance)


@dataclass
class MixtureModel:
    means: np.ndarray  # (M, K, C)
    priors: np.ndarray  # (M, K)
    variances: np.ndarray  # (M,)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        if np.any(self.priors < 0) or np.any(np.abs(self.priors.sum(-1) - 1.0) > 1e-9):
            raise ValueError("priors must sum to one per part")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("prototypes must be finite")

    @property
    def M(self):
        return self.means.shape[0]

    @property
    def K(self):
        return self.means.shape[1]

    @property
    def C(self):
        return self.means.shape[2]

    def part(self, m) -> PartMixture:
        return PartMixture(self.means[m], self.priors[m], self.variances[m])

    @classmethod
    def from_parts(cls, parts):
        return cls(np.stack([p.means for p in parts]), np.stack([p.priors for p in parts]),
                   np.array([p.variance for p in parts]))

    def copy(self):
        return MixtureModel(self.means.copy(), self.priors.copy(), self.variances.copy())


@dataclass
class PiEmbedding:
    values: np.ndarray  # (M, K) structured or (M*K,) flat
    structured: bool = True
    fallback: np.ndarray | None = None  # per row: True where a uniform row was substituted

    @property
    def flagged(self):
        return self.fallback is not None and bool(np.any(self.fallback))


@dataclass
class EMTrace:
    initial_nll: float
    nll: list = field(default_factory=list)  # mean NLL per instance after each step
    reseeds: list = field(default_factory=list)  # (step, component)
    converged: bool = False

    @property
    def steps(self):
        return len(self.nll)


def mixture_nll(part: PartMixture, f):
    """Negative log-likelihood of one part feature under a part mixture."""
    if not np.any(part.priors > 0):
        raise ValueError("all priors are zero")
    return float(-log_sum_exp(part.log_joint(f)[0]))


def _mean_nll(part, F):
    return float(-np.mean(log_sum_exp(part.log_joint(F), axis=1)))


def sqdist(F, X, F_norms=None):
    """Squared Euclidean distances between rows of ``F`` (n, C) and ``X`` (K, C)."""
    if F_norms is None:
        F_norms = np.einsum("nc,nc->n", F, F)
    d = F_norms[:, None] - 2.0 * F @ X.T + np.einsum("kc,kc->k", X, X)[None]
    return np.maximum(d, 0.0)


def _kmeanspp(F, K, rng, F_norms):
    """Greedy k-means++ seeding: several D^2 candidates per step, keep the best."""
    n = len(F)
    trials = 2 + int(np.log(K))
    centers = [int(rng.integers(n))]
    closest = sqdist(F, F[centers], F_norms)[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            cand = rng.integers(n, size=trials)
        else:
            cand = np.searchsorted(np.cumsum(closest), rng.random(trials) * total)
            cand = np.minimum(cand, n - 1)
        d = sqdist(F, F[cand], F_norms).T
        pots = np.minimum(closest[None], d).sum(-1)
        best = int(np.argmin(pots))
        centers.append(int(cand[best]))
        closest = np.minimum(closest, d[best])
    return F[centers].copy()


def _lloyd(F, centers, iters, F_norms):
    K = len(centers)
    assign = None
    for _ in range(iters):
        new = np.argmin(sqdist(F, centers, F_norms), axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=K)
        onehot = (assign[:, None] == np.arange(K)[None]).astype(np.float64)
        sums = onehot.T @ F
        live = counts > 0
        centers[live] = sums[live] / counts[live, None]
    return centers, sqdist(F, centers, F_norms).min(axis=1)


INIT_SAMPLE = 10000


def init_mixture(F, K, seed=0, min_variance=MIN_VARIANCE, n_init=10, lloyd_iters=30,
                 max_sample=INIT_SAMPLE):
    """k-means++ seedings refined by Lloyd steps; the lowest-inertia one seeds EM.

    Seeding runs on at most ``max_sample`` rows drawn without replacement.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    rng = rng_for(seed, "em-init")
    if len(F) > max_sample:
        F = F[np.sort(rng.choice(len(F), size=max_sample, replace=False))]
    norms = np.einsum("nc,nc->n", F, F)
    best = None
    for _ in range(n_init):
        centers, closest = _lloyd(F, _kmeanspp(F, K, rng, norms), lloyd_iters, norms)
        inertia = closest.sum()
        if best is None or inertia < best[0]:
            best = (inertia, centers, closest)
    _, means, closest = best
    var = max(float(closest.mean()) / F.shape[1], min_variance)
    return PartMixture(means, np.full(K, 1.0 / K), var)


def _m_step(F, R, min_variance, events=None, step=None):
    n, C = F.shape
    Nk = R.sum(axis=0)
    means = np.where(Nk[:, None] > EMPTY_MASS, (R.T @ F) / np.maximum(Nk, EMPTY_MASS)[:, None],
                     0.0)
    empty = np.flatnonzero(Nk <= EMPTY_MASS)
    if len(empty):
        live = means[Nk > EMPTY_MASS] if np.any(Nk > EMPTY_MASS) else F[:1]
        for k in empty:
            d = sqdist(F, live).min(axis=1)
            far = int(np.argmax(d))
            means[k] = F[far]
            live = np.vstack([live, F[far]])
            if events is not None:
                events.append((step, int(k)))
    sq = sqdist(F, means)
    var = max(float((R * sq).sum() / (n * C)), min_variance)
    priors = np.where(Nk > EMPTY_MASS, Nk, 1.0) / n
    priors = priors / priors.sum()
    return PartMixture(means, priors, var)


def em_fit(F, K, seed=0, max_steps=EM_MAX_STEPS, tol=EM_TOL, init=None,
           min_variance=MIN_VARIANCE):
    """Fit one part's mixture by EM. Returns ``(PartMixture, EMTrace)``.

    ``F`` is ``(n, C)``. Stops when the mean per-instance NLL changes by less
    than ``tol`` or after ``max_steps`` iterations. A component whose total
    responsibility vanishes is moved to the point farthest from the other
    prototypes; such steps are listed in ``trace.reseeds``.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    if not np.all(np.isfinite(F)):
        raise ValueError("features must be finite")
    if len(F) < K:
        raise ValueError(f"need at least K={K} samples, got {len(F)}")
    part = init if init is not None else init_mixture(F, K, seed, min_variance)
    trace = EMTrace(_mean_nll(part, F))
    prev = trace.initial_nll
    for step in range(1, max_steps + 1):
        lj = part.log_joint(F)
        R = np.exp(lj - log_sum_exp(lj, axis=1)[:, None])
        part = _m_step(F, R, min_variance, trace.reseeds, step)
        cur = _mean_nll(part, F)
        trace.nll.append(cur)
        if abs(prev - cur) < tol:
            trace.converged = True
            break
        prev = cur
    return part, trace


def fit_mixture(F, K, seed=0, max_steps=EM_MAX_STEPS, tol=EM_TOL, init: MixtureModel | None = None,
                min_variance=MIN_VARIANCE):
    """EM on every part of ``F`` ``(n, M, C)``. Returns ``(MixtureModel, [EMTrace])``."""
    F = np.asarray(F, dtype=np.float64)
    parts, traces = [], []
    for m in range(F.shape[1]):
        p, t = em_fit(F[:, m], K, seed=seed + 7919 * m, max_steps=max_steps, tol=tol,
                      init=None if init is None else init.part(m), min_variance=min_variance)
        parts.append(p)
        traces.append(t)
    return MixtureModel.from_parts(parts), traces


def mixture_from_responsibilities(F, R, min_variance=MIN_VARIANCE):
    """One M-step per part with given soft assignments ``R`` ``(n, M, K)``."""
    F = np.asarray(F, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    R = R / R.sum(axis=-1, keepdims=True)
    return MixtureModel.from_parts(
        [_m_step(F[:, m], R[:, m], min_variance) for m in range(F.shape[1])])


def total_nll(model: MixtureModel, F):
    return float(sum(_mean_nll(model.part(m), F[:, m]) for m in range(model.M)))


# --------------------------------------------------------------------------
# embeddings


def _log_joint_batch(model: MixtureModel, F):
    """``(n, M, K)`` log prior + log density for part features ``(n, M, C)``."""
    sq = np.stack([sqdist(F[:, m], model.means[m]) for m in range(model.M)], axis=1)
    with np.errstate(divide="ignore"):
        logp = np.log(model.priors)
    var = model.variances[None, :, None]
    return logp[None] - 0.5 * model.C * (LOG_2PI + np.log(var)) - sq / (2.0 * var)


def infer_pi_batch(model: MixtureModel, F):
    """Type posteriors ``(n, M, K)`` and a ``(n, M)`` mask of uniform fallback rows."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[1:] != (model.M, model.C):
        raise ValueError(f"part features {F.shape[1:]} do not match mixture ({model.M}, {model.C})")
    lj = _log_joint_batch(model, F)
    norm = log_sum_exp(lj, axis=2)
    dead = ~np.isfinite(norm)
    with np.errstate(invalid="ignore"):
        pi = np.exp(lj - norm[..., None])
    if np.any(dead):
        pi[dead] = 1.0 / model.K
    return pi, dead


def infer_pi(model: MixtureModel, f) -> PiEmbedding:
    """Posterior over types per part for one instance's part features ``(M, C)``."""
    pi, dead = infer_pi_batch(model, np.asarray(f, dtype=np.float64)[None])
    if np.any(dead):
        warnings.warn("type posterior underflowed; substituted uniform rows", RuntimeWarning)
    return PiEmbedding(pi[0], True, dead[0])


def pi_mean_grad(model: MixtureModel, F, pi, dpi):
    """Back-propagate ``dL/dPi`` ``(n, M, K)`` through the posterior to the prototypes."""
    dl = pi * (dpi - (pi * dpi).sum(-1, keepdims=True))
    diff = F[:, :, None, :] - model.means[None]
    return np.einsum("nmk,nmkc->mkc", dl, diff) / model.variances[:, None, None]


def nnls(A, b, max_iter=None):
    """``min ||A x - b||, x >= 0`` via scipy's active-set solver.

    Returns ``(x, converged)``; on hitting the iteration cap ``x`` is the
    projected least-squares solution.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    try:
        return optimize.nnls(A, b, maxiter=max_iter)[0], True
    except RuntimeError:
        return np.maximum(np.linalg.lstsq(A, b, rcond=None)[0], 0.0), False


def infer_pi_nnls(model: MixtureModel, f, max_iter=None) -> PiEmbedding:
    """Type weights by non-negative least squares ``f_m ~ Theta_m pi``, rows renormalised.

    Rows whose solution is all zero fall back to uniform; ``fallback`` also
    marks rows where the solver hit its iteration cap.
    """
    f = np.asarray(f, dtype=np.float64)
    rows, flags = [], []
    for m in range(model.M):
        x, ok = nnls(model.means[m].T, f[m], max_iter=max_iter)
        s = x.sum()
        if s > 0:
            rows.append(x / s)
            flags.append(not ok)
        else:
            rows.append(np.full(model.K, 1.0 / model.K))
            flags.append(True)
    return PiEmbedding(np.array(rows), True, np.array(flags))


def flatten_pi(pi):
    """Row-major concatenation of the part rows, divided by M so it sums to one.

    Accepts one ``(M, K)`` matrix or a batch ``(n, M, K)``.
    """
    pi = np.asarray(pi, dtype=np.float64)
    M = pi.shape[-2]
    return pi.reshape(*pi.shape[:-2], -1) / M


def class_average_pi(pis, labels, classes=None) -> Codebook:
    """Per-class mean embedding, renormalised. ``pis`` is ``(n, M, K)`` or flat ``(n, D)``."""
    pis = np.asarray(pis, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist())) if classes is None else list(classes)
    entries = {}
    for c in classes:
        sel = pis[labels == c]
        if len(sel) == 0:
            raise ValueError(f"class {c} has no embeddings")
        mean = sel.mean(axis=0)
        entries[c] = mean / mean.sum(axis=-1, keepdims=True)
    return Codebook(VISUAL if pis.ndim == 3 else VISUAL_FLAT, entries)
