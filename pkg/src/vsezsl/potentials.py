"""Pairwise potentials between labels, visual features and supervision signals.

The label classifier scores concatenated part features over the seen classes.
The semantic mapper is a two-layer ReLU network from a type-posterior
embedding to attribute space, trained with a structured hinge. Visual
supervision compares embeddings directly under a squared Frobenius distance.
A linear compatibility model on raw global features serves as the baseline.

Batched helpers take row-stacked inputs and return *summed* values together
with gradients of that sum, so callers can reduce over chunks in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import SEMANTIC, VISUAL, Codebook
from .errors import CoverageError
from .numerics import Adam, log_softmax, rng_for, softmax

ETA = 0.2
HIDDEN = 256


def phi_ys(y, y2):
    """1 when the two labels agree, else 0."""
    return int(y == y2)


# --------------------------------------------------------------------------
# label classifier


@dataclass
class Classifier:
    weight: np.ndarray  # (|seen|, D)
    bias: np.ndarray  # (|seen|,)
    classes: list  # seen class ids, row order of weight

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.classes = [int(c) for c in self.classes]
        if self.weight.shape[0] != len(self.classes) or self.bias.shape != (len(self.classes),):
            raise ValueError("classifier rows must match its class list")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("classifier parameters must be finite")

    @classmethod
    def init(cls, classes, dim, rng, scale=0.01):
        return cls(rng.normal(0.0, scale, size=(len(classes), dim)), np.zeros(len(classes)), classes)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def class_index(self, y):
        try:
            return self.classes.index(int(y))
        except ValueError:
            raise ValueError(f"class {y} is not one of the classifier's seen classes") from None

    def logits(self, F):
        return np.asarray(F, dtype=np.float64) @ self.weight.T + self.bias

    def probs(self, F):
        return softmax(self.logits(F), axis=-1)


def xy_objective(clf: Classifier, F, y_idx):
    """Summed log-softmax of the true class over rows of ``F`` ``(n, D)``.

    Returns ``(value, {"weight", "bias"}, dF)``; ``y_idx`` indexes ``clf.classes``.
    """
    F = np.asarray(F, dtype=np.float64)
    y_idx = np.asarray(y_idx, dtype=np.int64)
    logp = log_softmax(clf.logits(F), axis=-1)
    rows = np.arange(len(F))
    value = float(logp[rows, y_idx].sum())
    dz = -np.exp(logp)
    dz[rows, y_idx] += 1.0
    return value, {"weight": dz.T @ F, "bias": dz.sum(axis=0)}, dz @ clf.weight


def phi_xy(clf: Classifier, f, y):
    """Log-probability of seen class ``y`` for concatenated part features ``f``.

    Returns ``(value, grads)`` with gradients w.r.t. the classifier weights.
    """
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    value, grads, _ = xy_objective(clf, f, [clf.class_index(y)])
    return value, grads


# --------------------------------------------------------------------------
# semantic mapper and structured hinge


@dataclass
class SemanticMapper:
    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray

    def __post_init__(self):
        for k in ("w1", "b1", "w2", "b2"):
            v = np.asarray(getattr(self, k), dtype=np.float64)
            if not np.all(np.isfinite(v)):
                raise ValueError("mapper weights must be finite")
            setattr(self, k, v)
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("mapper layer sizes do not chain")

    @classmethod
    def init(cls, d_in, d_out, rng, hidden=HIDDEN):
        # He initialisation for the ReLU layer
        w1 = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(hidden, d_in))
        w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(d_out, hidden))
        return cls(w1, np.zeros(hidden), w2, np.zeros(d_out))

    @property
    def d_in(self):
        return self.w1.shape[1]

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.d_in:
            raise ValueError(f"mapper expects inputs of length {self.d_in}, got {X.shape[-1]}")
        pre = X @ self.w1.T + self.b1
        h = np.maximum(pre, 0.0)
        return h @ self.w2.T + self.b2, pre, h

    def __call__(self, X):
        return self.forward(X)[0]


def codebook_matrix(codebook: Codebook, classes=None, normalize=False):
    """Rows of ``codebook`` as a matrix, flattened, optionally L2-normalised."""
    S = codebook.matrix(classes)
    S = S.reshape(len(S), -1)
    if normalize:
        norms = np.linalg.norm(S, axis=1, keepdims=True)
        S = S / np.where(norms > 0, norms, 1.0)
    return S


def hinge_scores(scores, y_idx, eta, margin_on_correct=False):
    """Structured hinge on a score matrix ``(n, classes)``.

    Returns ``(value, dscores)`` where ``value`` is the summed (non-positive)
    potential. The margin is ``eta`` on wrong labels; with
    ``margin_on_correct`` it sits on the true label only, as printed.
    """
    n, k = scores.shape
    rows = np.arange(n)
    wrong = np.ones((n, k))
    wrong[rows, y_idx] = 0.0
    margin = eta * (1.0 - wrong) if margin_on_correct else eta * wrong
    h = margin + scores - scores[rows, y_idx][:, None]
    active = (h > 0).astype(np.float64)  # subgradient zero at the kink
    value = -float(np.sum(h * active))
    ds = -active
    ds[rows, y_idx] += active.sum(axis=1)
    return value, ds


def sx_semantic_objective(mapper: SemanticMapper, X, y_idx, S, eta=ETA, margin_on_correct=False):
    """Summed structured-hinge potential of mapped embeddings ``X`` ``(n, M*K)``.

    ``S`` holds one target row per class; ``y_idx`` indexes its rows.
    Returns ``(value, grads w.r.t. mapper)``.
    """
    if eta < 0:
        raise ValueError("margin must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    v, pre, h = mapper.forward(X)
    value, ds = hinge_scores(v @ S.T, np.asarray(y_idx), eta, margin_on_correct)
    dv = ds @ S
    dh = dv @ mapper.w2
    dpre = dh * (pre > 0)
    return value, {"w1": dpre.T @ X, "b1": dpre.sum(0), "w2": dv.T @ h, "b2": dv.sum(0)}


def phi_sx_semantic(mapper: SemanticMapper, pi, y, codebook: Codebook, eta=ETA, classes=None,
                    margin_on_correct=False, normalize=False):
    """Structured hinge between the mapped embedding of ``pi`` and class ``y``.

    The sum runs over ``classes`` (default: every codebook class), which must
    include ``y``. Returns ``(value, grads w.r.t. mapper)``.
    """
    classes = codebook.classes if classes is None else sorted(int(c) for c in classes)
    if int(y) not in classes:
        raise ValueError(f"class {y} is not among the hinge classes")
    S = codebook_matrix(codebook, classes, normalize)
    x = np.asarray(pi, dtype=np.float64).reshape(1, -1)
    return sx_semantic_objective(mapper, x, [classes.index(int(y))], S, eta, margin_on_correct)


# --------------------------------------------------------------------------
# visual supervision


def phi_sx_visual(target, pi):
    """Negative squared Frobenius distance and its gradient w.r.t. ``pi``."""
    target = np.asarray(target, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if target.shape != pi.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {pi.shape}")
    d = target - pi
    return -float(np.sum(d * d)), 2.0 * d


# --------------------------------------------------------------------------
# prediction


def _check_codebook(codebook: Codebook, classes):
    if not codebook.entries:
        raise ValueError("empty codebook")
    if classes is None:
        return codebook.classes
    classes = sorted(int(c) for c in classes)
    missing = [c for c in classes if c not in codebook.entries]
    if missing:
        raise CoverageError(missing)
    return classes


def predict_semantic_batch(mapper: SemanticMapper, X, codebook: Codebook, classes=None,
                           normalize=True):
    """Class with the highest compatibility ``s_y . V(pi)`` for each row of ``X``."""
    classes = _check_codebook(codebook, classes)
    S = codebook_matrix(codebook, classes, normalize)
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    # argmax keeps the first maximum, i.e. the smallest class id
    return np.asarray(classes)[np.argmax(mapper(X) @ S.T, axis=1)]


def predict_semantic(mapper: SemanticMapper, pi, codebook: Codebook, classes=None, normalize=True):
    return int(predict_semantic_batch(mapper, np.asarray(pi)[None], codebook, classes, normalize)[0])


def visual_distances(P, codebook: Codebook, classes):
    """Squared Frobenius distances ``(n, classes)`` from embeddings to signatures."""
    T = codebook.matrix(classes)
    P = np.asarray(P, dtype=np.float64)
    if P.shape[1:] != T.shape[1:]:
        raise ValueError(f"embedding shape {P.shape[1:]} does not match codebook {T.shape[1:]}")
    P2 = P.reshape(len(P), -1)
    T2 = T.reshape(len(T), -1)
    return ((P2[:, None, :] - T2[None]) ** 2).sum(-1)


def predict_visual_batch(P, codebook: Codebook, classes=None):
    classes = _check_codebook(codebook, classes)
    return np.asarray(classes)[np.argmin(visual_distances(P, codebook, classes), axis=1)]


def predict_visual(pi, codebook: Codebook, classes=None):
    """Class whose signature is nearest to ``pi``; ties go to the smaller id."""
    return int(predict_visual_batch(np.asarray(pi)[None], codebook, classes)[0])


# --------------------------------------------------------------------------
# linear compatibility baseline


@dataclass
class CompatibilityBaseline:
    """Linear map from standardised global features to codebook space."""

    weight: np.ndarray  # (d_target, d_visual)
    eta: float = ETA
    shift: np.ndarray | None = None  # feature standardisation
    scale: np.ndarray | None = None
    normalize: bool = True
    target_kind: str = SEMANTIC

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        d = self.weight.shape[1]
        self.shift = np.zeros(d) if self.shift is None else np.asarray(self.shift, dtype=np.float64)
        self.scale = np.ones(d) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("baseline weights must be finite")

    def embed(self, X):
        X = (np.asarray(X, dtype=np.float64) - self.shift) / self.scale
        return X @ self.weight.T

    def targets(self, codebook: Codebook, classes):
        if codebook.is_visual != (self.target_kind != SEMANTIC):
            raise ValueError(f"baseline was trained on {self.target_kind} targets, got {codebook.kind}")
        S = codebook_matrix(codebook, classes, False)
        if codebook.kind == VISUAL:
            # structured signatures are compared as one flat distribution
            S = S / codebook.matrix(classes).shape[1]
        if self.normalize:
            S = S / np.maximum(np.linalg.norm(S, axis=1, keepdims=True), 1e-12)
        return S


def baseline_fit(X, labels, codebook: Codebook, classes=None, eta=ETA, epochs=200, lr=1e-2,
                 seed=0, normalize=True, margin_on_correct=False, weight_decay=0.0):
    """Train a linear compatibility baseline with the structured hinge.

    ``X`` holds raw global features ``(n, d)``; ``labels`` their class ids,
    all in ``classes`` (default: the codebook's classes). Full-batch Adam on
    the mean hinge plus ``weight_decay/2 * ||W||^2``. Returns
    ``(CompatibilityBaseline, trace of the mean hinge potential)``.
    """
    classes = _check_codebook(codebook, classes)
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    index = {c: i for i, c in enumerate(classes)}
    try:
        y_idx = np.array([index[int(c)] for c in labels], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"training label {e.args[0]} is not a codebook class") from None
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    kind = SEMANTIC if not codebook.is_visual else codebook.kind
    probe = CompatibilityBaseline(np.zeros((1, X.shape[1])), eta, shift, scale, normalize, kind)
    S = probe.targets(codebook, classes)
    rng = rng_for(seed, "baseline")
    W = rng.normal(0.0, 1.0 / np.sqrt(X.shape[1]), size=(S.shape[1], X.shape[1]))
    model = CompatibilityBaseline(W, eta, shift, scale, normalize, kind)
    Z = (X - shift) / scale
    opt = Adam({"weight": model.weight}, lr=lr)
    trace = []
    for _ in range(epochs):
        value, ds = hinge_scores(Z @ model.weight.T @ S.T, y_idx, eta, margin_on_correct)
        trace.append(value / len(X))
        opt.step({"weight": -(S.T @ ds.T @ Z) / len(X) + weight_decay * model.weight})
    return model, trace


def baseline_predict(model: CompatibilityBaseline, X, codebook: Codebook, classes=None):
    classes = _check_codebook(codebook, classes)
    S = model.targets(codebook, classes)
    return np.asarray(classes)[np.argmax(model.embed(X) @ S.T, axis=1)]
