"""Alternating two-step training and the learner checkpoint.

Each epoch first moves the grouping weights down the part loss (step 1),
then freezes them, refreshes the part mixtures by EM and updates the label
classifier together with whatever consumes the embedding (step 2):

* ``semantic``: the mapper is fitted to the attribute codebook with the
  structured hinge on the current, fixed embeddings.
* ``visual``: the embedding is compared with the oracle's instance scores.
  Prototypes belong to EM unless ``theta_grad`` is set.
* ``visual-flat``: the oracle's scores are collapsed into one list of
  ``M*K`` entries and the learner uses one mixture with ``M*K`` components.
  By default it models the sum-pooled global feature, so there is no
  grouping and no step 1. With ``flat_input="parts"`` the mixture is shared
  by the features of every part and the embedding is the part-averaged
  posterior.
* ``baseline``: a linear compatibility map from global features, trained
  on semantic or flattened oracle targets.

The checkpoint uses the sectioned container in ``container``; see
``checkpoint_sections`` for the section list.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import container
from .attention import LAMBDA, ZETA, GroupingModel, forward_batch, global_features, init_grouping, prt_objective
from .datamodel import SEMANTIC, Codebook, Dataset
from .errors import ConfigError, FormatError, TrainingAborted
from .mixture import (
    EM_MAX_STEPS, EM_TOL, MixtureModel, class_average_pi, fit_mixture, flatten_pi, infer_pi_batch,
    mixture_from_responsibilities, pi_mean_grad, total_nll,
)
from .numerics import Adam, Parallel, rng_for
from .oracle import VisualOracle, dataset_pi
from .potentials import (
    ETA, HIDDEN, Classifier, CompatibilityBaseline, SemanticMapper, baseline_fit, baseline_predict,
    codebook_matrix, predict_semantic_batch, predict_visual_batch, sx_semantic_objective, xy_objective,
)

MODES = ("semantic", "visual", "visual-flat", "baseline")
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "prt", "xy", "sx", "nll", "em_steps")


@dataclass
class TrainConfig:
    mode: str = "visual"
    epochs: int = 10
    lr_step1: float = 1e-6
    lr_step2: float = 1e-5
    lam: float = LAMBDA
    zeta: float = ZETA
    eta: float = ETA
    M: int = 4
    K: int = 16
    hidden: int = HIDDEN
    em_period: int = 1
    em_max_steps: int = EM_MAX_STEPS
    em_tol: float = EM_TOL
    mapper_steps: int = 50
    eta_b: float = 1.0  # baseline hinge margin
    weight_decay: float = 1e-2  # baseline L2 penalty
    init_logit: float = 6.0
    normalize_codebook: bool = True
    margin_on_correct: bool = False
    theta_grad: bool = False
    flat_input: str = "global"  # visual-flat: "global" features or pooled "parts"
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not (self.lr_step1 > 0 and self.lr_step2 > 0):
            raise ConfigError("learning rates must be positive")
        if self.epochs < 0 or self.mapper_steps < 0:
            raise ConfigError("epoch and step counts must be non-negative")
        if self.M < 2 or self.K < 1:
            raise ConfigError("need M >= 2 parts and K >= 1 types")
        if self.flat_input not in ("global", "parts"):
            raise ConfigError(f"flat_input must be global or parts, got {self.flat_input!r}")
        if self.em_period < 1 or self.em_max_steps < 1:
            raise ConfigError("EM period and step cap must be at least 1")
        if self.eta < 0 or self.eta_b < 0 or self.weight_decay < 0 or self.hidden < 1:
            raise ConfigError("margins and weight decay must be non-negative, hidden width positive")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training options: {unknown}")
        return cls(**d)


@dataclass
class Checkpoint:
    config: TrainConfig
    classes: list  # seen classes, classifier row order
    mixture: MixtureModel | None = None
    grouping: GroupingModel | None = None
    classifier: Classifier | None = None
    mapper: SemanticMapper | None = None
    baseline: CompatibilityBaseline | None = None
    log: list = field(default_factory=list)
    source: str = "features"  # "features" (maps) or "parts" (given part features)
    version: int = CHECKPOINT_VERSION

    @property
    def mode(self):
        return self.config.mode


# --------------------------------------------------------------------------
# inputs


def _learner_inputs(dataset: Dataset, idx):
    if dataset.features is not None:
        return dataset.features[idx], "features"
    if dataset.parts is not None:
        return dataset.parts[idx], "parts"
    raise ConfigError("dataset has neither feature maps nor part features")


def global_input(X, source):
    """Attention-free representation used by the flat and baseline modes."""
    return global_features(X) if source == "features" else X.sum(axis=1)


def _parts(grouping, X, source, parallel):
    """Part features ``(n, M, C)``; a global source yields a single pseudo-part."""
    if source.startswith("global:"):
        return global_input(X, source[len("global:"):])[:, None, :]
    if source == "parts":
        return X
    return forward_batch(grouping, X, parallel)[0]


def embed(ckpt: Checkpoint, X, parallel=None):
    """Learner embeddings for raw inputs ``X`` (feature maps or part features).

    ``(n, M, K)`` for semantic/visual, ``(n, M*K)`` for visual-flat.
    """
    X = np.asarray(X, dtype=np.float64)
    if ckpt.mode == "baseline":
        raise ValueError("the baseline has no type-posterior embedding")
    F = _parts(ckpt.grouping, X, ckpt.source, parallel)
    if ckpt.mode == "visual-flat":
        return flat_embedding(ckpt.mixture, F)
    return infer_pi_batch(ckpt.mixture, F)[0]


def predict(ckpt: Checkpoint, X, codebook: Codebook, classes=None, parallel=None):
    """Predicted class ids for raw inputs against ``codebook`` restricted to ``classes``."""
    if ckpt.mode == "baseline":
        return baseline_predict(ckpt.baseline, global_input(np.asarray(X, dtype=np.float64),
                                                            ckpt.source), codebook, classes)
    pi = embed(ckpt, X, parallel)
    if ckpt.mode == "semantic":
        if codebook.kind != SEMANTIC:
            raise ConfigError("semantic mode needs a semantic codebook")
        return predict_semantic_batch(ckpt.mapper, pi.reshape(len(pi), -1), codebook, classes,
                                      ckpt.config.normalize_codebook)
    if not codebook.is_visual:
        raise ConfigError(f"{ckpt.mode} mode needs a visual codebook")
    return predict_visual_batch(pi, codebook, classes)


# --------------------------------------------------------------------------
# training


def em_refresh(mixture: MixtureModel, F, max_steps=EM_MAX_STEPS, tol=EM_TOL):
    """Warm-started EM on current part features ``F`` ``(n, M, C)``.

    Returns ``(MixtureModel, [EMTrace])``.
    """
    return fit_mixture(F, mixture.K, max_steps=max_steps, tol=tol, init=mixture)


def align_parts(F, targets):
    """Learner part order that best explains the oracle's per-part scores.

    Entry ``(m, j)`` of the cost is the mean NLL of learner part ``m`` under
    a mixture built from the oracle's part-``j`` scores; the assignment
    minimising the total is returned as ``order[j] = m``.
    """
    M = F.shape[1]
    cost = np.zeros((M, M))
    for m in range(M):
        for j in range(M):
            mix = mixture_from_responsibilities(F[:, m:m + 1], targets[:, j:j + 1])
            cost[m, j] = total_nll(mix, F[:, m:m + 1])
    rows, cols = linear_sum_assignment(cost)
    order = np.empty(M, dtype=np.int64)
    order[cols] = rows
    return order


def _check_supervision(config, supervision):
    if config.mode == "semantic":
        if not isinstance(supervision, Codebook) or supervision.kind != SEMANTIC:
            raise ConfigError("semantic mode needs a semantic codebook")
    elif config.mode in ("visual", "visual-flat"):
        if not isinstance(supervision, VisualOracle):
            raise ConfigError(f"{config.mode} mode needs a visual oracle")
    elif not (isinstance(supervision, VisualOracle)
              or (isinstance(supervision, Codebook) and supervision.kind == SEMANTIC)):
        raise ConfigError("baseline needs a semantic codebook or a visual oracle")


def _finite(epoch, **values):
    bad = {k: v for k, v in values.items() if v is not None and not np.isfinite(v)}
    if bad:
        raise TrainingAborted(f"non-finite loss at epoch {epoch}: {bad}", epoch,
                              {"epoch": epoch, **{k: float(v) for k, v in values.items()
                                                  if v is not None}})


def _oracle_targets(oracle, dataset, idx, config, parallel):
    """Oracle scores for the train split as ``(n, M, K)``, whatever the oracle's kind."""
    M, K = oracle.mixture.M, oracle.mixture.K
    if (M, K) != (config.M, config.K):
        raise ConfigError(f"oracle has M={M}, K={K}; config says M={config.M}, K={config.K}")
    T = dataset_pi(oracle, dataset, idx, parallel)
    return T if T.ndim == 3 else T.reshape(len(T), M, K) * M


def _pooled(F):
    return F.reshape(-1, 1, F.shape[-1])


def flat_embedding(mixture: MixtureModel, F):
    """Part-averaged posteriors of a shared mixture over all part features, ``(n, M*K)``."""
    n, M = F.shape[:2]
    return infer_pi_batch(mixture, _pooled(F))[0].reshape(n, M, -1).mean(axis=1)


def _flat_responsibilities(T):
    # part m's scores claim the m-th block of the shared components
    n, M, K = T.shape
    R = np.zeros((n, M, M * K))
    for m in range(M):
        R[:, m, m * K:(m + 1) * K] = T[:, m]
    return R.reshape(n * M, 1, M * K)


def train(dataset: Dataset, config: TrainConfig, supervision, parallel=None, log=None) -> Checkpoint:
    """Train a learner; ``supervision`` is a semantic Codebook or a VisualOracle.

    ``log`` (optional) is called with each per-epoch log row.
    """
    config.validate()
    _check_supervision(config, supervision)
    parallel = parallel or Parallel()
    idx = dataset.train_idx
    if len(idx) == 0:
        raise ConfigError("train split is empty")
    X, source = _learner_inputs(dataset, idx)
    labels = dataset.labels[idx]
    seen = sorted(set(labels.tolist()))
    y_idx = np.array([seen.index(c) for c in labels])
    n = len(idx)
    seed = config.seed
    if config.mode == "baseline":
        return _train_baseline(dataset, config, supervision, X, source, labels, seen, parallel)
    flat = config.mode == "visual-flat"
    if flat and config.flat_input == "global":
        source = "global:" + source

    C = X.shape[-1]
    if source == "parts" and X.shape[1] != config.M:
        raise ConfigError(f"dataset has {X.shape[1]} parts, config says M={config.M}")
    if C < config.M:
        raise ConfigError(f"{C} channels cannot be grouped into {config.M} parts")
    grouping = None
    if source == "features":
        grouping = init_grouping(X, config.M, seed, config.init_logit, name="learner-grouping")
    width = C if source.startswith("global:") else config.M * C
    clf = Classifier.init(seen, width, rng_for(seed, "learner-classifier"))
    opt_c = Adam(clf.params(), lr=config.lr_step2)
    opt_g = Adam(grouping.params(), lr=config.lr_step1) if grouping is not None else None

    mapper = targets = S = None
    if config.mode == "semantic":
        S = codebook_matrix(supervision, seen, config.normalize_codebook)
        mapper = SemanticMapper.init(config.M * config.K, S.shape[1], rng_for(seed, "learner-mapper"),
                                     config.hidden)
        opt_v = Adam(mapper.params(), lr=config.lr_step2)
    else:
        if config.theta_grad and flat:
            raise ConfigError("theta_grad is only available in visual mode")
        targets = _oracle_targets(supervision, dataset, idx, config, parallel)

    F = _parts(grouping, X, source, parallel)
    init = None
    if targets is not None:
        # align part order, then type indices, with the oracle's score lists
        if grouping is not None:
            order = align_parts(F, targets)
            grouping = GroupingModel(grouping.weight[order], grouping.bias[order])
            opt_g = Adam(grouping.params(), lr=config.lr_step1)
            F = F[:, order]
        if flat:
            R = (flatten_pi(targets)[:, None, :] if source.startswith("global:")
                 else _flat_responsibilities(targets))
            init = mixture_from_responsibilities(_pooled(F), R)
            targets = flatten_pi(targets)
        else:
            init = mixture_from_responsibilities(F, targets)
    mixture, traces = fit_mixture(_pooled(F) if flat else F, config.K * (config.M if flat else 1),
                                  seed=seed, max_steps=config.em_max_steps, tol=config.em_tol,
                                  init=init)
    opt_t = Adam({"means": mixture.means}, lr=config.lr_step2) if config.theta_grad else None

    rows = []
    for epoch in range(config.epochs):
        prt = None
        if grouping is not None:
            value, grads = prt_objective(grouping, X, config.lam, config.zeta, parallel)
            prt = value / n
            _finite(epoch, prt=prt)
            opt_g.step({k: v / n for k, v in grads.items()})

        # step 2: grouping frozen from here on
        F = _parts(grouping, X, source, parallel)
        em_steps = 0
        if epoch % config.em_period == 0:
            mixture, traces = em_refresh(mixture, _pooled(F) if flat else F, config.em_max_steps,
                                         config.em_tol)
            em_steps = max(t.steps for t in traces)
            if opt_t is not None:
                opt_t.params["means"] = mixture.means
                opt_t.states["means"].m[...] = 0.0
                opt_t.states["means"].v[...] = 0.0
        pi = flat_embedding(mixture, F) if flat else infer_pi_batch(mixture, F)[0]
        xy, g_clf, _ = xy_objective(clf, F.reshape(n, -1), y_idx)
        xy /= n
        opt_c.step({k: v / n for k, v in g_clf.items()}, sign=-1.0)
        if config.mode == "semantic":
            P = pi.reshape(n, -1)
            for _ in range(config.mapper_steps):
                sx, g_map = sx_semantic_objective(mapper, P, y_idx, S, config.eta,
                                                  config.margin_on_correct)
                opt_v.step({k: v / n for k, v in g_map.items()}, sign=-1.0)
            sx = sx_semantic_objective(mapper, P, y_idx, S, config.eta, config.margin_on_correct)[0] / n
        else:
            diff = targets - pi
            sx = -float(np.sum(diff * diff)) / n
            if opt_t is not None:
                g_theta = pi_mean_grad(mixture, F, pi, 2.0 * diff)
                opt_t.step({"means": g_theta / n}, sign=-1.0)
        nll = float(sum(t.nll[-1] if t.nll else t.initial_nll for t in traces))
        _finite(epoch, prt=prt, xy=xy, sx=sx, nll=nll)
        row = {"epoch": epoch, "prt": None if prt is None else float(prt), "xy": float(xy),
               "sx": float(sx), "nll": nll, "em_steps": int(em_steps)}
        rows.append(row)
        if log is not None:
            log(row)

    return Checkpoint(config, seen, mixture, grouping, clf, mapper, None, rows, source)


def _train_baseline(dataset, config, supervision, X, source, labels, seen, parallel):
    G = global_input(X, source)
    if isinstance(supervision, VisualOracle):
        T = dataset_pi(supervision, dataset, dataset.train_idx, parallel)
        T = flatten_pi(T) if T.ndim == 3 else T
        codebook = class_average_pi(T, labels, seen)
    else:
        # matrix() raises CoverageError when seen classes are missing
        codebook = Codebook(supervision.kind, dict(zip(seen, supervision.matrix(seen))))
    model, trace = baseline_fit(G, labels, codebook, seen, config.eta_b, config.epochs, config.lr_step2,
                                config.seed, config.normalize_codebook, config.margin_on_correct,
                                config.weight_decay)
    rows = [{"epoch": e, "prt": None, "xy": None, "sx": float(v), "nll": None, "em_steps": 0}
            for e, v in enumerate(trace)]
    for e, v in enumerate(trace):
        _finite(e, sx=v)
    return Checkpoint(config, seen, None, None, None, None, model, rows, source)


# --------------------------------------------------------------------------
# checkpoint I/O


def checkpoint_sections(ckpt: Checkpoint):
    """Sections, in file order: ``meta`` (JSON) then the parameter arrays present."""
    meta = {"kind": "learner", "version": ckpt.version, "config": asdict(ckpt.config),
            "classes": ckpt.classes, "log": ckpt.log, "source": ckpt.source}
    if ckpt.baseline is not None:
        b = ckpt.baseline
        meta["baseline"] = {"eta": b.eta, "normalize": b.normalize, "target_kind": b.target_kind}
    sections = [("meta", meta)]
    if ckpt.grouping is not None:
        sections += [("grouping.weight", ckpt.grouping.weight), ("grouping.bias", ckpt.grouping.bias)]
    if ckpt.mixture is not None:
        sections += [("mixture.means", ckpt.mixture.means), ("mixture.priors", ckpt.mixture.priors),
                     ("mixture.variances", ckpt.mixture.variances)]
    if ckpt.classifier is not None:
        sections += [("classifier.weight", ckpt.classifier.weight),
                     ("classifier.bias", ckpt.classifier.bias)]
    if ckpt.mapper is not None:
        sections += [(f"mapper.{k}", v) for k, v in ckpt.mapper.params().items()]
    if ckpt.baseline is not None:
        sections += [("baseline.weight", ckpt.baseline.weight), ("baseline.shift", ckpt.baseline.shift),
                     ("baseline.scale", ckpt.baseline.scale)]
    return sections


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    return container.encode_sections(checkpoint_sections(ckpt))


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    s = container.decode_sections(buf)
    meta = s.get("meta")
    if not isinstance(meta, dict) or meta.get("kind") != "learner":
        raise FormatError("not a learner checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported learner checkpoint version {meta.get('version')}")
    try:
        config = TrainConfig.from_dict(meta["config"])
        classes = meta["classes"]
        grouping = mixture = clf = mapper = baseline = None
        if "grouping.weight" in s:
            grouping = GroupingModel(s["grouping.weight"], s["grouping.bias"])
        if "mixture.means" in s:
            mixture = MixtureModel(s["mixture.means"], s["mixture.priors"], s["mixture.variances"])
        if "classifier.weight" in s:
            clf = Classifier(s["classifier.weight"], s["classifier.bias"], classes)
        if "mapper.w1" in s:
            mapper = SemanticMapper(s["mapper.w1"], s["mapper.b1"], s["mapper.w2"], s["mapper.b2"])
        if "baseline.weight" in s:
            b = meta["baseline"]
            baseline = CompatibilityBaseline(s["baseline.weight"], b["eta"], s["baseline.shift"],
                                             s["baseline.scale"], b["normalize"], b["target_kind"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"checkpoint is incomplete or inconsistent: {e}") from e
    return Checkpoint(config, classes, mixture, grouping, clf, mapper, baseline, meta["log"],
                      meta["source"], meta["version"])


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def write_log_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join("" if r[k] is None else repr(r[k]) for k in LOG_COLUMNS) + "\n")
