"""Visual oracle: an independent part model whose type posteriors act as supervision.

The oracle owns its grouping weights, label classifier and mixture. None of
these ever enter a learner checkpoint. Independence from the learner comes
from a separate seed stream and a fixed random permutation of the input
channels, so the two models do not share parameter coordinates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .attention import LAMBDA, ZETA, GroupingModel, backward, forward_batch, init_grouping, loss_prt_maps
from .datamodel import Codebook, Dataset
from .errors import ConfigError, FormatError, TrainingAborted
from .mixture import EM_MAX_STEPS, EM_TOL, MixtureModel, class_average_pi, fit_mixture, flatten_pi, infer_pi_batch
from .numerics import Adam, Parallel, rng_for
from .potentials import Classifier, xy_objective

STRUCTURED = "structured"
FLAT = "flat"


@dataclass
class OracleConfig:
    M: int = 4
    K: int = 16
    epochs: int = 20
    lr: float = 1e-5
    lam: float = LAMBDA
    zeta: float = ZETA
    em_max_steps: int = EM_MAX_STEPS
    em_tol: float = EM_TOL
    permute: bool = True
    init_logit: float = 6.0
    kind: str = STRUCTURED

    def validate(self):
        if self.M < 2 or self.K < 1:
            raise ConfigError("oracle needs M >= 2 and K >= 1")
        if self.epochs < 0 or not self.lr > 0:
            raise ConfigError("oracle epochs must be >= 0 and lr > 0")
        if self.kind not in (STRUCTURED, FLAT):
            raise ConfigError(f"unknown oracle kind {self.kind!r}")


@dataclass
class VisualOracle:
    mixture: MixtureModel
    grouping: GroupingModel | None  # None when fitted on given part features
    permutation: np.ndarray  # channel order applied to incoming feature maps
    kind: str = STRUCTURED
    seed: int = 0
    source: str = "features"
    nll: list = field(default_factory=list)  # per part: EM trace of mean NLL

    def part_features(self, E=None, parts=None, parallel=None):
        if self.grouping is None:
            if parts is None:
                raise ValueError("this oracle was fitted on part features; pass parts")
            parts = np.asarray(parts, dtype=np.float64)
            if parts.shape[1:] != (self.mixture.M, self.mixture.C):
                raise ValueError(f"part features {parts.shape[1:]} do not match the oracle")
            return parts
        if E is None:
            raise ValueError("oracle needs feature maps")
        E = np.asarray(E, dtype=np.float64)
        if E.shape[-1] != len(self.permutation):
            raise ValueError(f"feature maps have {E.shape[-1]} channels, oracle expects "
                             f"{len(self.permutation)}")
        return forward_batch(self.grouping, E[..., self.permutation], parallel)[0]


def _inputs(dataset: Dataset, idx):
    if dataset.features is not None:
        return dataset.features[idx], None
    if dataset.parts is not None:
        return None, dataset.parts[idx]
    raise ConfigError("dataset has neither feature maps nor part features")


def build_oracle(dataset: Dataset, config: OracleConfig | None = None, seed=0, parallel=None,
                 log=None) -> VisualOracle:
    """Train the oracle's grouping and classifier on the train split, then fit its mixture.

    Grouping and classifier jointly maximise the label log-likelihood minus
    the part loss. With no feature maps in the dataset the oracle is fitted
    directly on its part features and no grouping is learned.
    """
    config = config or OracleConfig()
    config.validate()
    parallel = parallel or Parallel()
    idx = dataset.train_idx
    if len(idx) == 0:
        raise ConfigError("train split is empty")
    E, parts = _inputs(dataset, idx)
    labels = dataset.labels[idx]
    C = (E if E is not None else parts).shape[-1]
    if parts is not None and parts.shape[1] != config.M:
        raise ConfigError(f"dataset has {parts.shape[1]} parts, oracle config says {config.M}")
    if C < config.M:
        raise ConfigError(f"{C} channels cannot be grouped into {config.M} parts")

    perm = rng_for(seed, "oracle-permutation").permutation(C) if config.permute else np.arange(C)
    grouping = None
    if E is not None:
        Ep = np.ascontiguousarray(E[..., perm])
        grouping = init_grouping(Ep, config.M, seed, config.init_logit, name="oracle-grouping")
        seen = sorted(set(labels.tolist()))
        clf = Classifier.init(seen, config.M * C, rng_for(seed, "oracle-classifier"))
        y_idx = np.array([seen.index(c) for c in labels])
        opt_g = Adam(grouping.params(), lr=config.lr)
        opt_c = Adam(clf.params(), lr=config.lr)
        n = len(idx)
        for epoch in range(config.epochs):
            f, A = forward_batch(grouping, Ep, parallel)
            xy, g_clf, df = xy_objective(clf, f.reshape(n, -1), y_idx)
            prt, dA = loss_prt_maps(A, config.lam, config.zeta)
            objective = (xy - prt) / n
            if not np.isfinite(objective):
                raise TrainingAborted(f"oracle objective is {objective}", epoch,
                                      {"xy": xy, "prt": prt})
            g_grp = backward(grouping, Ep, A, dA=-dA, df=df.reshape(f.shape))
            opt_g.step({k: v / n for k, v in g_grp.items()}, sign=-1.0)
            opt_c.step({k: v / n for k, v in g_clf.items()}, sign=-1.0)
            if log is not None:
                log(epoch, xy / n, prt / n)
        F = forward_batch(grouping, Ep, parallel)[0]
        source = "features"
    else:
        F = parts
        source = "parts"
    mixture, traces = fit_mixture(F, config.K, seed=seed, max_steps=config.em_max_steps,
                                  tol=config.em_tol)
    return VisualOracle(mixture, grouping, np.asarray(perm, dtype=np.int64), config.kind, int(seed),
                        source, [[t.initial_nll] + list(t.nll) for t in traces])


def oracle_pi_batch(oracle: VisualOracle, E=None, parts=None, parallel=None):
    """Oracle embeddings ``(n, M, K)``, or ``(n, M*K)`` for a flat oracle."""
    pi, _ = infer_pi_batch(oracle.mixture, oracle.part_features(E, parts, parallel))
    return flatten_pi(pi) if oracle.kind == FLAT else pi


def oracle_pi(oracle: VisualOracle, feature_map=None, parts=None):
    """Score list for one instance: a row-stochastic ``(M, K)`` matrix or its flattening."""
    E = None if feature_map is None else np.asarray(feature_map)[None]
    P = None if parts is None else np.asarray(parts)[None]
    return oracle_pi_batch(oracle, E, P)[0]


def dataset_pi(oracle: VisualOracle, dataset: Dataset, idx=None, parallel=None):
    idx = np.arange(len(dataset)) if idx is None else np.asarray(idx)
    if oracle.grouping is None:
        if dataset.parts is None:
            raise ConfigError("oracle needs part features but the dataset has none")
        return oracle_pi_batch(oracle, parts=dataset.parts[idx], parallel=parallel)
    if dataset.features is None:
        raise ConfigError("oracle needs feature maps but the dataset has none")
    return oracle_pi_batch(oracle, dataset.features[idx], parallel=parallel)


def oracle_codebook(oracle: VisualOracle, dataset: Dataset, classes=None, parallel=None) -> Codebook:
    """Class-averaged oracle embeddings over every instance of each class.

    The oracle, unlike the learner, sees unseen-class instances here.
    """
    classes = dataset.classes if classes is None else sorted(int(c) for c in classes)
    empty = [c for c in classes if not np.any(dataset.labels == c)]
    if empty:
        raise ValueError(f"classes without instances: {empty}")
    keep = np.flatnonzero(np.isin(dataset.labels, classes))
    pis = dataset_pi(oracle, dataset, keep, parallel)
    return class_average_pi(pis, dataset.labels[keep], classes)


# --------------------------------------------------------------------------
# serialisation


def oracle_sections(oracle: VisualOracle, config: OracleConfig | None = None):
    meta = {"kind": "oracle", "oracle_kind": oracle.kind, "seed": oracle.seed,
            "source": oracle.source, "nll": oracle.nll,
            "config": asdict(config) if config is not None else None}
    sections = [("meta", meta), ("permutation", oracle.permutation),
                ("mixture.means", oracle.mixture.means), ("mixture.priors", oracle.mixture.priors),
                ("mixture.variances", oracle.mixture.variances)]
    if oracle.grouping is not None:
        sections += [("grouping.weight", oracle.grouping.weight),
                     ("grouping.bias", oracle.grouping.bias)]
    return sections


def save_oracle(oracle: VisualOracle, path, config: OracleConfig | None = None):
    container.write_sections(path, oracle_sections(oracle, config))


def load_oracle(path) -> VisualOracle:
    s = container.read_sections(path)
    meta = s.get("meta")
    if not isinstance(meta, dict) or meta.get("kind") != "oracle":
        raise FormatError(f"{path} is not an oracle file")
    try:
        grouping = None
        if "grouping.weight" in s:
            grouping = GroupingModel(s["grouping.weight"], s["grouping.bias"])
        mixture = MixtureModel(s["mixture.means"], s["mixture.priors"], s["mixture.variances"])
        return VisualOracle(mixture, grouping, s["permutation"], meta["oracle_kind"], meta["seed"],
                            meta["source"], meta["nll"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"oracle file {path} is incomplete: {e}") from e
