import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vsezsl.datamodel import SEMANTIC, VISUAL, VISUAL_FLAT, Codebook
from vsezsl.errors import CoverageError
from vsezsl.numerics import check_gradient
from vsezsl.potentials import (
    ETA, HIDDEN, Classifier, SemanticMapper, baseline_fit, baseline_predict, codebook_matrix,
    hinge_scores, phi_sx_semantic, phi_sx_visual, phi_xy, phi_ys, predict_semantic,
    predict_semantic_batch, predict_visual, predict_visual_batch, sx_semantic_objective, xy_objective,
)


def test_phi_ys():
    assert phi_ys(3, 3) == 1 and phi_ys(3, 4) == 0 and phi_ys(4, 3) == phi_ys(3, 4)


def test_defaults():
    assert ETA == 0.2 and HIDDEN == 256


def test_phi_xy_uniform_logits():
    clf = Classifier(np.zeros((10, 6)), np.zeros(10), list(range(10)))
    value, _ = phi_xy(clf, np.ones(6), 4)
    assert value == pytest.approx(-math.log(10))
    assert value == pytest.approx(-2.3026, abs=1e-4)


def test_phi_xy_confident_limit():
    clf = Classifier(np.zeros((3, 2)), np.array([0.0, 60.0, 0.0]), [0, 1, 2])
    assert phi_xy(clf, np.zeros(2), 1)[0] == pytest.approx(0.0, abs=1e-20)


def test_phi_xy_unseen_class():
    clf = Classifier(np.zeros((2, 2)), np.zeros(2), [0, 1])
    with pytest.raises(ValueError):
        phi_xy(clf, np.zeros(2), 5)


@pytest.mark.parametrize("seed", range(3))
def test_phi_xy_gradients(seed):
    r = np.random.default_rng(seed)
    clf = Classifier(r.normal(size=(4, 5)), r.normal(size=4), [0, 3, 5, 9])
    F = r.normal(size=(6, 5))
    y = r.integers(0, 4, size=6)
    _, g, dF = xy_objective(clf, F, y)
    assert check_gradient(lambda w: xy_objective(Classifier(w, clf.bias, clf.classes), F, y)[0],
                          clf.weight, g["weight"]) < 1e-4
    assert check_gradient(lambda b: xy_objective(Classifier(clf.weight, b, clf.classes), F, y)[0],
                          clf.bias, g["bias"]) < 1e-4
    assert check_gradient(lambda x: xy_objective(clf, x, y)[0], F, dF) < 1e-4


def test_hinge_two_classes_equal_scores():
    value, _ = hinge_scores(np.array([[0.4, 0.4]]), np.array([0]), 0.1)
    assert value == pytest.approx(-0.1)


def test_hinge_satisfied_margins_is_zero():
    value, ds = hinge_scores(np.array([[1.0, 0.5, 0.7]]), np.array([0]), 0.2)
    assert value == 0.0 and np.all(ds == 0)


def test_hinge_literal_margin_changes_gradient():
    # margin on the true label: hinges are eta + s_y - s_y, eta + s_y' - s_y
    scores = np.array([[1.0, 0.9]])
    v0, d0 = hinge_scores(scores, np.array([0]), 0.2)
    v1, d1 = hinge_scores(scores, np.array([0]), 0.2, margin_on_correct=True)
    assert v0 == pytest.approx(-0.1)
    assert v1 == pytest.approx(-0.2)
    assert not np.array_equal(d0, d1)


@settings(max_examples=50)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.floats(0, 1))
def test_hinge_nonpositive(scores, eta):
    value, _ = hinge_scores(scores, np.array([0, 1, 3]), eta)
    assert value <= 0


def _mapper(r, d_in=6, d_out=5, hidden=7):
    return SemanticMapper.init(d_in, d_out, r, hidden)


def _off_kink(mapper, X, y, S, eta, gap=1e-3):
    v, pre, _ = mapper.forward(X)
    sc = v @ S.T
    h = eta * (np.arange(S.shape[0])[None] != y[:, None]) + sc - sc[np.arange(len(y)), y][:, None]
    h[np.arange(len(y)), y] = 1.0  # the true-label term is identically zero
    return np.abs(pre).min() > gap and np.abs(h).min() > gap


@pytest.mark.parametrize("seed", range(3))
def test_semantic_hinge_gradients(seed):
    r = np.random.default_rng(seed)
    while True:
        mapper = _mapper(r)
        X = r.dirichlet(np.ones(6), size=4)
        S = r.normal(size=(3, 5))
        y = r.integers(0, 3, size=4)
        if _off_kink(mapper, X, y, S, 0.2):
            break
    _, g = sx_semantic_objective(mapper, X, y, S, 0.2)
    for k in ("w1", "b1", "w2", "b2"):
        def loss(p, k=k):
            params = dict(mapper.params())
            params[k] = p
            return sx_semantic_objective(SemanticMapper(**params), X, y, S, 0.2)[0]
        assert check_gradient(loss, mapper.params()[k], g[k]) < 1e-4


def test_phi_sx_semantic_needs_class():
    r = np.random.default_rng(0)
    cb = Codebook(SEMANTIC, {0: r.normal(size=5), 1: r.normal(size=5)})
    with pytest.raises(ValueError):
        phi_sx_semantic(_mapper(r), np.ones(6) / 6, 4, cb)
    with pytest.raises(CoverageError):
        phi_sx_semantic(_mapper(r), np.ones(6) / 6, 0, cb, classes=[0, 1, 2])


def test_frobenius_examples():
    pi = np.array([[0.5, 0.5], [0.2, 0.8]])
    assert phi_sx_visual(pi, pi)[0] == 0.0
    t = pi.copy()
    t[1, 0] += 0.3
    assert phi_sx_visual(t, pi)[0] == pytest.approx(-0.09)
    d = np.array([[0.1, -0.2], [0.0, 0.3]])
    assert phi_sx_visual(pi + d, pi)[0] == pytest.approx(-0.14)


def test_frobenius_shape_mismatch():
    with pytest.raises(ValueError):
        phi_sx_visual(np.zeros((2, 2)), np.zeros(4))


@pytest.mark.parametrize("seed", range(3))
def test_frobenius_gradient(seed):
    r = np.random.default_rng(seed)
    t, p = r.dirichlet(np.ones(3), size=(2, 2))
    _, g = phi_sx_visual(t, p)
    assert check_gradient(lambda x: phi_sx_visual(t, x)[0], p, g) < 1e-4


@settings(max_examples=50)
@given(arrays(np.float64, (2, 3), elements=st.floats(0, 1).map(lambda x: round(x, 6))),
       arrays(np.float64, (2, 3), elements=st.floats(0, 1).map(lambda x: round(x, 6))))
def test_frobenius_nonpositive(a, b):
    v, _ = phi_sx_visual(a, b)
    assert v <= 0 and (v == 0) == np.array_equal(a, b)


class _Identity(SemanticMapper):
    def __init__(self, d):
        super().__init__(np.eye(d), np.zeros(d), np.eye(d), np.zeros(d))


def test_predict_semantic_one_class():
    cb = Codebook(SEMANTIC, {7: [1.0, 2.0]})
    assert predict_semantic(_Identity(2), np.array([0.3, 0.1]), cb) == 7


def test_predict_semantic_self_match():
    cb = Codebook(SEMANTIC, {0: [1.0, 0.0, 0.0], 1: [0.0, 1.0, 0.0], 2: [0.0, 0.6, 0.8]})
    S = codebook_matrix(cb, normalize=True)
    for i, c in enumerate(cb.classes):
        assert predict_semantic(_Identity(3), S[i], cb) == c


def test_predict_semantic_tie_goes_to_smaller_id():
    cb = Codebook(SEMANTIC, {5: [1.0, 0.0], 2: [1.0, 0.0], 9: [0.0, 1.0]})
    assert predict_semantic(_Identity(2), np.array([1.0, 0.0]), cb) == 2


def test_predict_semantic_shift_invariant():
    # a constant added to every score: extra attribute equal in every row
    r = np.random.default_rng(0)
    base = {c: r.normal(size=3) for c in range(4)}
    X = r.normal(size=(20, 4))
    a = Codebook(SEMANTIC, {c: np.append(v, 0.0) for c, v in base.items()})
    b = Codebook(SEMANTIC, {c: np.append(v, 2.5) for c, v in base.items()})
    X[:, 3] = 1.0
    assert np.array_equal(predict_semantic_batch(_Identity(4), X, a, normalize=False),
                          predict_semantic_batch(_Identity(4), X, b, normalize=False))


def test_predict_semantic_empty_codebook():
    with pytest.raises(ValueError):
        predict_semantic(_Identity(2), np.zeros(2), Codebook(SEMANTIC, {}))


def _visual_book(r, classes, M=2, K=3):
    return Codebook(VISUAL, {c: r.dirichlet(np.ones(K), size=M) for c in classes})


def test_predict_visual_exact_entry():
    r = np.random.default_rng(1)
    cb = _visual_book(r, [3, 4, 8])
    for c in cb.classes:
        assert predict_visual(cb.entries[c], cb) == c


def test_predict_visual_equidistant():
    cb = Codebook(VISUAL_FLAT, {6: [1.0, 0.0], 4: [0.0, 1.0]})
    assert predict_visual(np.array([0.5, 0.5]), cb) == 4


def test_predict_visual_relabel_equivariant():
    r = np.random.default_rng(2)
    cb = _visual_book(r, range(5))
    perm = [3, 0, 4, 1, 2]
    relabel = Codebook(VISUAL, {perm[c]: v for c, v in cb.entries.items()})
    P = r.dirichlet(np.ones(3), size=(30, 2))
    a = predict_visual_batch(P, cb)
    b = predict_visual_batch(P, relabel)
    assert np.array_equal(np.array(perm)[a], b)


def test_predict_visual_shape_mismatch():
    r = np.random.default_rng(3)
    with pytest.raises(ValueError):
        predict_visual(np.ones((3, 3)) / 3, _visual_book(r, [0, 1]))


def test_predict_visual_zero_noise_accuracy():
    from vsezsl.datamodel import generate_synthetic
    from vsezsl.mixture import MixtureModel, infer_pi_batch
    ds, planted = generate_synthetic(noise=0.0, per_class=10)
    model = MixtureModel(planted.prototypes, np.full((4, 8), 1 / 8), np.ones(4))
    pi, _ = infer_pi_batch(model, ds.parts)
    assert np.array_equal(predict_visual_batch(pi, ds.visual_codebook), ds.labels)


def test_baseline_one_class():
    X = np.random.default_rng(0).normal(size=(5, 3))
    cb = Codebook(SEMANTIC, {4: [1.0, 2.0]})
    model, _ = baseline_fit(X, [4] * 5, cb, epochs=5)
    assert np.all(baseline_predict(model, X, cb) == 4)


def test_baseline_separable_train_accuracy():
    r = np.random.default_rng(1)
    centers = r.normal(scale=5, size=(4, 6))
    labels = np.repeat(np.arange(4), 25)
    X = centers[labels] + r.normal(size=(100, 6))
    cb = Codebook(SEMANTIC, {c: v for c, v in enumerate(np.eye(4))})
    model, trace = baseline_fit(X, labels, cb, eta=1.0, epochs=300, lr=1e-2)
    assert np.mean(baseline_predict(model, X, cb) == labels) == 1.0
    assert trace[-1] >= trace[0]


def test_baseline_rejects_wrong_target_kind():
    X = np.random.default_rng(0).normal(size=(4, 3))
    cb = Codebook(SEMANTIC, {0: [1.0, 0.0], 1: [0.0, 1.0]})
    model, _ = baseline_fit(X, [0, 1, 0, 1], cb, epochs=2)
    with pytest.raises(ValueError):
        baseline_predict(model, X, Codebook(VISUAL_FLAT, {0: [1.0, 0.0], 1: [0.0, 1.0]}))


def test_baseline_gradient():
    # the update direction is the gradient of the mean hinge
    r = np.random.default_rng(2)
    X = r.normal(size=(8, 4))
    labels = r.integers(0, 3, size=8)
    S = r.normal(size=(3, 2))
    W = r.normal(size=(2, 4))
    y = labels

    def loss(w):
        return hinge_scores(X @ w.T @ S.T, y, 0.5)[0]

    _, ds = hinge_scores(X @ W.T @ S.T, y, 0.5)
    assert check_gradient(loss, W, S.T @ ds.T @ X) < 1e-4
