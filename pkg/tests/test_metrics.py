import math

import numpy as np
import pytest

from lesionkit.metrics import (EPS, attribute_score, balanced_accuracy, bce_soft_jaccard_grad,
                               bce_soft_jaccard_loss, class_weights, confusion_matrix, jaccard, soft_jaccard,
                               threshold_jaccard, weighted_cross_entropy)

import oracles


def block(shift=0):
    m = np.zeros((4, 5), bool)
    m[1:3, 1 + shift:3 + shift] = True
    return m


def test_jaccard_examples():
    a = block()
    assert jaccard(a, a) == 1.0
    assert jaccard(a, np.roll(a, 2, axis=1)) == 0.0
    assert jaccard(a, block(1)) == pytest.approx(1 / 3, abs=1e-15)
    assert jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ValueError):
        jaccard(np.zeros((3, 3)), np.zeros((3, 4)))


def test_threshold_jaccard_examples(rng):
    a = block()
    assert threshold_jaccard(a, a, 0.99) == 1.0
    assert threshold_jaccard(a, block(1), 0.65) == 0.0
    for _ in range(50):
        x, y = rng.random((2, 6, 6)) < 0.5
        assert threshold_jaccard(x, y, 0.0) == jaccard(x, y)
        assert threshold_jaccard(x, y) <= jaccard(x, y)
    with pytest.raises(ValueError):
        threshold_jaccard(a, a, 1.5)


def test_jaccard_properties(rng):
    for _ in range(100):
        a, b = rng.random((2, 5, 7)) < rng.uniform(0.1, 0.9)
        j = jaccard(a, b)
        assert j == jaccard(b, a) and 0 <= j <= 1 and jaccard(a, a) == 1.0
        assert j == oracles.jaccard(a.ravel().tolist(), b.ravel().tolist())


def test_soft_jaccard_on_binary(rng):
    a, b = rng.random((2, 8, 8)) < 0.5
    assert soft_jaccard(a.astype(float), b.astype(float)) == pytest.approx(jaccard(a, b), abs=1e-8)


def test_loss_perfect_prediction(rng):
    g = (rng.random((8, 8)) < 0.5).astype(float)
    assert bce_soft_jaccard_loss(g, g) <= 2 * -math.log(1 - EPS)


def test_loss_weight_zero_is_bce(rng):
    p = rng.uniform(0.01, 0.99, (6, 6))
    g = (rng.random((6, 6)) < 0.5).astype(float)
    ref = np.mean([-(gi * math.log(pi) + (1 - gi) * math.log(1 - pi)) for pi, gi in zip(p.ravel(), g.ravel())])
    assert bce_soft_jaccard_loss(p, g, 0.0) == pytest.approx(ref, abs=1e-12)


def test_loss_oracle_and_finite(rng):
    for _ in range(50):
        p = rng.random((8, 8))
        g = (rng.random((8, 8)) < 0.5).astype(float)
        ref = oracles.bce_soft_jaccard(p.ravel().tolist(), g.ravel().tolist(), 1.0, EPS)
        assert abs(bce_soft_jaccard_loss(p, g) - ref) <= 1e-9
    assert np.isfinite(bce_soft_jaccard_loss(np.zeros((3, 3)), np.ones((3, 3))))
    assert np.isfinite(bce_soft_jaccard_loss(np.ones((3, 3)), np.zeros((3, 3))))
    with pytest.raises(ValueError):
        bce_soft_jaccard_loss(np.zeros(3), np.zeros(4))


def test_loss_gradient_finite_difference(rng):
    for _ in range(20):
        p = rng.uniform(0.05, 0.95, (4, 4))
        g = (rng.random((4, 4)) < 0.5).astype(float)
        ana = bce_soft_jaccard_grad(p, g)
        num = np.zeros_like(p)
        h = 1e-6
        for idx in np.ndindex(p.shape):
            up, dn = p.copy(), p.copy()
            up[idx] += h
            dn[idx] -= h
            num[idx] = (bce_soft_jaccard_loss(up, g) - bce_soft_jaccard_loss(dn, g)) / (2 * h)
        assert np.allclose(num, ana, rtol=1e-4, atol=1e-8)


def test_class_weights():
    assert np.array_equal(class_weights([100, 50, 25]), [1, 2, 4])
    assert np.array_equal(class_weights([7, 7, 7]), [1, 1, 1])
    w = class_weights([6705, 115])
    assert w[0] == 1.0 and abs(w[1] - 58.3) <= 0.05
    assert np.allclose(class_weights(np.array([3, 9, 5]) * 17), class_weights([3, 9, 5]), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        class_weights([5, 0])


def test_weighted_ce_examples():
    onehot = np.eye(3)
    assert weighted_cross_entropy(onehot, [0, 1, 2], [1, 2, 4]) == pytest.approx(0.0, abs=1e-12)
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4], [0.5, 0.25, 0.25], [0.2, 0.2, 0.6]])
    labels = [0, 1, 2, 1, 0]
    plain = -(math.log(0.7) + math.log(0.8) + math.log(0.4) + math.log(0.25) + math.log(0.2)) / 5
    assert weighted_cross_entropy(probs, labels) == pytest.approx(plain, abs=1e-12)
    weighted = -(1 * math.log(0.7) + 2 * math.log(0.8) + 4 * math.log(0.4) + 2 * math.log(0.25)
                 + 1 * math.log(0.2)) / 5
    assert weighted_cross_entropy(probs, labels, [1, 2, 4]) == pytest.approx(weighted, abs=1e-12)
    with pytest.raises(ValueError):
        weighted_cross_entropy(probs, [0, 1, 2, 3, 0])


def test_balanced_accuracy_examples(rng):
    assert balanced_accuracy(np.diag([3, 5, 1])) == 1.0
    assert balanced_accuracy([[9, 1], [5, 5]]) == pytest.approx(0.7, abs=1e-15)
    y = rng.integers(0, 5, 200_000)
    assert abs(balanced_accuracy(confusion_matrix(y, rng.integers(0, 5, y.size), 5)) - 0.2) < 0.01
    with pytest.raises(ValueError):
        balanced_accuracy([[1, 0], [0, 0]])


def test_balanced_accuracy_support_invariance(rng):
    y = rng.integers(0, 4, 100)
    p = rng.integers(0, 4, 100)
    base = balanced_accuracy(confusion_matrix(y, p, 4))
    rep = np.where(y == 2, 3, 1)
    scaled = balanced_accuracy(confusion_matrix(np.repeat(y, rep), np.repeat(p, rep), 4))
    assert scaled == pytest.approx(base, abs=1e-15)
    assert base == pytest.approx(oracles.balanced_accuracy(y.tolist(), p.tolist(), 4), abs=1e-12)


def test_confusion_merge(rng):
    y, p = rng.integers(0, 3, (2, 60))
    assert np.array_equal(confusion_matrix(y[:25], p[:25], 3) + confusion_matrix(y[25:], p[25:], 3),
                          confusion_matrix(y, p, 3))


def test_attribute_score(rng):
    gt = [rng.random((5, 6, 6)) < 0.3 for _ in range(3)]
    assert attribute_score(gt, gt) == 1.0
    empty = [np.zeros((5, 4, 4), bool)] * 2
    assert attribute_score(empty, empty) == 1.0
    pred = [rng.random((5, 6, 6)) < 0.3 for _ in range(2)]
    ref = oracles.pooled_attribute_score([[m.ravel().tolist() for m in x] for x in pred],
                                         [[m.ravel().tolist() for m in x] for x in gt[:2]])
    assert attribute_score(pred, gt[:2]) == pytest.approx(ref, abs=1e-12)
    per_image = np.mean([np.mean([jaccard(p[k], g[k]) for p, g in zip(pred, gt[:2])]) for k in range(5)])
    assert attribute_score(pred, gt[:2], pooled=False) == pytest.approx(per_image, abs=1e-12)
    with pytest.raises(ValueError):
        attribute_score(pred, gt)
