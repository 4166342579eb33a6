# -*- coding: utf-8 -*-

# Copyright 2026 defer-router developers
#
# Licensed under the Apache License, Version 2.0 (the "License"); you may
# not use this file except in compliance with the License. You may obtain
# a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
# WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
# License for the specific language governing permissions and limitations
# under the License.


import numpy as np

from defer_router import objects


BINARY_F1 = 'binary-f1'
MACRO_F1 = 'macro-f1'
OBJECTIVES = (BINARY_F1, MACRO_F1)


def base_prediction(distribution):
    """Returns the argmax class index; ties go to the lowest index."""
    if isinstance(distribution, objects.ProbabilityDistribution):
        distribution = distribution.probs
    # np.argmax returns the first occurrence of the maximum
    return int(np.argmax(np.asarray(distribution, dtype=float)))


def base_predictions(records):
    if not records:
        return np.zeros(0, dtype=np.int64)
    probs = np.array([r.base_probs.probs for r in records], dtype=float)
    return np.argmax(probs, axis=1).astype(np.int64)


def gold_labels(records):
    return np.array([r.gold for r in records], dtype=np.int64)


def expert_predictions(records):
    """Returns expert predictions with -1 where a record has none."""
    return np.array([-1 if r.expert_pred is None else r.expert_pred
                     for r in records], dtype=np.int64)


def _label_arrays(preds, golds):
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    golds = np.asarray(golds, dtype=np.int64).reshape(-1)
    if preds.size == 0 or golds.size == 0:
        raise objects.InvalidArgumentException(
            'Metrics need at least one prediction')
    if preds.size != golds.size:
        raise objects.InvalidArgumentException(
            'Got %d predictions for %d gold labels'
            % (preds.size, golds.size))
    if (preds < 0).any() or (golds < 0).any():
        raise objects.InvalidArgumentException(
            'Class indices must be nonnegative')
    return preds, golds


def _infer_k(preds, golds, minimum=2):
    return max(int(preds.max()) + 1, int(golds.max()) + 1, minimum)


def confusion_counts(preds, golds, K=None):
    preds, golds = _label_arrays(preds, golds)
    if K is None:
        K = _infer_k(preds, golds)
    elif _infer_k(preds, golds, 0) > K:
        raise objects.InvalidArgumentException(
            'Class index out of range for %d classes' % K)
    matrix = np.bincount(golds * K + preds, minlength=K * K)
    return objects.ConfusionCounts(matrix.reshape(K, K))


def per_class_f1(matrices):
    """Per-class F1 of one K x K matrix or a stack of them.

    F1 is 2TP / (2TP + FP + FN), and 0 when TP is 0.
    """
    matrices = np.asarray(matrices, dtype=float)
    tp = np.diagonal(matrices, axis1=-2, axis2=-1)
    fp = matrices.sum(axis=-2) - tp
    fn = matrices.sum(axis=-1) - tp
    denom = 2.0 * tp + fp + fn
    with np.errstate(divide='ignore', invalid='ignore'):
        f1 = np.where(tp > 0, 2.0 * tp / np.where(denom > 0, denom, 1.0),
                      0.0)
    return f1


def per_class_scores(counts):
    """Returns (precision, recall, f1) per class, 0 where undefined."""
    matrix = np.asarray(getattr(counts, 'matrix', counts), dtype=float)
    tp = np.diagonal(matrix)
    predicted = matrix.sum(axis=0)
    actual = matrix.sum(axis=1)
    f1 = per_class_f1(matrix)
    scores = []
    for i in range(matrix.shape[0]):
        precision = tp[i] / predicted[i] if predicted[i] else 0.0
        recall = tp[i] / actual[i] if actual[i] else 0.0
        scores.append((float(precision), float(recall), float(f1[i])))
    return scores


def accuracy(preds, golds):
    preds, golds = _label_arrays(preds, golds)
    return float(np.mean(preds == golds))


def _resolve_positive(preds, golds, positive_index):
    if positive_index is None:
        if _infer_k(preds, golds) > 2:
            raise objects.InvalidArgumentException(
                'Binary F1 on multi-class labels needs a positive class')
        positive_index = 1
    return positive_index


def binary_f1(preds, golds, positive_index=None):
    preds, golds = _label_arrays(preds, golds)
    positive_index = _resolve_positive(preds, golds, positive_index)
    tp = np.sum((preds == positive_index) & (golds == positive_index))
    fp = np.sum((preds == positive_index) & (golds != positive_index))
    fn = np.sum((preds != positive_index) & (golds == positive_index))
    if tp == 0:
        return 0.0
    return float(2.0 * tp / (2.0 * tp + fp + fn))


def precision_recall(preds, golds, positive_index=1):
    preds, golds = _label_arrays(preds, golds)
    tp = np.sum((preds == positive_index) & (golds == positive_index))
    predicted = np.sum(preds == positive_index)
    actual = np.sum(golds == positive_index)
    precision = float(tp / predicted) if predicted else 0.0
    recall = float(tp / actual) if actual else 0.0
    return precision, recall


def macro_f1(preds, golds, K):
    # Classes absent from both preds and golds count as F1 = 0.
    counts = confusion_counts(preds, golds, K)
    return float(np.mean(per_class_f1(counts.matrix)))


class Objective(object):
    """The metric the combined system is tuned and reported on."""

    def __init__(self, kind, K, positive_index=None):
        if kind not in OBJECTIVES:
            raise objects.InvalidArgumentException(
                'Unknown objective %r, expected one of: %s'
                % (kind, ', '.join(OBJECTIVES)))
        if K < 2:
            raise objects.InvalidArgumentException(
                'Objectives need at least 2 classes')
        if kind == BINARY_F1:
            if positive_index is None:
                if K != 2:
                    raise objects.InvalidArgumentException(
                        'Binary F1 on %d classes needs a positive class' % K)
                positive_index = 1
            if not 0 <= positive_index < K:
                raise objects.InvalidArgumentException(
                    'Positive index %r out of range' % (positive_index,))
        self.kind = kind
        self.K = K
        self.positive_index = positive_index

    @classmethod
    def binary_f1(cls, positive_index=None, K=2):
        return cls(BINARY_F1, K, positive_index)

    @classmethod
    def macro_f1(cls, K):
        return cls(MACRO_F1, K)

    @classmethod
    def for_label_space(cls, name, label_space):
        if name == BINARY_F1:
            return cls.binary_f1(label_space.positive_index, label_space.K)
        return cls(name, label_space.K)

    @property
    def name(self):
        return self.kind

    def score(self, preds, golds):
        if self.kind == BINARY_F1:
            return binary_f1(preds, golds, self.positive_index)
        return macro_f1(preds, golds, self.K)

    def score_counts(self, matrices):
        """Scores a K x K matrix or a stack of them in one pass."""
        f1 = per_class_f1(matrices)
        if self.kind == BINARY_F1:
            return f1[..., self.positive_index]
        return f1.mean(axis=-1)

    def __repr__(self):
        return 'Objective(%r, K=%d, positive_index=%r)' % (
            self.kind, self.K, self.positive_index)
