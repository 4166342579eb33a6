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


import collections
import enum
import json
import logging
import math

import numpy as np
from scipy import optimize
from scipy import special

from defer_router import common
from defer_router import features
from defer_router import metrics
from defer_router import objects
from defer_router import validator


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Dimensions with a smaller population std are left unscaled.
MIN_STD = 1e-12

# Deferral probabilities are clipped to [PROB_EPS, 1 - PROB_EPS], so a
# threshold of 1.0 never defers.
PROB_EPS = 1e-15

# Candidate threshold above every probability; selecting it means no row
# is deferred.
NEVER_DEFER = 1.0 + 1e-9

KFOLD = 'kfold'
SINGLE_FIT = 'single-fit'
MODES = (KFOLD, SINGLE_FIT)

BALANCED = 'balanced'
UNWEIGHTED = 'none'
CLASS_WEIGHTINGS = (BALANCED, UNWEIGHTED)

# L-BFGS-B stops on relative objective reduction below this; the gradient
# tolerance from TrainingConfig is the primary criterion.
_FTOL = 1e-12


class InsufficientDataException(ValueError):
    pass


class DegenerateLabelsException(ValueError):
    pass


class ModelFormatException(ValueError):
    pass


class ErrorLabel(enum.IntEnum):
    """Target of the error predictor: did the base classifier err?"""
    CORRECT = 0
    ERROR = 1


def _as_matrix(rows):
    if isinstance(rows, np.ndarray):
        matrix = np.asarray(rows, dtype=float)
    else:
        rows = list(rows)
        if not rows:
            return np.zeros((0, features.FEATURE_COUNT), dtype=float)
        matrix = np.array([getattr(r, 'values', r) for r in rows],
                          dtype=float)
    if matrix.ndim != 2:
        raise objects.InvalidArgumentException(
            'Feature rows must form a 2-d matrix, got shape %s'
            % (matrix.shape,))
    return matrix


class Standardizer(object):
    """Per-dimension z-score scaling fitted on training rows."""

    def __init__(self, means, stds):
        means = np.array(means, dtype=float)
        stds = np.array(stds, dtype=float)
        if means.ndim != 1 or means.shape != stds.shape:
            raise objects.InvalidArgumentException(
                'Standardizer means and stds must have the same length')
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(stds))):
            raise objects.InvalidArgumentException(
                'Standardizer values must be finite')
        if np.any(stds <= 0.0):
            raise objects.InvalidArgumentException(
                'Standardizer stds must be strictly positive')
        means.setflags(write=False)
        stds.setflags(write=False)
        self.means = means
        self.stds = stds

    def __len__(self):
        return self.means.size

    def transform(self, rows):
        values = np.asarray(getattr(rows, 'values', rows), dtype=float)
        if values.shape[-1] != self.means.size:
            raise objects.InvalidArgumentException(
                'Expected %d features, got %d'
                % (self.means.size, values.shape[-1]))
        return (values - self.means) / self.stds

    def __eq__(self, other):
        return (isinstance(other, Standardizer) and
                np.array_equal(self.means, other.means) and
                np.array_equal(self.stds, other.stds))

    def __hash__(self):
        return hash((self.means.tobytes(), self.stds.tobytes()))

    def to_json(self):
        return {'means': self.means.tolist(), 'stds': self.stds.tolist()}

    @staticmethod
    def from_json(json):
        means = objects._get_required_field(json, 'means', 'Standardizer',
                                            list)
        stds = objects._get_required_field(json, 'stds', 'Standardizer',
                                           list)
        return Standardizer(means, stds)


def fit_standardizer(rows):
    X = _as_matrix(rows)
    if X.shape[0] < 2:
        raise InsufficientDataException(
            'Fitting a standardizer needs at least 2 rows, got %d'
            % X.shape[0])
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds < MIN_STD, 1.0, stds)
    return Standardizer(means, stds)


class TrainingConfig(object):

    def __init__(self, C=1.0, max_iterations=1000,
                 convergence_tolerance=1e-6, class_weighting=BALANCED,
                 seed=common.DEFAULT_SEED):
        if not (isinstance(C, (int, float)) and math.isfinite(C) and C > 0):
            raise objects.InvalidArgumentException(
                'C must be a positive number, got %r' % (C,))
        if (isinstance(max_iterations, bool) or
                not isinstance(max_iterations, int) or max_iterations < 1):
            raise objects.InvalidArgumentException(
                'max_iterations must be a positive integer, got %r'
                % (max_iterations,))
        if not convergence_tolerance > 0:
            raise objects.InvalidArgumentException(
                'convergence_tolerance must be positive, got %r'
                % (convergence_tolerance,))
        if class_weighting not in CLASS_WEIGHTINGS:
            raise objects.InvalidArgumentException(
                'class_weighting must be one of: %s'
                % ', '.join(CLASS_WEIGHTINGS))
        self.C = float(C)
        self.max_iterations = max_iterations
        self.convergence_tolerance = float(convergence_tolerance)
        self.class_weighting = class_weighting
        self.seed = int(seed)

    @property
    def l2_strength(self):
        """Penalty multiplier on the weights, 1 / C."""
        return 1.0 / self.C

    def __repr__(self):
        return ('TrainingConfig(C=%r, max_iterations=%r, '
                'convergence_tolerance=%r, class_weighting=%r, seed=%r)'
                % (self.C, self.max_iterations, self.convergence_tolerance,
                   self.class_weighting, self.seed))


def _scores(Z, weights, intercept):
    # Row-wise sums give the same bits for one row or many.
    z = np.sum(Z * weights, axis=-1) + intercept
    return np.clip(special.expit(z), PROB_EPS, 1.0 - PROB_EPS)


class DeferralModel(object):
    """Standardizer, linear error predictor and routing threshold."""

    def __init__(self, schema, standardizer, weights, intercept, threshold,
                 label_space, lexicon=None, format_version=FORMAT_VERSION):
        lexicon = lexicon or features.Lexicon.default()
        if schema != features.FeatureSchema.for_lexicon(lexicon):
            raise objects.InvalidArgumentException(
                'Feature schema does not match the lexicon')
        weights = np.array(weights, dtype=float)
        if weights.shape != (len(schema),):
            raise objects.InvalidArgumentException(
                'Model has %d weights for %d features'
                % (weights.size, len(schema)))
        if len(standardizer) != len(schema):
            raise objects.InvalidArgumentException(
                'Standardizer has %d dimensions for %d features'
                % (len(standardizer), len(schema)))
        if not (np.all(np.isfinite(weights)) and math.isfinite(intercept)):
            raise objects.InvalidArgumentException(
                'Model weights must be finite')
        if not (math.isfinite(threshold) and 0.0 <= threshold <= 1.0):
            raise objects.InvalidArgumentException(
                'Threshold %r is outside [0, 1]' % (threshold,))
        if format_version != FORMAT_VERSION:
            raise objects.InvalidArgumentException(
                'Unsupported model format version %r' % (format_version,))
        weights.setflags(write=False)
        self.schema = schema
        self.standardizer = standardizer
        self.weights = weights
        self.intercept = float(intercept)
        self.threshold = float(threshold)
        self.label_space = label_space
        self.lexicon = lexicon
        self.format_version = format_version

    def features(self, text, probs):
        return features.extract_features(text, probs, self.lexicon,
                                         self.schema)

    def score(self, text, probs):
        return deferral_probability(self, self.features(text, probs))

    def score_matrix(self, X):
        return deferral_probabilities(self, X)

    def score_records(self, records):
        return self.score_matrix(
            features.extract_feature_matrix(records, self.lexicon))

    def defers(self, deferral_score):
        return deferral_score >= self.threshold

    def with_threshold(self, threshold):
        return DeferralModel(self.schema, self.standardizer, self.weights,
                             self.intercept, threshold, self.label_space,
                             self.lexicon, self.format_version)

    def __eq__(self, other):
        return (isinstance(other, DeferralModel) and
                self.to_json() == other.to_json())

    def __hash__(self):
        return hash(json.dumps(self.to_json(), sort_keys=True))

    def to_json(self):
        return {'format_version': self.format_version,
                'schema': list(self.schema.names),
                'standardizer': self.standardizer.to_json(),
                'weights': self.weights.tolist(),
                'intercept': self.intercept,
                'threshold': self.threshold,
                'label_space': self.label_space.to_json(),
                'lexicon': self.lexicon.to_json()}

    @staticmethod
    def from_json(json):
        errors = validator.validate_model(json)
        if errors:
            raise ModelFormatException('\n'.join(errors))
        try:
            lexicon = features.Lexicon.from_json(json['lexicon'])
            return DeferralModel(
                features.FeatureSchema(json['schema']),
                Standardizer.from_json(json['standardizer']),
                json['weights'], json['intercept'], json['threshold'],
                objects.LabelSpace.from_json(json['label_space']),
                lexicon, json['format_version'])
        except objects.InvalidArgumentException as e:
            raise ModelFormatException('Invalid model: %s' % e)


def error_labels(records):
    """e(x) = 1 when the base argmax differs from the gold label."""
    preds = metrics.base_predictions(records)
    golds = metrics.gold_labels(records)
    return np.where(preds != golds, ErrorLabel.ERROR,
                    ErrorLabel.CORRECT).astype(np.int64)


def _label_vector(labels):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and not np.isin(labels, list(ErrorLabel)).all():
        raise objects.InvalidArgumentException(
            'Error labels must be 0 or 1')
    return labels


def balanced_weights(labels):
    """Returns (w_neg, w_pos) with w_c = n / (2 n_c)."""
    labels = _label_vector(labels)
    n = labels.size
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsException(
            'Balanced weights need both error classes, got %d errors in '
            '%d rows' % (n_pos, n))
    return n / (2.0 * n_neg), n / (2.0 * n_pos)


def sample_weights(labels, class_weighting=BALANCED):
    labels = _label_vector(labels)
    if class_weighting == BALANCED:
        w_neg, w_pos = balanced_weights(labels)
        return np.where(labels == 1, w_pos, w_neg)
    return np.ones(labels.size, dtype=float)


def training_objective(weights, intercept, X, labels, sample_weight, C):
    """Weighted cross-entropy plus ||w||^2 / (2C); intercept unpenalized."""
    weights = np.asarray(weights, dtype=float)
    z = np.asarray(X, dtype=float) @ weights + intercept
    y = np.asarray(labels, dtype=float)
    # log(1 + e^z) - y z is the cross-entropy of sigmoid(z) against y
    losses = np.logaddexp(0.0, z) - y * z
    return float(np.dot(sample_weight, losses) +
                 np.dot(weights, weights) / (2.0 * C))


def _objective_and_gradient(params, X, y, s, C):
    w = params[:-1]
    b = params[-1]
    z = X @ w + b
    loss = np.dot(s, np.logaddexp(0.0, z) - y * z) + np.dot(w, w) / (2.0 * C)
    r = s * (special.expit(z) - y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + w / C
    grad[-1] = r.sum()
    return loss, grad


class FitResult(object):
    """Solution of the error-predictor fit.

    Iterating yields (weights, intercept).
    """

    def __init__(self, weights, intercept, converged, iterations, objective):
        self.weights = weights
        self.intercept = intercept
        self.converged = converged
        self.iterations = iterations
        self.objective = objective

    def __iter__(self):
        return iter((self.weights, self.intercept))

    def __repr__(self):
        return ('FitResult(intercept=%r, converged=%r, iterations=%r, '
                'objective=%r)' % (self.intercept, self.converged,
                                   self.iterations, self.objective))


def train_error_model(rows, labels, config=None):
    """Fits the error predictor with L-BFGS-B from an all-zero start.

    The objective is convex, so the returned weights are the global
    optimum up to the configured gradient tolerance.
    """
    config = config or TrainingConfig()
    X = _as_matrix(rows)
    y = _label_vector(labels)
    if X.shape[0] != y.size:
        raise objects.InvalidArgumentException(
            'Got %d feature rows for %d labels' % (X.shape[0], y.size))
    if y.size == 0:
        raise InsufficientDataException('Training needs at least one row')
    if y.min() == y.max():
        raise DegenerateLabelsException(
            'Training labels are all %d; the error predictor needs both '
            'correct and incorrect base predictions' % y[0])
    s = sample_weights(y, config.class_weighting)
    x0 = np.zeros(X.shape[1] + 1)
    result = optimize.minimize(
        _objective_and_gradient, x0, args=(X, y.astype(float), s, config.C),
        method='L-BFGS-B', jac=True,
        options={'maxiter': config.max_iterations,
                 'gtol': config.convergence_tolerance,
                 'ftol': _FTOL})
    weights = np.array(result.x[:-1])
    intercept = float(result.x[-1])
    grad_norm = float(np.max(np.abs(result.jac)))
    converged = grad_norm <= config.convergence_tolerance
    if not converged:
        logger.warning('Error predictor did not converge after %d '
                       'iterations (%s); gradient max-norm %.3g',
                       result.nit, result.message, grad_norm)
    logger.debug('Error predictor fit: %d iterations, objective %.9g',
                 result.nit, result.fun)
    return FitResult(weights, intercept, converged, int(result.nit),
                     float(result.fun))


def _model_rows(model, rows):
    if isinstance(rows, features.FeatureVector):
        if rows.schema != model.schema:
            raise objects.InvalidArgumentException(
                'Feature vector schema does not match the model')
        return rows.values
    return np.asarray(rows, dtype=float)


def deferral_probability(model, fv):
    values = _model_rows(model, fv)
    if values.shape != (len(model.schema),):
        raise objects.InvalidArgumentException(
            'Expected %d features, got shape %s'
            % (len(model.schema), values.shape))
    Z = model.standardizer.transform(values.reshape(1, -1))
    return float(_scores(Z, model.weights, model.intercept)[0])


def deferral_probabilities(model, X):
    X = _as_matrix(X)
    if X.shape[1] != len(model.schema):
        raise objects.InvalidArgumentException(
            'Expected %d features, got %d' % (len(model.schema), X.shape[1]))
    return _scores(model.standardizer.transform(X), model.weights,
                   model.intercept)


ThresholdSweep = collections.namedtuple(
    'ThresholdSweep', ['thresholds', 'scores', 'deferral_rates'])


def _routing_arrays(defer_probs, base_preds, expert_preds, golds):
    d = np.asarray(defer_probs, dtype=float).reshape(-1)
    base = np.asarray(base_preds, dtype=np.int64).reshape(-1)
    expert = np.asarray(expert_preds, dtype=np.int64).reshape(-1)
    gold = np.asarray(golds, dtype=np.int64).reshape(-1)
    if d.size == 0:
        raise objects.InvalidArgumentException(
            'Threshold tuning needs at least one row')
    if not d.size == base.size == expert.size == gold.size:
        raise objects.InvalidArgumentException(
            'Threshold tuning inputs must be aligned')
    if (expert < 0).any():
        raise objects.MissingExpertException(
            'Threshold tuning needs an expert prediction for every row; '
            '%d rows have none' % int((expert < 0).sum()))
    return d, base, expert, gold


def sweep_thresholds(defer_probs, base_preds, expert_preds, golds,
                     objective):
    """Scores the combined system at every candidate threshold.

    Candidates are 0, each distinct probability and NEVER_DEFER. Rows are
    deferred in decreasing order of probability while the confusion
    matrix is updated incrementally, so all candidates cost one pass.
    """
    d, base, expert, gold = _routing_arrays(defer_probs, base_preds,
                                            expert_preds, golds)
    K = objective.K
    n = d.size
    if max(base.max(), expert.max(), gold.max()) >= K:
        raise objects.InvalidArgumentException(
            'Class index out of range for %d classes' % K)
    thresholds = np.unique(np.concatenate(([0.0], d, [NEVER_DEFER])))
    deferred = n - np.searchsorted(np.sort(d), thresholds, side='left')

    cells = np.arange(K * K)
    delta = ((gold * K + expert)[:, None] == cells).astype(np.int64) - \
        ((gold * K + base)[:, None] == cells).astype(np.int64)
    order = np.argsort(-d, kind='stable')
    cumulative = np.zeros((n + 1, K * K), dtype=np.int64)
    np.cumsum(delta[order], axis=0, out=cumulative[1:])
    base_cells = np.bincount(gold * K + base, minlength=K * K)
    matrices = (base_cells + cumulative[deferred]).reshape(-1, K, K)
    scores = objective.score_counts(matrices)
    return ThresholdSweep(thresholds, scores, deferred / float(n))


def tune_threshold(defer_probs, base_preds, expert_preds, golds, objective):
    """Returns the threshold maximizing the objective of the routed system.

    Ties go to the lowest deferral rate, then to the largest threshold.
    The result may be NEVER_DEFER.
    """
    sweep = sweep_thresholds(defer_probs, base_preds, expert_preds, golds,
                             objective)
    best = np.flatnonzero(sweep.scores == sweep.scores.max())
    # Deferral rates fall as thresholds grow, so the last tie wins both
    # tie-breaks.
    chosen = best[-1]
    tau = float(sweep.thresholds[chosen])
    logger.info('Chose threshold %.6g: %s %.4f at deferral rate %.4f',
                tau, objective.name, sweep.scores[chosen],
                sweep.deferral_rates[chosen])
    return tau


def stratified_kfold(golds, k, seed=common.DEFAULT_SEED):
    """Splits row indices into k folds with balanced class counts.

    Each class is shuffled by the folds stream and dealt round-robin,
    continuing from the fold where the previous class stopped, so fold
    sizes and per-class fold counts both differ by at most one.
    """
    golds = np.asarray(golds, dtype=np.int64).reshape(-1)
    n = golds.size
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 2:
        raise objects.InvalidArgumentException(
            'k must be an integer >= 2, got %r' % (k,))
    if k > n:
        raise objects.InvalidArgumentException(
            'Cannot split %d rows into %d folds' % (n, k))
    gen = common.rng(seed, common.FOLDS_STREAM)
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(golds):
        members = np.flatnonzero(golds == cls)
        gen.shuffle(members)
        for j, index in enumerate(members):
            folds[(offset + j) % k].append(int(index))
        offset = (offset + members.size) % k
    return [np.array(sorted(fold), dtype=np.int64) for fold in folds]


OutOfFoldScores = collections.namedtuple('OutOfFoldScores',
                                         ['probs', 'folds'])


def _fit_and_score(X_train, y_train, X_test, config):
    standardizer = fit_standardizer(X_train)
    fit = train_error_model(standardizer.transform(X_train), y_train, config)
    return _scores(standardizer.transform(X_test), fit.weights,
                   fit.intercept)


def _check_error_classes(labels, where):
    n_err = int(labels.sum())
    if n_err == 0 or n_err == labels.size:
        raise DegenerateLabelsException(
            '%s has %d base errors in %d rows; the error predictor needs '
            'both correct and incorrect base predictions'
            % (where, n_err, labels.size))


def out_of_fold_scores(records, lexicon=None, config=None, k=5, seed=None,
                       X=None):
    """Scores each record with a model trained on the other folds.

    Folds are stratified on the error labels. Returns the probabilities
    together with the (train indices, test indices) of each fold.
    """
    config = config or TrainingConfig()
    seed = config.seed if seed is None else seed
    if X is None:
        X = features.extract_feature_matrix(records, lexicon)
    e = error_labels(records)
    _check_error_classes(e, 'The dataset')
    folds = stratified_kfold(e, k, seed)
    probs = np.empty(e.size, dtype=float)
    bookkeeping = []
    all_rows = np.arange(e.size)
    for number, test_idx in enumerate(folds, 1):
        train_idx = np.setdiff1d(all_rows, test_idx, assume_unique=True)
        _check_error_classes(e[train_idx],
                             'Training data for fold %d' % number)
        probs[test_idx] = _fit_and_score(X[train_idx], e[train_idx],
                                         X[test_idx], config)
        bookkeeping.append((train_idx, test_idx))
        logger.debug('Scored fold %d/%d: %d training rows, %d held out',
                     number, k, train_idx.size, test_idx.size)
    return OutOfFoldScores(probs, bookkeeping)


def out_of_fold_defer_probs(records, lexicon=None, config=None, k=5,
                            seed=None):
    return out_of_fold_scores(records, lexicon, config, k, seed).probs


TrainingResult = collections.namedtuple(
    'TrainingResult', ['model', 'validation_scores', 'fit'])


def fit_deferral_model(records, label_space, lexicon=None, config=None,
                       objective=None, mode=KFOLD, k=5, seed=None):
    """Trains a deferral model and tunes its threshold.

    In kfold mode the threshold is tuned on out-of-fold probabilities; in
    single-fit mode on the in-sample probabilities of the one fit. The
    returned model is always fitted on every record.
    """
    if mode not in MODES:
        raise objects.InvalidArgumentException(
            'Unknown training mode %r, expected one of: %s'
            % (mode, ', '.join(MODES)))
    config = config or TrainingConfig()
    seed = config.seed if seed is None else seed
    lexicon = lexicon or features.Lexicon.default()
    if objective is None:
        kind = (metrics.BINARY_F1 if label_space.positive_index is not None
                else metrics.MACRO_F1)
        objective = metrics.Objective.for_label_space(kind, label_space)
    records = list(records)
    expert = metrics.expert_predictions(records)
    if (expert < 0).any():
        raise objects.MissingExpertException(
            'Threshold tuning needs expert predictions; %d of %d records '
            'have no expert_pred' % (int((expert < 0).sum()), len(records)))
    X = features.extract_feature_matrix(records, lexicon)
    e = error_labels(records)
    _check_error_classes(e, 'The dataset')
    logger.info('Training on %d records with %d base errors (%s mode)',
                e.size, int(e.sum()), mode)

    if mode == KFOLD:
        scores = out_of_fold_scores(records, lexicon, config, k, seed,
                                    X=X).probs
    standardizer = fit_standardizer(X)
    fit = train_error_model(standardizer.transform(X), e, config)
    if mode == SINGLE_FIT:
        scores = _scores(standardizer.transform(X), fit.weights,
                         fit.intercept)

    tau = tune_threshold(scores, metrics.base_predictions(records), expert,
                         metrics.gold_labels(records), objective)
    model = DeferralModel(features.FeatureSchema.for_lexicon(lexicon),
                          standardizer, fit.weights, fit.intercept,
                          min(tau, 1.0), label_space, lexicon)
    return TrainingResult(model, scores, fit)


def report_coefficients(model):
    """Returns (feature name, coefficient) pairs in schema order.

    Positive coefficients increase the deferral probability.
    """
    return [(name, float(w)) for name, w in zip(model.schema.names,
                                                model.weights)]


def error_prediction_scores(defer_probs, labels, threshold):
    """Precision and recall of d >= threshold as a base-error detector."""
    predicted = (np.asarray(defer_probs, dtype=float) >= threshold)
    return metrics.precision_recall(predicted.astype(np.int64),
                                    _label_vector(labels), 1)


def save_model(model, path):
    common.write_json(path, model.to_json())
    logger.info(f"Wrote deferral model to: {path}")


def load_model(path):
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except OSError as e:
        raise ModelFormatException('Cannot read model file %s: %s'
                                   % (path, e.strerror))
    except ValueError as e:
        raise ModelFormatException('Model file %s is not valid JSON: %s'
                                   % (path, e))
    if not isinstance(data, dict):
        raise ModelFormatException('Model file %s must contain an object'
                                   % path)
    model = DeferralModel.from_json(data)
    logger.info(f"Loaded deferral model from: {path}")
    return model
