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


import logging

import numpy as np

from defer_router import common
from defer_router import deferral
from defer_router import features
from defer_router import objects


logger = logging.getLogger(__name__)

NEVER = 'never'
ALWAYS = 'always'
FIXED_THRESHOLD = 'fixed_threshold'
RANDOM = 'random'
ORACLE = 'oracle'
LEARNED = 'learned'


def _check_unit_interval(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or \
            not 0.0 <= value <= 1.0:
        raise objects.InvalidArgumentException(
            '%s must be in [0, 1], got %r' % (name, value))
    return float(value)


def fixed_threshold_defer(p, theta):
    """Defers when the top softmax probability is strictly below theta."""
    return features.confidence(p) < theta


def random_defer_mask(n, rate, seed=common.DEFAULT_SEED):
    """Marks exactly floor(rate * n + 0.5) of n rows, chosen by a seeded
    shuffle. Halves round up.
    """
    rate = _check_unit_interval(rate, 'Deferral rate')
    count = int(np.floor(rate * n + 0.5))
    gen = common.rng(seed, common.RANDOM_BASELINE_STREAM)
    mask = np.zeros(n, dtype=bool)
    mask[gen.permutation(n)[:count]] = True
    return mask


def oracle_defer(base_pred, expert_pred, gold):
    return base_pred != gold and expert_pred == gold


class Policy(object):
    """Decides per row whether the expert answers instead of the base."""

    kind = None

    def __init__(self, tag=None):
        self.tag = tag or self.kind

    def defer_mask(self, batch):
        raise NotImplementedError()

    def __repr__(self):
        return '%s(%r)' % (self.__class__.__name__, self.tag)


class NeverPolicy(Policy):
    kind = NEVER

    def defer_mask(self, batch):
        return np.zeros(batch.n, dtype=bool)


class AlwaysPolicy(Policy):
    kind = ALWAYS

    def defer_mask(self, batch):
        return np.ones(batch.n, dtype=bool)


class FixedThresholdPolicy(Policy):
    kind = FIXED_THRESHOLD

    def __init__(self, theta, tag=None):
        self.theta = _check_unit_interval(theta, 'Confidence threshold')
        super(FixedThresholdPolicy, self).__init__(
            tag or 'fixed theta=%g' % self.theta)

    def defer_mask(self, batch):
        return batch.confidences < self.theta


class RandomPolicy(Policy):
    kind = RANDOM

    def __init__(self, rate, seed=common.DEFAULT_SEED, tag=None):
        self.rate = _check_unit_interval(rate, 'Deferral rate')
        self.seed = seed
        super(RandomPolicy, self).__init__(
            tag or 'random (%.1f%%)' % (100.0 * self.rate))

    def defer_mask(self, batch):
        return random_defer_mask(batch.n, self.rate, self.seed)


class OraclePolicy(Policy):
    kind = ORACLE

    def defer_mask(self, batch):
        return (batch.base_preds != batch.golds) & \
            (batch.expert_preds == batch.golds)


class LearnedPolicy(Policy):
    kind = LEARNED

    def __init__(self, model, tag=None):
        self.model = model
        super(LearnedPolicy, self).__init__(tag)

    def scores(self, batch):
        return deferral.deferral_probabilities(
            self.model, batch.feature_matrix(self.model.lexicon))

    def defer_mask(self, batch):
        return self.scores(batch) >= self.model.threshold


class ScoredPolicy(Policy):
    """Learned routing over precomputed deferral probabilities."""

    kind = LEARNED

    def __init__(self, scores, threshold, tag=None):
        self.scores = np.asarray(scores, dtype=float)
        self.threshold = float(threshold)
        super(ScoredPolicy, self).__init__(tag)

    def defer_mask(self, batch):
        if self.scores.size != batch.n:
            raise objects.InvalidArgumentException(
                'Got %d scores for %d records' % (self.scores.size, batch.n))
        return self.scores >= self.threshold


def policy_from_string(text, model=None, seed=common.DEFAULT_SEED):
    """Builds a policy from 'never', 'always', 'oracle', 'learned',
    'fixed:<theta>' or 'random:<rate>'.
    """
    kind, _, arg = text.strip().partition(':')
    kind = kind.lower()
    try:
        if kind == NEVER:
            return NeverPolicy()
        elif kind == ALWAYS:
            return AlwaysPolicy()
        elif kind == ORACLE:
            return OraclePolicy()
        elif kind == LEARNED:
            if model is None:
                raise objects.InvalidArgumentException(
                    'The learned policy needs a deferral model')
            return LearnedPolicy(model)
        elif kind in ('fixed', FIXED_THRESHOLD):
            return FixedThresholdPolicy(float(arg))
        elif kind == RANDOM:
            return RandomPolicy(float(arg), seed)
    except ValueError as e:
        if isinstance(e, objects.InvalidArgumentException):
            raise
        raise objects.InvalidArgumentException(
            'Invalid policy parameter in %r' % text)
    raise objects.InvalidArgumentException(
        'Unknown policy %r, expected never, always, oracle, learned, '
        'fixed:<theta> or random:<rate>' % text)
