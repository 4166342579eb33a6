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
import math

import numpy as np

from defer_router import features
from defer_router import metrics
from defer_router import objects


logger = logging.getLogger(__name__)

MissingExpertException = objects.MissingExpertException


class CostModel(object):
    """Per-call cost and latency of the base and expert models.

    Costs are in units of one base model call.
    """

    def __init__(self, base_cost=1.0, expert_cost=50.0, base_latency_ms=12.0,
                 expert_latency_ms=850.0):
        for name, value in (('base_cost', base_cost),
                            ('expert_cost', expert_cost),
                            ('base_latency_ms', base_latency_ms),
                            ('expert_latency_ms', expert_latency_ms)):
            if isinstance(value, bool) or \
                    not isinstance(value, (int, float)) or \
                    not math.isfinite(value) or value <= 0:
                raise objects.InvalidArgumentException(
                    '%s must be a positive number, got %r' % (name, value))
        self.base_cost = float(base_cost)
        self.expert_cost = float(expert_cost)
        self.base_latency_ms = float(base_latency_ms)
        self.expert_latency_ms = float(expert_latency_ms)

    def to_json(self):
        return {'base_cost': self.base_cost,
                'expert_cost': self.expert_cost,
                'base_latency_ms': self.base_latency_ms,
                'expert_latency_ms': self.expert_latency_ms}


def _check_rate(deferral_rate):
    if not 0.0 <= deferral_rate <= 1.0:
        raise objects.InvalidArgumentException(
            'Deferral rate must be in [0, 1], got %r' % (deferral_rate,))


def cascade_cost(deferral_rate, cm=None):
    """The base model runs on every row and the expert on the deferred
    fraction.
    """
    cm = cm or CostModel()
    _check_rate(deferral_rate)
    return cm.base_cost + deferral_rate * cm.expert_cost


def cascade_latency(deferral_rate, cm=None):
    cm = cm or CostModel()
    _check_rate(deferral_rate)
    return cm.base_latency_ms + deferral_rate * cm.expert_latency_ms


def expert_only_cost(cm=None):
    return (cm or CostModel()).expert_cost


def expert_only_latency(cm=None):
    return (cm or CostModel()).expert_latency_ms


class RecordBatch(object):
    """Column view of a record list for vectorised routing."""

    def __init__(self, records):
        self.records = list(records)
        self.n = len(self.records)
        self.golds = metrics.gold_labels(self.records)
        self.base_preds = metrics.base_predictions(self.records)
        self.expert_preds = metrics.expert_predictions(self.records)
        if self.records:
            self.probs = np.array([r.base_probs.probs for r in self.records],
                                  dtype=float)
            self.confidences = self.probs.max(axis=1)
        else:
            self.probs = np.zeros((0, 0), dtype=float)
            self.confidences = np.zeros(0, dtype=float)
        self._feature_cache = {}

    def feature_matrix(self, lexicon):
        if lexicon not in self._feature_cache:
            self._feature_cache[lexicon] = \
                features.extract_feature_matrix(self.records, lexicon)
        return self._feature_cache[lexicon]

    def __len__(self):
        return self.n


def route(defer, base_pred, expert_pred):
    if defer:
        if expert_pred is None:
            raise MissingExpertException(
                'Cannot defer without an expert prediction')
        return expert_pred
    return base_pred


def route_batch(mask, base_preds, expert_preds):
    """Element-wise route(); missing expert predictions are -1."""
    mask = np.asarray(mask, dtype=bool)
    base_preds = np.asarray(base_preds, dtype=np.int64)
    expert_preds = np.asarray(expert_preds, dtype=np.int64)
    if not mask.shape == base_preds.shape == expert_preds.shape:
        raise objects.InvalidArgumentException(
            'Routing inputs must be aligned')
    missing = mask & (expert_preds < 0)
    if missing.any():
        raise MissingExpertException(
            'Policy deferred %d rows without an expert prediction (first '
            'at row %d)' % (int(missing.sum()), int(np.argmax(missing))))
    return np.where(mask, expert_preds, base_preds)


class SystemReport(object):
    """Metrics of one routing policy over one dataset."""

    def __init__(self, tag, objective, f1, accuracy, deferral_rate, n,
                 deferred_count, relative_cost, avg_latency_ms,
                 deferred_expert_accuracy=None):
        self.per_policy_tag = tag
        self.objective = objective
        self.f1 = f1
        self.accuracy = accuracy
        self.deferral_rate = deferral_rate
        self.n = n
        self.deferred_count = deferred_count
        self.relative_cost = relative_cost
        self.avg_latency_ms = avg_latency_ms
        self.deferred_expert_accuracy = deferred_expert_accuracy

    @property
    def tag(self):
        return self.per_policy_tag

    @property
    def expert_cost_savings(self):
        """Fraction of expert calls saved against expert-only inference."""
        return 1.0 - self.deferral_rate

    def to_json(self):
        return {'policy': self.per_policy_tag,
                'objective': self.objective,
                'f1': self.f1,
                'accuracy': self.accuracy,
                'deferral_rate': self.deferral_rate,
                'n': self.n,
                'deferred_count': self.deferred_count,
                'relative_cost': self.relative_cost,
                'avg_latency_ms': self.avg_latency_ms,
                'expert_cost_savings': self.expert_cost_savings,
                'deferred_expert_accuracy': self.deferred_expert_accuracy}

    def __eq__(self, other):
        return (isinstance(other, SystemReport) and
                self.to_json() == other.to_json())

    def __hash__(self):
        return hash(tuple(sorted(self.to_json().items())))

    def __repr__(self):
        return 'SystemReport(%r, f1=%.4f, accuracy=%.4f, rate=%.4f)' % (
            self.per_policy_tag, self.f1, self.accuracy, self.deferral_rate)


def evaluate_system(records, policy, objective, cost_model=None):
    """Routes every record with the policy and scores the combined system.

    `records` may be a list of PredictionRecord or a RecordBatch.
    """
    batch = records if isinstance(records, RecordBatch) \
        else RecordBatch(records)
    if batch.n == 0:
        raise objects.InvalidArgumentException(
            'Evaluation needs at least one record')
    cost_model = cost_model or CostModel()
    mask = np.asarray(policy.defer_mask(batch), dtype=bool)
    preds = route_batch(mask, batch.base_preds, batch.expert_preds)
    deferred = int(mask.sum())
    rate = deferred / batch.n
    deferred_expert_accuracy = None
    if deferred:
        deferred_expert_accuracy = metrics.accuracy(
            batch.expert_preds[mask], batch.golds[mask])
    report = SystemReport(policy.tag, objective.name,
                          objective.score(preds, batch.golds),
                          metrics.accuracy(preds, batch.golds), rate, batch.n,
                          deferred, cascade_cost(rate, cost_model),
                          cascade_latency(rate, cost_model),
                          deferred_expert_accuracy)
    logger.debug('Evaluated %r', report)
    return report


def error_breakdown(mask, base_preds, expert_preds, golds):
    """Counts the residual errors of a routing decision by cause."""
    mask = np.asarray(mask, dtype=bool)
    base_ok = np.asarray(base_preds) == np.asarray(golds)
    expert_ok = np.asarray(expert_preds) == np.asarray(golds)
    return {'both_wrong': int(np.sum(~base_ok & ~expert_ok)),
            'false_deferral': int(np.sum(mask & base_ok & ~expert_ok)),
            'missed_deferral': int(np.sum(~mask & ~base_ok & expert_ok))}


_TABLE_COLUMNS = ('Method', 'F1', 'Acc', 'LLM%', 'Cost', 'Latency (ms)')


def _table_row(report):
    return (report.per_policy_tag,
            '%.3f' % report.f1,
            '%.3f' % report.accuracy,
            '%.1f%%' % (100.0 * report.deferral_rate),
            '%.1fx' % report.relative_cost,
            '%.1f' % report.avg_latency_ms)


def format_rows(header, rows):
    """Renders rows as aligned text columns separated by ' | '."""
    widths = [max(len(str(row[i])) for row in [header] + list(rows))
              for i in range(len(header))]

    def line(row):
        cells = [str(row[0]).ljust(widths[0])]
        cells.extend(str(c).rjust(w) for c, w in zip(row[1:], widths[1:]))
        return ' | '.join(cells).rstrip()

    rule = '-+-'.join('-' * w for w in widths)
    return '\n'.join([line(header), rule] + [line(r) for r in rows])


def format_table(reports):
    return format_rows(_TABLE_COLUMNS, [_table_row(r) for r in reports])


def reports_to_json(reports):
    return [r.to_json() for r in reports]
