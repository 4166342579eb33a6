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


#
# NOTE: When making changes to the object model, remember to also update
#       schema.yaml to reflect changes to the schema of data files!
#

import logging
import math

import numpy as np


logger = logging.getLogger(__name__)

PROB_SUM_TOLERANCE = 1e-6


class InvalidArgumentException(ValueError):
    pass


class MissingExpertException(ValueError):
    pass


def _get_required_field(json, name, object_name, datatype=None):
    field = json.get(name)
    if not datatype:
        if field is None:
            msg = '%s JSON objects require \'%s\' to be configured.' \
                  % (object_name, name)
            raise InvalidArgumentException(msg)
    elif not isinstance(field, datatype):
        msg = '%s JSON objects require \'%s\' to be configured as %s'\
              % (object_name, name, str(datatype))
        raise InvalidArgumentException(msg)
    return field


class LabelSpace(object):
    """Ordered class names with an optional positive class."""

    def __init__(self, class_names, positive_index=None):
        class_names = tuple(class_names)
        if len(class_names) < 2:
            msg = 'A label space needs at least 2 classes, got %d' \
                  % len(class_names)
            raise InvalidArgumentException(msg)
        for name in class_names:
            if not isinstance(name, str) or not name:
                msg = 'Class names must be non-empty strings: %r' % (name,)
                raise InvalidArgumentException(msg)
        if len(set(class_names)) != len(class_names):
            msg = 'Class names must be unique: %s' % ', '.join(class_names)
            raise InvalidArgumentException(msg)
        if positive_index is not None:
            if (isinstance(positive_index, bool) or
                    not isinstance(positive_index, int) or
                    not 0 <= positive_index < len(class_names)):
                msg = 'Positive index %r is not a valid class index' \
                      % (positive_index,)
                raise InvalidArgumentException(msg)
        self._class_names = class_names
        self._positive_index = positive_index

    @property
    def class_names(self):
        return self._class_names

    @property
    def positive_index(self):
        return self._positive_index

    @property
    def positive_name(self):
        if self._positive_index is None:
            return None
        return self._class_names[self._positive_index]

    @property
    def K(self):
        return len(self._class_names)

    def is_valid_index(self, index):
        return (isinstance(index, (int, np.integer)) and
                not isinstance(index, bool) and 0 <= index < self.K)

    def index_of(self, name):
        try:
            return self._class_names.index(name)
        except ValueError:
            msg = 'Unknown label %r, expected one of: %s' \
                  % (name, ', '.join(self._class_names))
            raise InvalidArgumentException(msg)

    def name_of(self, index):
        if not self.is_valid_index(index):
            msg = 'Class index %r out of range for %d classes' \
                  % (index, self.K)
            raise InvalidArgumentException(msg)
        return self._class_names[index]

    def __eq__(self, other):
        return (isinstance(other, LabelSpace) and
                self._class_names == other._class_names and
                self._positive_index == other._positive_index)

    def __hash__(self):
        return hash((self._class_names, self._positive_index))

    def __repr__(self):
        return 'LabelSpace(%r, positive_index=%r)' % (
            list(self._class_names), self._positive_index)

    def to_json(self):
        data = {'class_names': list(self._class_names)}
        if self._positive_index is not None:
            data['positive'] = self.positive_name
        return data

    @staticmethod
    def from_json(json):
        class_names = _get_required_field(json, 'class_names', 'LabelSpace',
                                          list)
        positive = json.get('positive')
        positive_index = None
        if positive is not None:
            if positive not in class_names:
                msg = 'Positive class %r is not one of the class names' \
                      % (positive,)
                raise InvalidArgumentException(msg)
            positive_index = class_names.index(positive)
        return LabelSpace(class_names, positive_index)


class ProbabilityDistribution(object):
    """A K-class softmax output on the probability simplex.

    Distributions outside the sum tolerance are rejected rather than
    renormalized.
    """

    def __init__(self, probs, label_space=None):
        try:
            values = tuple(float(p) for p in probs)
        except (TypeError, ValueError):
            raise InvalidArgumentException(
                'Probabilities must be a list of numbers: %r' % (probs,))
        if len(values) < 2:
            msg = 'A distribution needs at least 2 entries, got %d' \
                  % len(values)
            raise InvalidArgumentException(msg)
        if label_space is not None and len(values) != label_space.K:
            msg = 'Distribution has %d entries but the label space has ' \
                  '%d classes' % (len(values), label_space.K)
            raise InvalidArgumentException(msg)
        for p in values:
            if not math.isfinite(p) or p < 0.0 or p > 1.0:
                msg = 'Probability %r is outside [0, 1]' % (p,)
                raise InvalidArgumentException(msg)
        total = math.fsum(values)
        if abs(total - 1.0) > PROB_SUM_TOLERANCE:
            msg = 'Probabilities sum to %.9g, expected 1 within %g' \
                  % (total, PROB_SUM_TOLERANCE)
            raise InvalidArgumentException(msg)
        self._probs = values

    @property
    def probs(self):
        return self._probs

    @property
    def K(self):
        return len(self._probs)

    def as_array(self):
        return np.asarray(self._probs, dtype=float)

    def __len__(self):
        return len(self._probs)

    def __iter__(self):
        return iter(self._probs)

    def __getitem__(self, index):
        return self._probs[index]

    def __eq__(self, other):
        return (isinstance(other, ProbabilityDistribution) and
                self._probs == other._probs)

    def __hash__(self):
        return hash(self._probs)

    def __repr__(self):
        return 'ProbabilityDistribution(%r)' % (list(self._probs),)

    def to_json(self):
        return list(self._probs)


class PredictionRecord(object):
    """One labeled instance: text, gold label and model outputs."""

    def __init__(self, id, text, gold, base_probs, label_space,
                 expert_pred=None, group_id=None):
        if not isinstance(id, str) or not id:
            raise InvalidArgumentException(
                'Record id must be a non-empty string: %r' % (id,))
        if not isinstance(text, str):
            raise InvalidArgumentException(
                'Record %s: text must be a string' % id)
        if not label_space.is_valid_index(gold):
            raise InvalidArgumentException(
                'Record %s: gold %r is not a valid class index' % (id, gold))
        if expert_pred is not None and \
                not label_space.is_valid_index(expert_pred):
            raise InvalidArgumentException(
                'Record %s: expert_pred %r is not a valid class index'
                % (id, expert_pred))
        if not isinstance(base_probs, ProbabilityDistribution):
            base_probs = ProbabilityDistribution(base_probs, label_space)
        elif base_probs.K != label_space.K:
            raise InvalidArgumentException(
                'Record %s: distribution has %d entries for %d classes'
                % (id, base_probs.K, label_space.K))
        if group_id is not None and not isinstance(group_id, str):
            raise InvalidArgumentException(
                'Record %s: group_id must be a string' % id)
        self._id = id
        self._text = text
        self._gold = int(gold)
        self._base_probs = base_probs
        self._expert_pred = None if expert_pred is None else int(expert_pred)
        self._group_id = group_id

    @property
    def id(self):
        return self._id

    @property
    def text(self):
        return self._text

    @property
    def gold(self):
        return self._gold

    @property
    def base_probs(self):
        return self._base_probs

    @property
    def expert_pred(self):
        return self._expert_pred

    @property
    def group_id(self):
        return self._group_id

    def _key(self):
        return (self._id, self._text, self._gold, self._base_probs,
                self._expert_pred, self._group_id)

    def __eq__(self, other):
        return (isinstance(other, PredictionRecord) and
                self._key() == other._key())

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return 'PredictionRecord(id=%r, gold=%r, expert_pred=%r)' % (
            self._id, self._gold, self._expert_pred)

    def to_json(self, label_space):
        data = {'id': self._id,
                'text': self._text,
                'gold': label_space.name_of(self._gold),
                'base_probs': self._base_probs.to_json()}
        if self._expert_pred is not None:
            data['expert_pred'] = label_space.name_of(self._expert_pred)
        if self._group_id is not None:
            data['group_id'] = self._group_id
        return data

    @staticmethod
    def from_json(json, label_space):
        record_id = _get_required_field(json, 'id', 'PredictionRecord', str)
        text = _get_required_field(json, 'text', 'PredictionRecord', str)
        gold = label_space.index_of(
            _get_required_field(json, 'gold', 'PredictionRecord', str))
        base_probs = ProbabilityDistribution(
            _get_required_field(json, 'base_probs', 'PredictionRecord', list),
            label_space)
        expert_pred = json.get('expert_pred')
        if expert_pred is not None:
            expert_pred = label_space.index_of(expert_pred)
        return PredictionRecord(record_id, text, gold, base_probs,
                                label_space, expert_pred=expert_pred,
                                group_id=json.get('group_id'))


class ConfusionCounts(object):
    """K x K counts, rows are gold classes and columns predictions."""

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=np.int64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidArgumentException(
                'Confusion counts must be a square matrix, got shape %s'
                % (matrix.shape,))
        if (matrix < 0).any():
            raise InvalidArgumentException(
                'Confusion counts must be nonnegative')
        matrix.setflags(write=False)
        self._matrix = matrix

    @property
    def matrix(self):
        return self._matrix

    @property
    def K(self):
        return self._matrix.shape[0]

    @property
    def total(self):
        return int(self._matrix.sum())

    @property
    def correct(self):
        return int(np.trace(self._matrix))

    def __eq__(self, other):
        return (isinstance(other, ConfusionCounts) and
                np.array_equal(self._matrix, other._matrix))

    def __hash__(self):
        return hash(self._matrix.tobytes())

    def __repr__(self):
        return 'ConfusionCounts(%r)' % (self._matrix.tolist(),)
