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
import re

import numpy as np
from scipy import stats

from defer_router import common
from defer_router import objects
from defer_router import validator


logger = logging.getLogger(__name__)

DEFAULT_CAUSAL_PHRASES = ('induced', 'caused by', 'due to', 'after',
                          'following')
DEFAULT_SEVERITY_TERMS = ('severe', 'fatal')
DEFAULT_ADE_TERMS = ('toxicity', 'reaction', 'syndrome')
DEFAULT_OUTCOME_TERMS = ('discontinued', 'improved', 'intolerance')

# Group sizes are fixed so every lexicon yields the same 18-slot schema.
CAUSAL_COUNT = 5
SEVERITY_COUNT = 2
ADE_COUNT = 3

UNCERTAINTY_FEATURES = ('confidence', 'entropy', 'margin',
                        'normalized_entropy', 'second_prob')
LENGTH_FEATURES = ('log_char_len', 'log_word_len')
OUTCOME_FEATURE = 'has_outcome_term'
FEATURE_COUNT = 18


def _phrase_pattern(phrase):
    words = [re.escape(w) for w in phrase.split()]
    return re.compile(r'(?<!\w)' + r'\s+'.join(words) + r'(?!\w)',
                      re.IGNORECASE)


def _indicator_name(phrase):
    return 'has_' + '_'.join(phrase.split())


class Lexicon(object):
    """Keyword groups behind the text indicator features."""

    def __init__(self, causal_phrases=DEFAULT_CAUSAL_PHRASES,
                 severity_terms=DEFAULT_SEVERITY_TERMS,
                 ade_terms=DEFAULT_ADE_TERMS,
                 outcome_terms=DEFAULT_OUTCOME_TERMS):
        groups = (('causal_phrases', causal_phrases, CAUSAL_COUNT),
                  ('severity_terms', severity_terms, SEVERITY_COUNT),
                  ('ade_terms', ade_terms, ADE_COUNT),
                  ('outcome_terms', outcome_terms, None))
        for name, phrases, count in groups:
            if count is not None and len(phrases) != count:
                msg = 'Lexicon group %s needs exactly %d phrases, got %d' \
                      % (name, count, len(phrases))
                raise objects.InvalidArgumentException(msg)
            if not phrases:
                msg = 'Lexicon group %s must not be empty' % name
                raise objects.InvalidArgumentException(msg)
            for phrase in phrases:
                if (not isinstance(phrase, str) or not phrase.strip() or
                        phrase != phrase.lower()):
                    msg = 'Lexicon phrases must be non-empty lowercase ' \
                          'strings: %r' % (phrase,)
                    raise objects.InvalidArgumentException(msg)
        self.causal_phrases = tuple(causal_phrases)
        self.severity_terms = tuple(severity_terms)
        self.ade_terms = tuple(ade_terms)
        self.outcome_terms = tuple(outcome_terms)
        indicator_phrases = (self.causal_phrases + self.severity_terms +
                             self.ade_terms)
        names = [_indicator_name(p) for p in indicator_phrases]
        if len(set(names)) != len(names) or OUTCOME_FEATURE in names:
            raise objects.InvalidArgumentException(
                'Lexicon indicator phrases must be distinct')
        self._indicator_patterns = [_phrase_pattern(p)
                                    for p in indicator_phrases]
        self._outcome_patterns = [_phrase_pattern(p)
                                  for p in self.outcome_terms]
        self._indicator_names = tuple(names)

    @staticmethod
    def default():
        return Lexicon()

    @property
    def indicator_names(self):
        return self._indicator_names

    def indicators(self, text):
        values = [1.0 if p.search(text) else 0.0
                  for p in self._indicator_patterns]
        values.append(1.0 if any(p.search(text)
                                 for p in self._outcome_patterns) else 0.0)
        return values

    def __eq__(self, other):
        return (isinstance(other, Lexicon) and
                self.to_json() == other.to_json())

    def __hash__(self):
        return hash((self.causal_phrases, self.severity_terms,
                     self.ade_terms, self.outcome_terms))

    def to_json(self):
        return {'causal_phrases': list(self.causal_phrases),
                'severity_terms': list(self.severity_terms),
                'ade_terms': list(self.ade_terms),
                'outcome_terms': list(self.outcome_terms)}

    @staticmethod
    def from_json(json):
        errors = validator.validate_lexicon(json)
        if errors:
            raise objects.InvalidArgumentException('\n'.join(errors))
        return Lexicon(json.get('causal_phrases', DEFAULT_CAUSAL_PHRASES),
                       json.get('severity_terms', DEFAULT_SEVERITY_TERMS),
                       json.get('ade_terms', DEFAULT_ADE_TERMS),
                       json.get('outcome_terms', DEFAULT_OUTCOME_TERMS))

    @staticmethod
    def from_file(path):
        logger.info(f"Using lexicon file at: {path}")
        data = common.load_config_file(path)
        if not isinstance(data, dict):
            raise objects.InvalidArgumentException(
                'Lexicon file %s must contain a mapping' % path)
        return Lexicon.from_json(data)


class FeatureSchema(object):
    """The ordered names of the 18 deferral features."""

    def __init__(self, names):
        names = tuple(names)
        if len(names) != FEATURE_COUNT:
            raise objects.InvalidArgumentException(
                'Feature schema needs %d names, got %d'
                % (FEATURE_COUNT, len(names)))
        if len(set(names)) != len(names):
            raise objects.InvalidArgumentException(
                'Feature names must be unique')
        self.names = names

    @staticmethod
    def for_lexicon(lexicon):
        return FeatureSchema(UNCERTAINTY_FEATURES + LENGTH_FEATURES +
                             lexicon.indicator_names + (OUTCOME_FEATURE,))

    def index(self, name):
        return self.names.index(name)

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return 'FeatureSchema(%r)' % (list(self.names),)


class FeatureVector(object):
    """Feature values aligned with a FeatureSchema."""

    def __init__(self, values, schema):
        values = np.array(values, dtype=float)
        if values.shape != (len(schema),):
            raise objects.InvalidArgumentException(
                'Feature vector has %d values for %d features'
                % (values.size, len(schema)))
        if not np.all(np.isfinite(values)):
            raise objects.InvalidArgumentException(
                'Feature values must be finite')
        values.setflags(write=False)
        self.values = values
        self.schema = schema

    def __getitem__(self, name):
        return float(self.values[self.schema.index(name)])

    def __len__(self):
        return self.values.size

    def as_dict(self):
        return dict(zip(self.schema.names, self.values.tolist()))


def _probs(p):
    if isinstance(p, objects.ProbabilityDistribution):
        return p.as_array()
    return np.asarray(p, dtype=float)


def confidence(p):
    return float(np.max(_probs(p)))


def entropy(p):
    # scipy treats 0 * log(0) as 0; natural log.
    return float(stats.entropy(_probs(p)))


def normalized_entropy(p):
    p = _probs(p)
    return entropy(p) / math.log(p.size)


def _top_two(p):
    top = np.sort(_probs(p))[::-1]
    return top[0], top[1]


def margin(p):
    first, second = _top_two(p)
    return float(first - second)


def second_prob(p):
    return float(_top_two(p)[1])


def uncertainty_features(p):
    p = _probs(p)
    first, second = _top_two(p)
    h = entropy(p)
    return [float(first), h, float(first - second), h / math.log(p.size),
            float(second)]


def text_length_features(text):
    return [math.log1p(len(text)), math.log1p(len(text.split()))]


def extract_features(text, p, lexicon=None, schema=None):
    lexicon = lexicon or Lexicon.default()
    schema = schema or FeatureSchema.for_lexicon(lexicon)
    values = (uncertainty_features(p) + text_length_features(text) +
              lexicon.indicators(text))
    return FeatureVector(values, schema)


def extract_feature_matrix(records, lexicon=None):
    """Returns an (n, 18) array, one feature row per record."""
    lexicon = lexicon or Lexicon.default()
    rows = [uncertainty_features(r.base_probs) +
            text_length_features(r.text) + lexicon.indicators(r.text)
            for r in records]
    if not rows:
        return np.zeros((0, FEATURE_COUNT), dtype=float)
    return np.array(rows, dtype=float)
