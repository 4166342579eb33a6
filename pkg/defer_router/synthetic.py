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
# Synthetic datasets where the base model and the expert complement each
# other. A hidden "hedged" flag marks rows whose text carries hedging
# language and whose base distribution is uncertain. The base model errs
# mostly on those rows while the expert is more reliable there.
#

import collections
import logging

import numpy as np
from scipy import special

from defer_router import common
from defer_router import features
from defer_router import ingestion
from defer_router import objects


logger = logging.getLogger(__name__)

NEGATIVE_CLASS = 'NO_ADE'
POSITIVE_CLASS = 'ADE'

# Base error log-odds are a linear function of confidence and entropy:
# about 60% errors at the hedged confidence mode and 4% at 0.96.
ERROR_LOGIT_INTERCEPT = 1.593
ERROR_LOGIT_CONFIDENCE = -5.64
ERROR_LOGIT_ENTROPY = 3.7

EXPERT_ACCURACY_HEDGED = 0.89
EXPERT_ACCURACY_PLAIN = 0.80

# None of these overlap the default lexicon.
HEDGING_PHRASES = ('possibly related to', 'cannot rule out a link with',
                   'may be associated with', 'questionable relation to',
                   'unclear whether linked to')
NEUTRAL_PHRASES = ('documented during rounds with',
                   'noted on chart review with',
                   'recorded at the clinic visit with',
                   'reported by nursing staff with',
                   'listed in the discharge note with')

DRUGS = ('lisinopril', 'metformin', 'warfarin', 'amoxicillin',
         'atorvastatin', 'vancomycin', 'cisplatin', 'methotrexate',
         'ibuprofen', 'clozapine', 'carbamazepine', 'allopurinol')
EFFECTS = ('rash', 'nausea', 'hypotension', 'angioedema', 'bleeding',
           'neutropenia', 'dizziness', 'elevated liver enzymes',
           'acute kidney injury', 'hyperkalemia')
SUBJECTS = ('Patient', 'The patient', 'Pt', '67 y/o male', '54 y/o female')
NEUTRAL_CONNECTORS = ('while taking', 'and is also on', 'with a history of',
                      'currently prescribed')
ADE_SENTENCES = ('Consistent with a drug {term}.',
                 'Concern for {term} raised by pharmacy.',
                 'Differential includes {term}.')
OUTCOME_SENTENCES = ('{drug} was {term}.', 'Symptoms {term} on follow-up.',
                     'History of {term} to {drug}.')

SyntheticDataset = collections.namedtuple('SyntheticDataset',
                                          ['manifest', 'hedged'])


def base_error_probability(confidence):
    """Probability that the base argmax is wrong at a binary confidence."""
    c = np.asarray(confidence, dtype=float)
    entropy = special.entr(c) + special.entr(1.0 - c)
    return special.expit(ERROR_LOGIT_INTERCEPT +
                         ERROR_LOGIT_CONFIDENCE * c +
                         ERROR_LOGIT_ENTROPY * entropy)


def _choice(gen, options):
    return options[int(gen.integers(len(options)))]


def _note_text(gen, gold, hedged, lexicon):
    drug = _choice(gen, DRUGS)
    effect = _choice(gen, EFFECTS)
    if gen.random() < 0.15:
        effect = '%s %s' % (_choice(gen, lexicon.severity_terms), effect)
    # ADE notes name a cause more often, independent of the hedged flag.
    if gen.random() < (0.7 if gold == 1 else 0.35):
        link = _choice(gen, lexicon.causal_phrases)
    else:
        link = _choice(gen, NEUTRAL_CONNECTORS)
    qualifier = _choice(gen, HEDGING_PHRASES if hedged else NEUTRAL_PHRASES)
    parts = ['%s developed %s %s %s, %s %s.' % (
        _choice(gen, SUBJECTS), effect, link, drug, qualifier,
        _choice(gen, DRUGS))]
    if gen.random() < (0.4 if gold == 1 else 0.15):
        parts.append(_choice(gen, ADE_SENTENCES).format(
            term=_choice(gen, lexicon.ade_terms)))
    if gen.random() < 0.3:
        parts.append(_choice(gen, OUTCOME_SENTENCES).format(
            drug=drug.capitalize(), term=_choice(gen, lexicon.outcome_terms)))
    return ' '.join(parts)


def generate_complementarity_dataset(n=5000, seed=common.DEFAULT_SEED,
                                     hedged_fraction=0.12,
                                     positive_rate=0.29, lexicon=None):
    """Builds the binary ADE dataset with a hidden hedged flag per row.

    Hedged rows get a confidence of 0.5 + 0.5 * Beta(2, 5), plain rows
    1 - 0.5 * Beta(1, 12); the base model is wrong with
    base_error_probability(confidence), which averages about 0.60 on
    hedged rows and 0.04 on plain rows. The expert is right with
    probability 0.89 on hedged rows and 0.80 elsewhere. Returns a
    SyntheticDataset of the manifest and the hedged flags.
    """
    if n < 1:
        raise objects.InvalidArgumentException(
            'Synthetic datasets need at least one row')
    for name, value in (('hedged_fraction', hedged_fraction),
                        ('positive_rate', positive_rate)):
        if not 0.0 <= value <= 1.0:
            raise objects.InvalidArgumentException(
                '%s must be in [0, 1], got %r' % (name, value))
    lexicon = lexicon or features.Lexicon.default()
    gen = common.rng(seed, common.SYNTHETIC_STREAM)
    label_space = objects.LabelSpace((NEGATIVE_CLASS, POSITIVE_CLASS), 1)

    golds = (gen.random(n) < positive_rate).astype(np.int64)
    hedged = gen.random(n) < hedged_fraction
    confidence = np.where(hedged, 0.5 + 0.5 * gen.beta(2.0, 5.0, n),
                          1.0 - 0.5 * gen.beta(1.0, 12.0, n))
    base_wrong = gen.random(n) < base_error_probability(confidence)
    expert_right = gen.random(n) < np.where(
        hedged, EXPERT_ACCURACY_HEDGED, EXPERT_ACCURACY_PLAIN)
    base_preds = np.where(base_wrong, 1 - golds, golds)
    expert_preds = np.where(expert_right, golds, 1 - golds)

    records = []
    note = 0
    remaining_in_note = 0
    for i in range(n):
        if remaining_in_note == 0:
            note += 1
            remaining_in_note = int(gen.integers(1, 4))
        remaining_in_note -= 1
        probs = [0.0, 0.0]
        probs[base_preds[i]] = float(confidence[i])
        probs[1 - base_preds[i]] = 1.0 - float(confidence[i])
        records.append(objects.PredictionRecord(
            'syn-%05d' % (i + 1),
            _note_text(gen, golds[i], hedged[i], lexicon),
            int(golds[i]), probs, label_space,
            expert_pred=int(expert_preds[i]),
            group_id='note-%04d' % note))
    logger.info('Generated %d synthetic records: %d hedged, %d positive, '
                'base accuracy %.3f', n, int(hedged.sum()), int(golds.sum()),
                1.0 - float(base_wrong.mean()))
    manifest = ingestion.DatasetManifest(
        label_space, records,
        'synthetic complementarity dataset (seed %d, n %d)' % (seed, n))
    return SyntheticDataset(manifest, hedged)
