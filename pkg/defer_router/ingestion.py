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


import json
import logging
import math

import numpy as np

from defer_router import common
from defer_router import objects
from defer_router import validator


logger = logging.getLogger(__name__)

FRACTION_SUM_TOLERANCE = 1e-9
# Guards floor() against quotas like 0.29 * 100 = 28.999999999999996.
_QUOTA_SLACK = 1e-9


class IngestionException(ValueError):
    """A data file could not be loaded; `line` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        self.reason = message
        if line is not None:
            message = '%s line %d: %s' % (path or 'input', line, message)
        elif path is not None:
            message = '%s: %s' % (path, message)
        super(IngestionException, self).__init__(message)


class EmptyDatasetException(IngestionException):
    pass


class DatasetManifest(object):
    """A validated dataset: label space, records and their provenance."""

    def __init__(self, label_space, records, provenance=''):
        records = list(records)
        seen = set()
        for record in records:
            if record.id in seen:
                raise objects.InvalidArgumentException(
                    'Duplicate record id %r' % record.id)
            seen.add(record.id)
            if record.base_probs.K != label_space.K or \
                    not label_space.is_valid_index(record.gold):
                raise objects.InvalidArgumentException(
                    'Record %s does not match the label space' % record.id)
        self.label_space = label_space
        self.records = records
        self.provenance = provenance or ''

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return (isinstance(other, DatasetManifest) and
                self.label_space == other.label_space and
                self.records == other.records and
                self.provenance == other.provenance)

    def __hash__(self):
        return hash((self.label_space, tuple(self.records), self.provenance))

    def header_json(self):
        return {'label_space': self.label_space.to_json(),
                'provenance': self.provenance}

    def with_records(self, records, provenance=None):
        return DatasetManifest(self.label_space, records,
                               self.provenance if provenance is None
                               else provenance)


def _iter_json_lines(path):
    try:
        with open(path, 'r') as f:
            for line_no, text in enumerate(f, 1):
                if not text.strip():
                    continue
                try:
                    data = json.loads(text)
                except ValueError as e:
                    raise IngestionException('invalid JSON: %s' % e,
                                             line_no, path)
                if not isinstance(data, dict):
                    raise IngestionException('expected a JSON object',
                                             line_no, path)
                yield line_no, data
    except OSError as e:
        raise IngestionException('cannot read file: %s' % e.strerror,
                                 path=path)


def _first_error(errors):
    return ' '.join(errors[0].split())


def load_dataset(path, label_space=None):
    """Loads a newline-delimited dataset file into a DatasetManifest.

    The first object may be a header carrying the label space; otherwise
    `label_space` must be given. The first malformed line raises an
    IngestionException naming that line.
    """
    logger.info(f"Using dataset file at: {path}")
    records = []
    seen = {}
    provenance = ''
    first = True
    for line_no, data in _iter_json_lines(path):
        if first and 'label_space' in data:
            first = False
            errors = validator.validate_header(data)
            if errors:
                raise IngestionException(_first_error(errors), line_no, path)
            header_space = objects.LabelSpace.from_json(data['label_space'])
            if label_space is not None and label_space != header_space:
                raise IngestionException(
                    'header label space %r differs from the supplied one'
                    % (header_space,), line_no, path)
            label_space = header_space
            provenance = data.get('provenance', '')
            continue
        first = False
        if label_space is None:
            raise IngestionException(
                'no label space: add a header line or supply a label-space '
                'file', line_no, path)
        errors = validator.validate_record(data)
        if errors:
            raise IngestionException(_first_error(errors), line_no, path)
        try:
            record = objects.PredictionRecord.from_json(data, label_space)
        except objects.InvalidArgumentException as e:
            raise IngestionException(str(e), line_no, path)
        if record.id in seen:
            raise IngestionException(
                'duplicate id %r (first seen on line %d)'
                % (record.id, seen[record.id]), line_no, path)
        seen[record.id] = line_no
        records.append(record)
    if not records:
        raise EmptyDatasetException('dataset has no records', path=path)
    logger.info('Loaded %d records over classes %s', len(records),
                ', '.join(label_space.class_names))
    return DatasetManifest(label_space, records, provenance)


def save_dataset(manifest, path):
    rows = [manifest.header_json()]
    rows.extend(r.to_json(manifest.label_space) for r in manifest.records)
    common.write_lines(path, rows)
    logger.info(f"Wrote {len(manifest)} records to: {path}")


def load_label_space(path):
    try:
        data = common.load_config_file(path)
    except OSError as e:
        raise IngestionException('cannot read file: %s' % e.strerror,
                                 path=path)
    except ValueError as e:
        raise IngestionException('cannot parse file: %s' % e, path=path)
    errors = validator.validate_label_space(data)
    if errors:
        raise IngestionException('\n'.join(errors), path=path)
    return objects.LabelSpace.from_json(data)


class ConsensusPair(object):
    """Labels given to one instance by two independent annotators."""

    def __init__(self, id, label_a, label_b, label_space=None):
        for label in (label_a, label_b):
            valid = (label_space.is_valid_index(label) if label_space
                     else isinstance(label, int) and
                     not isinstance(label, bool) and label >= 0)
            if not valid:
                raise objects.InvalidArgumentException(
                    'Pair %s: %r is not a valid class index' % (id, label))
        self.id = id
        self.label_a = int(label_a)
        self.label_b = int(label_b)

    @property
    def agrees(self):
        return self.label_a == self.label_b

    def __eq__(self, other):
        return (isinstance(other, ConsensusPair) and
                (self.id, self.label_a, self.label_b) ==
                (other.id, other.label_a, other.label_b))

    def __hash__(self):
        return hash((self.id, self.label_a, self.label_b))

    @staticmethod
    def from_json(json, label_space):
        pair_id = objects._get_required_field(json, 'id', 'ConsensusPair',
                                              str)
        label_a = label_space.index_of(objects._get_required_field(
            json, 'label_a', 'ConsensusPair', str))
        label_b = label_space.index_of(objects._get_required_field(
            json, 'label_b', 'ConsensusPair', str))
        return ConsensusPair(pair_id, label_a, label_b, label_space)


def load_consensus_pairs(path, label_space):
    logger.info(f"Using consensus file at: {path}")
    pairs = []
    for line_no, data in _iter_json_lines(path):
        errors = validator.validate_consensus_pair(data)
        if errors:
            raise IngestionException(_first_error(errors), line_no, path)
        try:
            pairs.append(ConsensusPair.from_json(data, label_space))
        except objects.InvalidArgumentException as e:
            raise IngestionException(str(e), line_no, path)
    if not pairs:
        raise EmptyDatasetException('consensus file has no pairs', path=path)
    return pairs


class ConsensusResult(object):

    def __init__(self, kept, total):
        self.kept = kept
        self.total = total

    @property
    def kept_count(self):
        return len(self.kept)

    @property
    def agreement_rate(self):
        return len(self.kept) / self.total

    def to_json(self, label_space=None):
        kept = self.kept
        if label_space is not None:
            kept = {k: label_space.name_of(v) for k, v in kept.items()}
        return {'total': self.total,
                'kept': self.kept_count,
                'agreement_rate': self.agreement_rate,
                'labels': kept}


def consensus_filter(pairs):
    """Keeps the ids both annotators labelled identically."""
    pairs = list(pairs)
    if not pairs:
        raise objects.InvalidArgumentException(
            'Consensus filtering needs at least one pair')
    kept = {}
    seen = set()
    for pair in pairs:
        if pair.id in seen:
            raise objects.InvalidArgumentException(
                'Duplicate consensus pair id %r' % pair.id)
        seen.add(pair.id)
        if pair.agrees:
            kept[pair.id] = pair.label_a
    result = ConsensusResult(kept, len(pairs))
    logger.info('Consensus kept %d of %d pairs (%.2f%% agreement)',
                result.kept_count, result.total,
                100.0 * result.agreement_rate)
    return result


def apply_consensus(manifest, result):
    """Keeps the records whose id reached consensus, relabelled with the
    agreed label.
    """
    records = []
    for record in manifest.records:
        if record.id not in result.kept:
            continue
        records.append(objects.PredictionRecord(
            record.id, record.text, result.kept[record.id],
            record.base_probs, manifest.label_space,
            expert_pred=record.expert_pred, group_id=record.group_id))
    provenance = '%s; consensus filtered (%d of %d kept)' % (
        manifest.provenance, result.kept_count, result.total)
    return manifest.with_records(records, provenance.lstrip('; '))


def _check_fractions(fractions):
    try:
        fractions = np.array([float(f) for f in fractions], dtype=float)
    except (TypeError, ValueError):
        raise objects.InvalidArgumentException(
            'Split fractions must be numbers: %r' % (fractions,))
    if fractions.size == 0 or not np.all(np.isfinite(fractions)) or \
            (fractions < 0).any():
        raise objects.InvalidArgumentException(
            'Split fractions must be nonnegative: %r' % (fractions.tolist(),))
    if abs(math.fsum(fractions) - 1.0) > FRACTION_SUM_TOLERANCE:
        raise objects.InvalidArgumentException(
            'Split fractions must sum to 1, got %r' % (fractions.tolist(),))
    return fractions


def _floors(total, fractions):
    quotas = total * fractions
    floors = np.floor(quotas + _QUOTA_SLACK).astype(np.int64)
    return quotas, np.minimum(floors, total)


def split_sizes(total, fractions):
    """Largest-remainder apportionment of total rows over the splits."""
    fractions = _check_fractions(fractions)
    quotas, sizes = _floors(total, fractions)
    remainder = quotas - sizes
    order = sorted(range(fractions.size), key=lambda s: (-remainder[s], s))
    for s in order[:total - int(sizes.sum())]:
        sizes[s] += 1
    return sizes


def _collect(records, assignments, n_splits):
    splits = [[] for _ in range(n_splits)]
    for index in sorted(assignments):
        splits[assignments[index]].append(records[index])
    return tuple(splits)


def stratified_split(records, fractions=(0.7, 0.15, 0.15),
                     seed=common.DEFAULT_SEED):
    """Partitions records into splits that preserve the gold class mix.

    Each split gets its largest-remainder share of the records and each
    (class, split) cell is within one record of its proportional count.
    Returns one record list per fraction, in input order.
    """
    records = list(records)
    fractions = _check_fractions(fractions)
    n_splits = fractions.size
    sizes = split_sizes(len(records), fractions)
    golds = np.array([r.gold for r in records], dtype=np.int64)
    classes = np.unique(golds)
    active = fractions > 0

    cells = {}
    leftovers = {}
    fractional = {}
    for cls in classes:
        n_c = int(np.sum(golds == cls))
        quotas, floors = _floors(n_c, fractions)
        cells[cls] = floors
        leftovers[cls] = n_c - int(floors.sum())
        fractional[cls] = quotas - floors
        if n_c < int(active.sum()):
            logger.warning('Class %d has %d records for %d splits; some '
                           'splits will not contain it', cls, n_c,
                           int(active.sum()))
    demand = sizes - sum(cells.values())

    # Classes with the most leftover records choose first, one record per
    # split, taking the splits that still need the most records.
    for cls in sorted(classes, key=lambda c: (-leftovers[c], c)):
        order = sorted(np.flatnonzero(active),
                       key=lambda s: (-demand[s], -fractional[cls][s], s))
        for s in order[:leftovers[cls]]:
            cells[cls][s] += 1
            demand[s] -= 1

    gen = common.rng(seed, common.SPLIT_STREAM)
    assignments = {}
    for cls in classes:
        members = np.flatnonzero(golds == cls)
        gen.shuffle(members)
        start = 0
        for s in range(n_splits):
            for index in members[start:start + cells[cls][s]]:
                assignments[int(index)] = s
            start += cells[cls][s]
    return _collect(records, assignments, n_splits)


def group_split(records, fractions=(0.8, 0.1, 0.1),
                seed=common.DEFAULT_SEED):
    """Partitions records so every group_id lands in exactly one split.

    Groups are shuffled by the split stream, then each goes to the split
    with the largest remaining shortfall against its target size.
    """
    records = list(records)
    fractions = _check_fractions(fractions)
    groups = {}
    for index, record in enumerate(records):
        if record.group_id is None:
            raise objects.InvalidArgumentException(
                'Record %s has no group_id; group splits need one on every '
                'record' % record.id)
        groups.setdefault(record.group_id, []).append(index)
    deficit = split_sizes(len(records), fractions).astype(float)
    deficit[fractions == 0] = -np.inf
    names = list(groups)
    gen = common.rng(seed, common.SPLIT_STREAM)
    assignments = {}
    for g in gen.permutation(len(names)):
        members = groups[names[g]]
        s = int(np.argmax(deficit))
        deficit[s] -= len(members)
        for index in members:
            assignments[index] = s
    return _collect(records, assignments, fractions.size)
