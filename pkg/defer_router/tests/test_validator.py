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
import os.path

import jsonschema
import yaml

from defer_router import validator
from defer_router.tests import base


REALPATH = os.path.dirname(os.path.realpath(__file__))
SAMPLE_BASE = os.path.join(REALPATH, '../../', 'etc',
                           'defer-router', 'samples')


class TestSchemaValidation(base.TestCase):

    def test_schema_is_valid(self):
        schema = validator.get_defer_router_schema()
        jsonschema.Draft4Validator.check_schema(schema)

    def test__validate_document(self):
        schema = {"type": "string"}
        errors = validator._validate_document(42, "foo", schema)
        self.assertEqual(len(errors), 1)
        errors = validator._validate_document("42", "foo", schema)
        self.assertEqual(len(errors), 0)

    def test_consistent_error_messages_type(self):
        error = jsonschema.ValidationError(
            "%r is not of type %r" % (u'name', u'string'), validator=u'type',
            validator_value=u'string', instance=u'name')
        msg = validator._get_consistent_error_message(error)
        self.assertEqual(msg, "'name' is not of type 'string'")

    def test_consistent_error_messages_enum(self):
        error = jsonschema.ValidationError(
            "%r is not one of %r" % (2, [1]), validator=u'enum',
            validator_value=[1], instance=2)
        msg = validator._get_consistent_error_message(error)
        self.assertEqual(msg, "'2' is not one of ['1']")

    def test_consistent_error_messages_required(self):
        error = jsonschema.ValidationError(
            "%r is a required property" % u'gold', validator=u'required',
            validator_value=[u'id', u'gold'], instance={u'id': u'n1'})
        msg = validator._get_consistent_error_message(error)
        self.assertEqual(msg, "'gold' is a required property")

    def test_consistent_error_messages_min_items(self):
        error = jsonschema.ValidationError(
            "[0.5] is too short", validator=u'minItems',
            validator_value=2, instance=[0.5])
        msg = validator._get_consistent_error_message(error)
        self.assertEqual(msg, "expected at least 2 items, got 1")

    def test_pretty_print_schema_path(self):
        schema = validator.get_schema_for_defined_type('record')
        path = ['properties', 'expert_pred', 'oneOf', 0, 'type']
        path_string = validator._pretty_print_schema_path(path, schema)
        self.assertEqual(path_string, "expert_pred/oneOf/class_name/type")


class TestRecordValidation(base.TestCase):

    def _record(self, **kwargs):
        record = {'id': 'n1', 'text': 'Rash after amoxicillin.',
                  'gold': 'ADE', 'base_probs': [0.3, 0.7]}
        record.update(kwargs)
        return record

    def test_valid_record(self):
        self.assertEqual([], validator.validate_record(self._record()))
        self.assertEqual([], validator.validate_record(
            self._record(expert_pred='ADE', group_id='note-1')))
        self.assertEqual([], validator.validate_record(
            self._record(expert_pred=None, group_id=None)))

    def test_missing_field(self):
        record = self._record()
        del record['base_probs']
        errors = validator.validate_record(record)
        self.assertEqual(["Record failed schema validation at /:\n"
                          "    'base_probs' is a required property"], errors)

    def test_short_distribution(self):
        errors = validator.validate_record(self._record(base_probs=[1.0]),
                                           'Line 2')
        self.assertEqual(["Line 2 failed schema validation at /base_probs:\n"
                          "    expected at least 2 items, got 1"], errors)

    def test_probability_out_of_range(self):
        errors = validator.validate_record(
            self._record(base_probs=[1.5, -0.5]))
        self.assertEqual(2, len(errors))
        self.assertIn('/base_probs/0', errors[0])
        self.assertIn('/base_probs/1', errors[1])

    def test_invalid_expert_pred(self):
        errors = validator.validate_record(self._record(expert_pred=1))
        self.assertEqual(1, len(errors))
        self.assertIn('at /expert_pred:', errors[0])
        self.assertIn('Sub-schemas tested and not matching', errors[0])
        self.assertIn('expert_pred/oneOf/class_name', errors[0])


class TestDocumentValidation(base.TestCase):

    def test_header(self):
        header = {'label_space': {'class_names': ['NO_ADE', 'ADE'],
                                  'positive': 'ADE'},
                  'provenance': 'unit test'}
        self.assertEqual([], validator.validate_header(header))
        header['label_space']['class_names'] = ['ADE', 'ADE']
        self.assertEqual(1, len(validator.validate_header(header)))

    def test_label_space(self):
        self.assertEqual([], validator.validate_label_space(
            {'class_names': ['a', 'b', 'c']}))
        errors = validator.validate_label_space({'class_names': ['a']})
        self.assertEqual(["Label space failed schema validation at "
                          "/class_names:\n"
                          "    expected at least 2 items, got 1"], errors)
        self.assertEqual(1, len(validator.validate_label_space(
            {'class_names': ['a', 'b'], 'negative': 'a'})))

    def test_consensus_pair(self):
        self.assertEqual([], validator.validate_consensus_pair(
            {'id': 'p1', 'label_a': 'ADE', 'label_b': 'NO_ADE'}))
        errors = validator.validate_consensus_pair({'id': 'p1',
                                                    'label_a': 'ADE'})
        self.assertEqual(["Consensus pair failed schema validation at /:\n"
                          "    'label_b' is a required property"], errors)

    def test_expert_response(self):
        self.assertEqual([], validator.validate_expert_response(
            {'label': 'ADE', 'rationale': 'causal phrase present'}))
        self.assertEqual(1, len(validator.validate_expert_response(
            {'prediction': 'ADE'})))

    def test_model_threshold_range(self):
        errors = validator.validate_model({'format_version': 2})
        self.assertIn("Model file failed schema validation at "
                      "/format_version:\n    '2' is not one of ['1']",
                      errors)


class TestSampleFiles(base.TestCase):

    def _sample(self, name):
        return os.path.join(SAMPLE_BASE, name)

    def test_sample_dataset(self):
        with open(self._sample('ade_notes.jsonl')) as f:
            lines = [json.loads(line) for line in f if line.strip()]
        self.assertEqual([], validator.validate_header(lines[0]))
        for i, record in enumerate(lines[1:]):
            self.assertEqual(
                [], validator.validate_record(record, 'Line %d' % (i + 2)))

    def test_sample_consensus_pairs(self):
        with open(self._sample('ade_annotations.jsonl')) as f:
            for line in f:
                if line.strip():
                    self.assertEqual([], validator.validate_consensus_pair(
                        json.loads(line)))

    def test_sample_lexicon(self):
        with open(self._sample('lexicon.yaml')) as f:
            self.assertEqual([], validator.validate_lexicon(
                yaml.safe_load(f)))

    def test_sample_labels(self):
        with open(self._sample('labels.yaml')) as f:
            self.assertEqual([], validator.validate_label_space(
                yaml.safe_load(f)))
