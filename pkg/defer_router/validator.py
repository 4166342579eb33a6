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
import collections.abc
import copy
import functools

import jsonschema
import pkg_resources
import yaml


@functools.lru_cache(maxsize=None)
def _load_schema():
    schema_string = pkg_resources.resource_string(__name__, "schema.yaml")
    return yaml.safe_load(schema_string)


def get_defer_router_schema():
    """Returns the schema for defer-router's data files."""
    return copy.deepcopy(_load_schema())


def get_schema_for_defined_type(defined_type):
    """Returns the schema for a given defined type of the full schema."""
    full_schema = get_defer_router_schema()
    type_schema = copy.deepcopy(full_schema["definitions"][defined_type])
    type_schema["$schema"] = full_schema["$schema"]
    type_schema["definitions"] = full_schema["definitions"]
    return type_schema


def validate_document(data, defined_type, doc_name):
    """Validates a document against one defined type of the schema.

    If validation fails, returns a list of validation error message strings.
    If validation succeeds, returns an empty list.
    `doc_name` is used to prefix errors with a more specific name.
    """
    return _validate_document(data, doc_name,
                              get_schema_for_defined_type(defined_type))


def validate_record(record, doc_name="Record"):
    return validate_document(record, 'record', doc_name)


def validate_header(header, doc_name="Dataset header"):
    return validate_document(header, 'header', doc_name)


def validate_label_space(label_space, doc_name="Label space"):
    return validate_document(label_space, 'label_space', doc_name)


def validate_consensus_pair(pair, doc_name="Consensus pair"):
    return validate_document(pair, 'consensus_pair', doc_name)


def validate_lexicon(lexicon, doc_name="Lexicon"):
    return validate_document(lexicon, 'lexicon', doc_name)


def validate_model(model, doc_name="Model file"):
    return validate_document(model, 'model', doc_name)


def validate_expert_response(response, doc_name="Expert response"):
    return validate_document(response, 'expert_response', doc_name)


def _validate_document(data, doc_name, schema):
    error_messages = []
    validator = jsonschema.Draft4Validator(schema)
    v_errors = validator.iter_errors(data)
    v_errors = sorted(v_errors, key=lambda e: list(e.path))
    for v_error in v_errors:
        error_message = _get_consistent_error_message(v_error)
        details = _get_detailed_errors(v_error, 1, v_error.schema_path,
                                       schema)

        doc_path = '/'.join([str(x) for x in v_error.path])
        if details:
            error_messages.append(
                "{} failed schema validation at /{}:\n"
                "    {}\n"
                "  Sub-schemas tested and not matching:\n"
                "  {}"
                .format(doc_name, doc_path, error_message,
                        '\n  '.join(details)))
        else:
            error_messages.append(
                "{} failed schema validation at /{}:\n"
                "    {}"
                .format(doc_name, doc_path, error_message))
    return error_messages


def _get_consistent_error_message(error):
    """Returns short, stable error messages for the common validators.

    jsonschema renders instances with repr(), which makes long records and
    float lists unreadable in a one-line error.
    """

    if error.validator == 'type':
        return "'{}' is not of type '{}'".format(
               error.instance, error.validator_value)
    elif error.validator == 'enum':
        return "'{}' is not one of ['{}']".format(
               error.instance,
               "','".join(str(v) for v in error.validator_value))
    elif error.validator == 'required':
        missing = [f for f in error.validator_value
                   if isinstance(error.instance, collections.abc.Mapping) and
                   f not in error.instance]
        if missing:
            return "'{}' is a required property".format(missing[0])
    elif error.validator in ('minItems', 'maxItems'):
        return "expected {} {} items, got {}".format(
            'at least' if error.validator == 'minItems' else 'at most',
            error.validator_value, len(error.instance))
    return error.message


def _get_detailed_errors(error, depth, absolute_schema_path, absolute_schema):
    """Returns a list of error messages from all subschema validations.

    Recurses the error tree and adds one message per sub error.
    """

    if not error.context:
        return []

    details = []
    sub_errors = sorted(error.context, key=lambda e: list(e.schema_path))
    for sub_error in sub_errors:
        schema_path = collections.deque(absolute_schema_path)
        schema_path.extend(sub_error.schema_path)
        details.append("{} {}: {}".format(
            '-' * depth,
            _pretty_print_schema_path(schema_path, absolute_schema),
            _get_consistent_error_message(sub_error)))
        details.extend(_get_detailed_errors(
            sub_error, depth + 1, schema_path, absolute_schema))
    return details


def _pretty_print_schema_path(absolute_schema_path, absolute_schema):
    """Returns a representation of the schema path that's easier to read.

    For example:
    >>> _pretty_print_schema_path("properties/expert_pred/oneOf/0")
    "expert_pred/oneOf/class_name"
    """

    pretty_path = []
    current_schema = absolute_schema
    for item in absolute_schema_path:
        if item not in ["properties"]:
            pretty_path.append(item)
        current_schema = current_schema[item]
        if (isinstance(current_schema, collections.abc.Mapping) and
                '$ref' in current_schema):
            if (isinstance(pretty_path[-1], int) and len(pretty_path) > 1 and
                    pretty_path[-2] in ['oneOf', 'anyOf', 'allOf']):
                pretty_path[-1] = current_schema['$ref'].split('/')[-1]
            ref_path = current_schema['$ref'].split('/')
            current_schema = absolute_schema
            for i in ref_path[1:]:
                current_schema = current_schema[i]
    return '/'.join([str(x) for x in pretty_path])
