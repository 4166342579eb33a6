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
# Common functions and variables meant to be shared across various modules
# As opposed to the other modules, this is meant to be imported from anywhere.
# We can't import anything from defer_router here.

import json
import logging
import logging.handlers
import os
import sys
import traceback
import zlib

import numpy as np
import yaml

_LOG_FILE = '/var/log/defer-router.log'

# Named sub-streams of the single --seed. Every randomised component draws
# from its own stream so it can be reproduced in isolation.
SPLIT_STREAM = 'split'
FOLDS_STREAM = 'folds'
RANDOM_BASELINE_STREAM = 'random-baseline'
SYNTHETIC_STREAM = 'synthetic'

DEFAULT_SEED = 42

logger = logging.getLogger(__name__)


def log_exceptions(type, value, tb):
    logger.exception(''.join(traceback.format_exception(
        type, value, tb)))
    # calls default excepthook
    sys.__excepthook__(type, value, tb)


def configure_logger(log_file=False, verbose=False, debug=False):
    LOG_FORMAT = ('%(asctime)s.%(msecs)03d %(levelname)s '
                  '%(name)s.%(funcName)s %(message)s')
    DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
    logger = logging.getLogger("defer_router")
    logger.handlers.clear()
    logger_level(logger, verbose, debug)
    logger.propagate = True
    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)
    if log_file:
        file_handler = logging.handlers.RotatingFileHandler(
            _LOG_FILE, maxBytes=10485760, backupCount=7
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)
    # Install exception handler
    sys.excepthook = log_exceptions
    return logger


def logger_level(logger, verbose=False, debug=False):
    log_level = logging.WARN
    if debug:
        log_level = logging.DEBUG
    elif verbose:
        log_level = logging.INFO
    logger.setLevel(log_level)


def rng(seed, stream):
    """Returns a numpy Generator for a named sub-stream of ``seed``.

    The stream name is hashed with crc32 rather than ``hash()`` so the
    mapping is stable across interpreter runs.
    """
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF,
                                  zlib.crc32(stream.encode('utf-8'))])
    return np.random.default_rng(seq)


def load_config_file(filename):
    """Loads a YAML or JSON document. JSON is a subset of YAML."""
    with open(filename, 'r') as f:
        return yaml.safe_load(f.read())


def _ensure_parent(filepath):
    parent = os.path.dirname(filepath)
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_json(filepath, data):
    _ensure_parent(filepath)
    with open(filepath, 'w') as f:
        f.write(dump_json(data))
        f.write('\n')


def dump_json(data):
    return json.dumps(data, indent=2, sort_keys=True)


def write_lines(filepath, rows):
    """Writes one compact JSON object per line."""
    _ensure_parent(filepath)
    with open(filepath, 'w') as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True))
            f.write('\n')
