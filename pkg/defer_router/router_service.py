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
import os
import time
from typing import List
from typing import Optional

import fastapi
from fastapi import exceptions as fastapi_exceptions
from fastapi import responses
import httpx
from oslo_concurrency import lockutils
from oslo_utils import netutils
from oslo_utils import strutils
import pydantic
import uvicorn

from defer_router import deferral
from defer_router import metrics
from defer_router import objects
from defer_router import validator


logger = logging.getLogger(__name__)

SOURCE_BASE = 'base'
SOURCE_EXPERT = 'expert'
SOURCE_FALLBACK = 'base_fallback'

DEFAULT_TIMEOUT_MS = 10000
DEFAULT_MAX_RETRIES = 1
DEFAULT_LISTEN = '127.0.0.1:8080'
DEFAULT_PORT = 8080

ENV_MODEL = 'DEFER_ROUTER_MODEL'
ENV_LISTEN = 'DEFER_ROUTER_LISTEN'
ENV_EXPERT_URL = 'DEFER_ROUTER_EXPERT_URL'
ENV_EXPERT_TIMEOUT_MS = 'DEFER_ROUTER_EXPERT_TIMEOUT_MS'
ENV_EXPERT_RETRIES = 'DEFER_ROUTER_EXPERT_RETRIES'
ENV_EXPERT_TOKEN = 'DEFER_ROUTER_EXPERT_TOKEN'
ENV_EXPERT_VERIFY_TLS = 'DEFER_ROUTER_EXPERT_VERIFY_TLS'

_MODEL_LOCK = 'defer-router-model'

DEFER_DISABLED_WARNING = ('deferral disabled: no expert endpoint is '
                          'configured, returning the base prediction')


class ExpertUnavailableException(Exception):
    pass


class ModelNotLoadedException(Exception):
    pass


def _non_negative_int(value, name, minimum=0):
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise objects.InvalidArgumentException(
            '%s must be an integer, got %r' % (name, value))
    if value < minimum:
        raise objects.InvalidArgumentException(
            '%s must be >= %d, got %d' % (name, minimum, value))
    return value


class ExpertClientConfig(object):
    """Where and how to reach the expert model.

    The auth token is only ever read from the environment and never
    logged.
    """

    def __init__(self, endpoint_url=None, timeout_ms=DEFAULT_TIMEOUT_MS,
                 auth_token=None, max_retries=DEFAULT_MAX_RETRIES,
                 verify_tls=True):
        self.endpoint_url = endpoint_url or None
        self.timeout_ms = _non_negative_int(timeout_ms, 'Expert timeout', 1)
        self.auth_token = auth_token or None
        self.max_retries = _non_negative_int(max_retries, 'Expert retries')
        self.verify_tls = verify_tls

    @property
    def enabled(self):
        return self.endpoint_url is not None

    @property
    def timeout(self):
        return httpx.Timeout(self.timeout_ms / 1000.0)

    def headers(self):
        headers = {'Accept': 'application/json'}
        if self.auth_token:
            headers['Authorization'] = 'Bearer %s' % self.auth_token
        return headers

    def to_log_dict(self):
        return strutils.mask_dict_password(
            {'endpoint_url': self.endpoint_url,
             'timeout_ms': self.timeout_ms,
             'max_retries': self.max_retries,
             'verify_tls': self.verify_tls,
             'auth_token': self.auth_token})

    def __repr__(self):
        return 'ExpertClientConfig(%r)' % (self.to_log_dict(),)

    @staticmethod
    def from_env(environ=None, endpoint_url=None, timeout_ms=None,
                 max_retries=None):
        """Builds a config from flags, falling back to the environment."""
        environ = os.environ if environ is None else environ
        if endpoint_url is None:
            endpoint_url = environ.get(ENV_EXPERT_URL)
        if timeout_ms is None:
            timeout_ms = environ.get(ENV_EXPERT_TIMEOUT_MS,
                                     DEFAULT_TIMEOUT_MS)
        if max_retries is None:
            max_retries = environ.get(ENV_EXPERT_RETRIES,
                                      DEFAULT_MAX_RETRIES)
        verify_tls = strutils.bool_from_string(
            environ.get(ENV_EXPERT_VERIFY_TLS, 'true'), default=True)
        return ExpertClientConfig(endpoint_url, timeout_ms,
                                  environ.get(ENV_EXPERT_TOKEN), max_retries,
                                  verify_tls)


def parse_listen(listen):
    """Splits 'host:port' (or '[v6]:port') into (host, port)."""
    try:
        host, port = netutils.parse_host_port(listen,
                                              default_port=DEFAULT_PORT)
    except ValueError as e:
        raise objects.InvalidArgumentException(
            'Invalid listen address %r: %s' % (listen, e))
    port = _non_negative_int(port, 'Listen port', 1)
    if port > 65535 or not host:
        raise objects.InvalidArgumentException(
            'Invalid listen address %r' % (listen,))
    return host, port


class RouteRequest(pydantic.BaseModel):
    text: str
    base_probs: List[float] = pydantic.Field(min_length=2)
    request_id: Optional[str] = None


class RouteResponse(pydantic.BaseModel):
    prediction: str
    source: str
    deferral_score: float
    threshold: float
    latency_ms: float
    request_id: Optional[str] = None
    warning: Optional[str] = None


def call_expert(text, config, label_space, client):
    """Asks the expert endpoint for a label; returns its class index.

    Sends {"text": ...} and expects {"label": <class name>}. Transport
    errors and HTTP errors are retried up to config.max_retries times; a
    response that parses but names no known class is not retried.
    """
    if not config.enabled:
        raise ExpertUnavailableException('No expert endpoint configured')
    attempts = 1 + config.max_retries
    reason = None
    for attempt in range(1, attempts + 1):
        try:
            response = client.post(config.endpoint_url, json={'text': text},
                                    headers=config.headers(),
                                    timeout=config.timeout)
            response.raise_for_status()
            data = response.json()
        except httpx.TimeoutException:
            reason = 'timed out after %d ms' % config.timeout_ms
        except httpx.HTTPStatusError as e:
            reason = 'HTTP %d' % e.response.status_code
        except httpx.HTTPError as e:
            reason = '%s: %s' % (e.__class__.__name__, e)
        except ValueError:
            reason = 'response is not valid JSON'
        else:
            errors = validator.validate_expert_response(data)
            if errors:
                raise ExpertUnavailableException(' '.join(errors[0].split()))
            label = data['label']
            if label not in label_space.class_names:
                raise ExpertUnavailableException(
                    'Expert returned unknown label %r' % label)
            return label_space.index_of(label)
        logger.warning('Expert call attempt %d/%d failed: %s', attempt,
                       attempts, reason)
    raise ExpertUnavailableException(
        'Expert endpoint unavailable after %d attempts: %s'
        % (attempts, reason))


class RouterService(object):
    """Routes live requests between the base prediction and the expert."""

    def __init__(self, model=None, expert_config=None, client=None):
        self._model = model
        self.model_path = None
        self.expert_config = expert_config or ExpertClientConfig()
        self._client = client or httpx.Client(
            verify=self.expert_config.verify_tls)

    @property
    def model(self):
        return self._model

    def load_model(self, path):
        """Loads a model file and swaps it in atomically.

        A file that fails to load leaves the current model in place.
        """
        model = deferral.load_model(path)
        with lockutils.lock(_MODEL_LOCK):
            previous = self._model
            self._model = model
            self.model_path = path
        logger.info('%s deferral model from %s (threshold %.6g)',
                    'Reloaded' if previous is not None else 'Loaded',
                    path, model.threshold)
        return model

    def handle_route(self, req):
        start = time.monotonic()
        # One model reference per request, so a concurrent reload is
        # never observed halfway.
        model = self._model
        if model is None:
            raise ModelNotLoadedException('No deferral model is loaded')
        probs = objects.ProbabilityDistribution(req.base_probs,
                                                model.label_space)
        score = model.score(req.text, probs)
        base_pred = metrics.base_prediction(probs)
        prediction = base_pred
        warning = None
        if not model.defers(score):
            source = SOURCE_BASE
        elif not self.expert_config.enabled:
            source = SOURCE_FALLBACK
            warning = DEFER_DISABLED_WARNING
        else:
            try:
                prediction = call_expert(req.text, self.expert_config,
                                         model.label_space, self._client)
                source = SOURCE_EXPERT
            except ExpertUnavailableException as e:
                source = SOURCE_FALLBACK
                warning = 'expert unavailable: %s' % e
                logger.warning('Falling back to the base prediction for '
                               'request %s: %s', req.request_id or '-', e)
        return RouteResponse(
            prediction=model.label_space.name_of(prediction),
            source=source, deferral_score=score, threshold=model.threshold,
            latency_ms=(time.monotonic() - start) * 1000.0,
            request_id=req.request_id, warning=warning)

    def health(self):
        model = self._model
        status = {'status': 'ok' if model is not None else 'degraded',
                  'model_loaded': model is not None,
                  'expert_configured': self.expert_config.enabled,
                  'defer_enabled': (model is not None and
                                    self.expert_config.enabled)}
        if model is not None:
            status.update({'format_version': model.format_version,
                           'threshold': model.threshold,
                           'label_space': model.label_space.to_json(),
                           'model_path': self.model_path})
        return status

    def close(self):
        self._client.close()


def _field_errors(exc):
    errors = []
    for error in exc.errors():
        loc = [str(p) for p in error.get('loc', ()) if p != 'body']
        errors.append({'field': '.'.join(loc) or 'body',
                       'message': error.get('msg', '')})
    return errors


def create_app(service):
    app = fastapi.FastAPI(title='defer-router')
    app.state.service = service

    @app.exception_handler(fastapi_exceptions.RequestValidationError)
    async def validation_error(request, exc):
        return responses.JSONResponse(status_code=400,
                                      content={'errors': _field_errors(exc)})

    @app.post('/v1/route', response_model=RouteResponse,
              response_model_exclude_none=True)
    def route(req: RouteRequest):
        try:
            return service.handle_route(req)
        except ModelNotLoadedException as e:
            raise fastapi.HTTPException(status_code=503, detail=str(e))
        except objects.InvalidArgumentException as e:
            return responses.JSONResponse(
                status_code=400,
                content={'errors': [{'field': 'base_probs',
                                     'message': str(e)}]})

    @app.get('/v1/health')
    def health():
        return service.health()

    return app


def serve(service, host, port):
    """Runs the HTTP service until SIGINT or SIGTERM."""
    logger.info('Serving on %s:%d with expert %r', host, port,
                service.expert_config)
    # log_config=None keeps the handlers configure_logger installed
    uvicorn.run(create_app(service), host=host, port=port, log_config=None)
