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


import http.server
import json
import threading
import time

from fastapi import testclient
import httpx
import numpy as np

from defer_router import baselines
from defer_router import deferral
from defer_router import evaluation
from defer_router import features
from defer_router import objects
from defer_router import router_service
from defer_router import synthetic
from defer_router.tests import base


def _confidence_model(label_space=base.BINARY_LABELS, threshold=0.5):
    # score = sigmoid(7.5 - 10 * confidence): defers below 0.75 confidence
    lexicon = features.Lexicon.default()
    weights = np.zeros(features.FEATURE_COUNT)
    weights[0] = -10.0
    return deferral.DeferralModel(
        features.FeatureSchema.for_lexicon(lexicon),
        deferral.Standardizer(np.zeros(features.FEATURE_COUNT),
                              np.ones(features.FEATURE_COUNT)),
        weights, 7.5, threshold, label_space, lexicon)


class FakeExpert(object):
    """Serves a fixed answer and records every request it sees."""

    def __init__(self, label='ADE', status_code=200, body=None, exc=None):
        self.label = label
        self.status_code = status_code
        self.body = body
        self.exc = exc
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        if self.exc is not None:
            raise self.exc('expert down', request=request)
        if self.body is not None:
            return httpx.Response(self.status_code, content=self.body)
        return httpx.Response(self.status_code, json={'label': self.label})

    def client(self):
        return httpx.Client(transport=httpx.MockTransport(self))


class TestExpertClientConfig(base.TestCase):

    def test_defaults(self):
        config = router_service.ExpertClientConfig()
        self.assertFalse(config.enabled)
        self.assertEqual(10000, config.timeout_ms)
        self.assertEqual(1, config.max_retries)
        self.assertTrue(config.verify_tls)

    def test_headers(self):
        config = router_service.ExpertClientConfig('http://expert/v1',
                                                   auth_token='s3cret')
        self.assertEqual('Bearer s3cret',
                         config.headers()['Authorization'])
        anonymous = router_service.ExpertClientConfig('http://expert/v1')
        self.assertNotIn('Authorization', anonymous.headers())

    def test_token_is_masked(self):
        config = router_service.ExpertClientConfig('http://expert/v1',
                                                   auth_token='s3cret')
        self.assertNotIn('s3cret', repr(config))
        self.assertNotIn('s3cret', json.dumps(config.to_log_dict()))
        self.assertEqual('http://expert/v1',
                         config.to_log_dict()['endpoint_url'])

    def test_invalid_values(self):
        self.assertRaises(objects.InvalidArgumentException,
                          router_service.ExpertClientConfig, 'http://e',
                          timeout_ms=0)
        self.assertRaises(objects.InvalidArgumentException,
                          router_service.ExpertClientConfig, 'http://e',
                          max_retries=-1)
        self.assertRaises(objects.InvalidArgumentException,
                          router_service.ExpertClientConfig, 'http://e',
                          timeout_ms='soon')

    def test_from_env(self):
        environ = {router_service.ENV_EXPERT_URL: 'http://expert/v1',
                   router_service.ENV_EXPERT_TIMEOUT_MS: '2500',
                   router_service.ENV_EXPERT_RETRIES: '3',
                   router_service.ENV_EXPERT_TOKEN: 's3cret',
                   router_service.ENV_EXPERT_VERIFY_TLS: 'false'}
        config = router_service.ExpertClientConfig.from_env(environ)
        self.assertEqual('http://expert/v1', config.endpoint_url)
        self.assertEqual(2500, config.timeout_ms)
        self.assertEqual(3, config.max_retries)
        self.assertEqual('s3cret', config.auth_token)
        self.assertFalse(config.verify_tls)

    def test_flags_override_env(self):
        environ = {router_service.ENV_EXPERT_URL: 'http://expert/v1',
                   router_service.ENV_EXPERT_TIMEOUT_MS: '2500'}
        config = router_service.ExpertClientConfig.from_env(
            environ, endpoint_url='http://other/v1', timeout_ms=300,
            max_retries=0)
        self.assertEqual('http://other/v1', config.endpoint_url)
        self.assertEqual(300, config.timeout_ms)
        self.assertEqual(0, config.max_retries)
        self.assertIsNone(config.auth_token)

    def test_empty_env(self):
        config = router_service.ExpertClientConfig.from_env({})
        self.assertFalse(config.enabled)
        self.assertTrue(config.verify_tls)


class TestParseListen(base.TestCase):

    def test_host_port(self):
        self.assertEqual(('0.0.0.0', 9000),
                         router_service.parse_listen('0.0.0.0:9000'))

    def test_default_port(self):
        self.assertEqual(('localhost', 8080),
                         router_service.parse_listen('localhost'))

    def test_ipv6(self):
        self.assertEqual(('::1', 8081),
                         router_service.parse_listen('[::1]:8081'))

    def test_invalid(self):
        for listen in ('localhost:99999', 'localhost:http', ':8080'):
            self.assertRaises(objects.InvalidArgumentException,
                              router_service.parse_listen, listen)


class TestCallExpert(base.TestCase):

    def _config(self, **kwargs):
        return router_service.ExpertClientConfig('http://expert/v1',
                                                 **kwargs)

    def test_returns_class_index(self):
        expert = FakeExpert('ADE')
        index = router_service.call_expert('note', self._config(),
                                           base.BINARY_LABELS,
                                           expert.client())
        self.assertEqual(1, index)
        self.assertEqual(1, len(expert.requests))
        self.assertEqual({'text': 'note'},
                         json.loads(expert.requests[0].content))

    def test_sends_token(self):
        expert = FakeExpert('NO_ADE')
        router_service.call_expert('note', self._config(auth_token='s3cret'),
                                   base.BINARY_LABELS, expert.client())
        self.assertEqual('Bearer s3cret',
                         expert.requests[0].headers['Authorization'])

    def test_retries_http_errors(self):
        expert = FakeExpert(status_code=500)
        e = self.assertRaises(router_service.ExpertUnavailableException,
                              router_service.call_expert, 'note',
                              self._config(max_retries=2),
                              base.BINARY_LABELS, expert.client())
        self.assertEqual(3, len(expert.requests))
        self.assertIn('HTTP 500', str(e))

    def test_timeout(self):
        expert = FakeExpert(exc=httpx.ReadTimeout)
        e = self.assertRaises(router_service.ExpertUnavailableException,
                              router_service.call_expert, 'note',
                              self._config(max_retries=0, timeout_ms=250),
                              base.BINARY_LABELS, expert.client())
        self.assertEqual(1, len(expert.requests))
        self.assertIn('timed out after 250 ms', str(e))

    def test_timeout_bounds_wall_clock(self):
        class SlowExpert(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                time.sleep(1.0)
                try:
                    self.send_response(200)
                    self.end_headers()
                    self.wfile.write(b'{"label": "ADE"}')
                except OSError:
                    pass

            def log_message(self, format, *args):
                pass

        server = http.server.ThreadingHTTPServer(('127.0.0.1', 0),
                                                 SlowExpert)
        self.addCleanup(server.server_close)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        self.addCleanup(server.shutdown)
        client = httpx.Client(trust_env=False)
        self.addCleanup(client.close)
        config = router_service.ExpertClientConfig(
            'http://127.0.0.1:%d/v1' % server.server_address[1],
            timeout_ms=300, max_retries=1)
        start = time.monotonic()
        e = self.assertRaises(router_service.ExpertUnavailableException,
                              router_service.call_expert, 'note', config,
                              base.BINARY_LABELS, client)
        elapsed = time.monotonic() - start
        self.assertIn('after 2 attempts', str(e))
        self.assertIn('timed out after 300 ms', str(e))
        self.assertLess(elapsed, 2 * 0.3 + 0.5)

    def test_connection_error(self):
        expert = FakeExpert(exc=httpx.ConnectError)
        e = self.assertRaises(router_service.ExpertUnavailableException,
                              router_service.call_expert, 'note',
                              self._config(), base.BINARY_LABELS,
                              expert.client())
        self.assertEqual(2, len(expert.requests))
        self.assertIn('ConnectError', str(e))

    def test_invalid_json_is_retried(self):
        expert = FakeExpert(body=b'not json')
        e = self.assertRaises(router_service.ExpertUnavailableException,
                              router_service.call_expert, 'note',
                              self._config(), base.BINARY_LABELS,
                              expert.client())
        self.assertEqual(2, len(expert.requests))
        self.assertIn('not valid JSON', str(e))

    def test_unknown_label_is_not_retried(self):
        expert = FakeExpert('MAYBE')
        e = self.assertRaises(router_service.ExpertUnavailableException,
                              router_service.call_expert, 'note',
                              self._config(), base.BINARY_LABELS,
                              expert.client())
        self.assertEqual(1, len(expert.requests))
        self.assertIn("'MAYBE'", str(e))

    def test_malformed_response(self):
        expert = FakeExpert(body=b'{"answer": "ADE"}')
        self.assertRaises(router_service.ExpertUnavailableException,
                          router_service.call_expert, 'note',
                          self._config(), base.BINARY_LABELS,
                          expert.client())
        self.assertEqual(1, len(expert.requests))

    def test_not_configured(self):
        expert = FakeExpert()
        self.assertRaises(router_service.ExpertUnavailableException,
                          router_service.call_expert, 'note',
                          router_service.ExpertClientConfig(),
                          base.BINARY_LABELS, expert.client())
        self.assertEqual([], expert.requests)


class TestRouteEndpoint(base.TestCase):

    def setUp(self):
        super(TestRouteEndpoint, self).setUp()
        self.expert = FakeExpert('ADE')
        self.config = router_service.ExpertClientConfig(
            'http://expert/v1', auth_token='s3cret', max_retries=0)
        self.service = router_service.RouterService(
            _confidence_model(), self.config, self.expert.client())
        self.addCleanup(self.service.close)
        self.client = testclient.TestClient(
            router_service.create_app(self.service))

    def _route(self, probs, text='note', **kwargs):
        body = {'text': text, 'base_probs': probs}
        body.update(kwargs)
        return self.client.post('/v1/route', json=body)

    def test_confident_stays_on_base(self):
        response = self._route([0.95, 0.05], request_id='req-1')
        self.assertEqual(200, response.status_code)
        data = response.json()
        self.assertEqual('NO_ADE', data['prediction'])
        self.assertEqual('base', data['source'])
        self.assertEqual('req-1', data['request_id'])
        self.assertEqual(0.5, data['threshold'])
        self.assertLess(data['deferral_score'], 0.5)
        self.assertGreaterEqual(data['latency_ms'], 0.0)
        self.assertNotIn('warning', data)
        self.assertEqual([], self.expert.requests)

    def test_uncertain_goes_to_expert(self):
        response = self._route([0.55, 0.45])
        data = response.json()
        self.assertEqual(200, response.status_code)
        self.assertEqual('ADE', data['prediction'])
        self.assertEqual('expert', data['source'])
        self.assertGreaterEqual(data['deferral_score'], 0.5)
        self.assertNotIn('request_id', data)
        self.assertEqual(1, len(self.expert.requests))
        self.assertEqual('Bearer s3cret',
                         self.expert.requests[0].headers['Authorization'])

    def test_score_matches_model(self):
        data = self._route([0.6, 0.4], text='rash secondary to drug').json()
        model = self.service.model
        self.assertEqual(
            model.score('rash secondary to drug',
                        objects.ProbabilityDistribution([0.6, 0.4])),
            data['deferral_score'])

    def test_expert_failure_falls_back(self):
        self.expert.status_code = 503
        data = self._route([0.55, 0.45], request_id='req-2').json()
        self.assertEqual('NO_ADE', data['prediction'])
        self.assertEqual('base_fallback', data['source'])
        self.assertIn('expert unavailable', data['warning'])
        self.assertIn('HTTP 503', data['warning'])
        self.assertIn('req-2', self.log_fixture.output)
        self.assertNotIn('s3cret', self.log_fixture.output)

    def test_no_expert_configured(self):
        service = router_service.RouterService(
            _confidence_model(), client=self.expert.client())
        self.addCleanup(service.close)
        client = testclient.TestClient(router_service.create_app(service))
        data = client.post('/v1/route', json={
            'text': 'note', 'base_probs': [0.55, 0.45]}).json()
        self.assertEqual('NO_ADE', data['prediction'])
        self.assertEqual('base_fallback', data['source'])
        self.assertEqual(router_service.DEFER_DISABLED_WARNING,
                         data['warning'])
        self.assertEqual([], self.expert.requests)

    def test_missing_field(self):
        response = self.client.post('/v1/route',
                                    json={'base_probs': [0.5, 0.5]})
        self.assertEqual(400, response.status_code)
        self.assertEqual(['text'],
                         [e['field'] for e in response.json()['errors']])

    def test_too_few_probabilities(self):
        response = self._route([1.0])
        self.assertEqual(400, response.status_code)
        self.assertEqual('base_probs',
                         response.json()['errors'][0]['field'])

    def test_not_a_distribution(self):
        response = self._route([0.7, 0.7])
        self.assertEqual(400, response.status_code)
        errors = response.json()['errors']
        self.assertEqual('base_probs', errors[0]['field'])
        self.assertIn('sum to', errors[0]['message'])
        self.assertEqual([], self.expert.requests)

    def test_wrong_class_count(self):
        response = self._route([0.2, 0.3, 0.5])
        self.assertEqual(400, response.status_code)
        self.assertIn('label space has 2 classes',
                      response.json()['errors'][0]['message'])

    def test_no_model_loaded(self):
        service = router_service.RouterService(client=self.expert.client())
        self.addCleanup(service.close)
        client = testclient.TestClient(router_service.create_app(service))
        response = client.post('/v1/route', json={
            'text': 'note', 'base_probs': [0.5, 0.5]})
        self.assertEqual(503, response.status_code)
        self.assertIn('No deferral model', response.json()['detail'])

    def test_health(self):
        data = self.client.get('/v1/health').json()
        self.assertEqual('ok', data['status'])
        self.assertTrue(data['model_loaded'])
        self.assertTrue(data['defer_enabled'])
        self.assertEqual(0.5, data['threshold'])
        self.assertEqual(['NO_ADE', 'ADE'],
                         data['label_space']['class_names'])

    def test_health_without_model(self):
        service = router_service.RouterService()
        self.addCleanup(service.close)
        client = testclient.TestClient(router_service.create_app(service))
        data = client.get('/v1/health').json()
        self.assertEqual('degraded', data['status'])
        self.assertFalse(data['model_loaded'])
        self.assertFalse(data['defer_enabled'])
        self.assertNotIn('threshold', data)


class TestModelReload(base.TestCase):

    def setUp(self):
        super(TestModelReload, self).setUp()
        self.service = router_service.RouterService(
            client=FakeExpert().client())
        self.addCleanup(self.service.close)

    def test_load_model(self):
        path = self.temp_path('model.json')
        deferral.save_model(_confidence_model(), path)
        model = self.service.load_model(path)
        self.assertEqual(_confidence_model(), model)
        self.assertIs(model, self.service.model)
        self.assertEqual(path, self.service.model_path)

    def test_reload_swaps_model(self):
        first = self.temp_path('first.json')
        second = self.temp_path('second.json')
        deferral.save_model(_confidence_model(), first)
        deferral.save_model(_confidence_model(threshold=0.9), second)
        self.service.load_model(first)
        self.service.load_model(second)
        self.assertEqual(0.9, self.service.model.threshold)
        self.assertEqual(second, self.service.model_path)

    def test_bad_file_keeps_current_model(self):
        good = self.temp_path('model.json')
        bad = self.temp_path('bad.json')
        deferral.save_model(_confidence_model(), good)
        with open(bad, 'w') as f:
            f.write('{"format_version": 1')
        current = self.service.load_model(good)
        self.assertRaises(deferral.ModelFormatException,
                          self.service.load_model, bad)
        self.assertIs(current, self.service.model)
        self.assertEqual(good, self.service.model_path)


class TestLiveMatchesBatch(base.TestCase):
    """Live routing decisions equal the batch routing of the same rows."""

    def setUp(self):
        super(TestLiveMatchesBatch, self).setUp()
        manifest = synthetic.generate_complementarity_dataset(
            n=200, seed=3).manifest
        self.records = manifest.records
        result = deferral.fit_deferral_model(
            self.records, manifest.label_space, mode=deferral.SINGLE_FIT)
        path = self.temp_path('model.json')
        deferral.save_model(result.model, path)
        self.model = deferral.load_model(path)
        self.current = None
        self.service = router_service.RouterService(
            self.model,
            router_service.ExpertClientConfig('http://expert/v1'),
            httpx.Client(transport=httpx.MockTransport(self._expert)))
        self.addCleanup(self.service.close)
        self.client = testclient.TestClient(
            router_service.create_app(self.service))

    def _expert(self, request):
        label = self.model.label_space.name_of(self.current.expert_pred)
        return httpx.Response(200, json={'label': label})

    def test_decisions_match(self):
        batch = evaluation.RecordBatch(self.records)
        policy = baselines.LearnedPolicy(self.model)
        mask = policy.defer_mask(batch)
        expected = evaluation.route_batch(mask, batch.base_preds,
                                          batch.expert_preds)
        scores = policy.scores(batch)
        for i, record in enumerate(self.records):
            self.current = record
            data = self.client.post('/v1/route', json={
                'text': record.text,
                'base_probs': list(record.base_probs.probs),
                'request_id': record.id}).json()
            self.assertEqual(record.id, data['request_id'])
            self.assertEqual(scores[i], data['deferral_score'])
            self.assertEqual('expert' if mask[i] else 'base',
                             data['source'])
            self.assertEqual(self.model.label_space.name_of(expected[i]),
                             data['prediction'])
        self.assertGreater(int(mask.sum()), 0)

    def test_expert_down_falls_back_on_deferred_rows(self):
        def refuse(request):
            raise httpx.ConnectError('connection refused', request=request)

        service = router_service.RouterService(
            self.model,
            router_service.ExpertClientConfig('http://expert/v1',
                                              max_retries=0),
            httpx.Client(transport=httpx.MockTransport(refuse)))
        self.addCleanup(service.close)
        client = testclient.TestClient(router_service.create_app(service))
        batch = evaluation.RecordBatch(self.records)
        mask = baselines.LearnedPolicy(self.model).defer_mask(batch)
        for i, record in enumerate(self.records):
            data = client.post('/v1/route', json={
                'text': record.text,
                'base_probs': list(record.base_probs.probs)}).json()
            self.assertEqual(
                self.model.label_space.name_of(batch.base_preds[i]),
                data['prediction'])
            if mask[i]:
                self.assertEqual('base_fallback', data['source'])
                self.assertIn('expert unavailable', data['warning'])
            else:
                self.assertEqual('base', data['source'])
                self.assertNotIn('warning', data)
        self.assertGreater(int(mask.sum()), 0)
