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


import numpy as np

from defer_router import baselines
from defer_router import deferral
from defer_router import evaluation
from defer_router import metrics
from defer_router import objects
from defer_router import synthetic
from defer_router.tests import base


TOY_ROWS = [(1, [0.3, 0.7], 1),
            (0, [0.6, 0.4], 1),
            (1, [0.55, 0.45], 1),
            (0, [0.9, 0.1], 0),
            (1, [0.2, 0.8], 0)]


class TestDeferralRules(base.TestCase):

    def test_fixed_threshold_is_strict(self):
        self.assertFalse(baselines.fixed_threshold_defer([0.5, 0.5], 0.5))
        self.assertTrue(baselines.fixed_threshold_defer([0.6, 0.4], 0.7))
        self.assertFalse(baselines.fixed_threshold_defer([0.2, 0.8], 0.7))

    def test_random_mask_count(self):
        mask = baselines.random_defer_mask(100, 0.168, seed=3)
        self.assertEqual(17, int(mask.sum()))
        np.testing.assert_array_equal(
            mask, baselines.random_defer_mask(100, 0.168, seed=3))
        self.assertEqual(0, int(baselines.random_defer_mask(10, 0.0).sum()))
        self.assertEqual(10, int(baselines.random_defer_mask(10, 1.0).sum()))
        self.assertRaises(objects.InvalidArgumentException,
                          baselines.random_defer_mask, 10, 1.2)

    def test_random_mask_halves_round_up(self):
        self.assertEqual(3, int(baselines.random_defer_mask(5, 0.5).sum()))
        self.assertEqual(2, int(baselines.random_defer_mask(3, 0.5).sum()))
        self.assertEqual(1,
                         int(baselines.random_defer_mask(4, 0.125).sum()))

    def test_oracle(self):
        self.assertTrue(baselines.oracle_defer(0, 1, 1))
        self.assertFalse(baselines.oracle_defer(1, 1, 1))
        self.assertFalse(baselines.oracle_defer(0, 2, 1))


class TestPolicies(base.TestCase):

    def setUp(self):
        super(TestPolicies, self).setUp()
        self.batch = evaluation.RecordBatch(base.make_records(TOY_ROWS))

    def test_masks(self):
        np.testing.assert_array_equal(
            [False] * 5, baselines.NeverPolicy().defer_mask(self.batch))
        np.testing.assert_array_equal(
            [True] * 5, baselines.AlwaysPolicy().defer_mask(self.batch))
        np.testing.assert_array_equal(
            [False, False, True, False, False],
            baselines.FixedThresholdPolicy(0.6).defer_mask(self.batch))
        np.testing.assert_array_equal(
            [False, False, True, False, False],
            baselines.OraclePolicy().defer_mask(self.batch))
        np.testing.assert_array_equal(
            [True, False, False, True, False],
            baselines.ScoredPolicy([0.9, 0.1, 0.4, 0.5, 0.2],
                                   0.5).defer_mask(self.batch))
        self.assertEqual(
            2, int(baselines.RandomPolicy(0.4).defer_mask(self.batch).sum()))

    def test_tags(self):
        self.assertEqual('never', baselines.NeverPolicy().tag)
        self.assertEqual('fixed theta=0.8',
                         baselines.FixedThresholdPolicy(0.8).tag)
        self.assertEqual('random (16.8%)', baselines.RandomPolicy(0.168).tag)
        self.assertEqual('base only', baselines.NeverPolicy('base only').tag)

    def test_scored_policy_size(self):
        policy = baselines.ScoredPolicy([0.5, 0.5], 0.5)
        self.assertRaises(objects.InvalidArgumentException,
                          policy.defer_mask, self.batch)

    def test_policy_from_string(self):
        self.assertIsInstance(baselines.policy_from_string('never'),
                              baselines.NeverPolicy)
        self.assertIsInstance(baselines.policy_from_string('ALWAYS'),
                              baselines.AlwaysPolicy)
        policy = baselines.policy_from_string('fixed:0.9')
        self.assertEqual(0.9, policy.theta)
        policy = baselines.policy_from_string('random:0.25', seed=5)
        self.assertEqual((0.25, 5), (policy.rate, policy.seed))
        self.assertRaises(objects.InvalidArgumentException,
                          baselines.policy_from_string, 'learned')
        self.assertRaises(objects.InvalidArgumentException,
                          baselines.policy_from_string, 'fixed:high')
        self.assertRaises(objects.InvalidArgumentException,
                          baselines.policy_from_string, 'fixed:1.5')
        self.assertRaises(objects.InvalidArgumentException,
                          baselines.policy_from_string, 'coin')


class TestLearnedPolicy(base.TestCase):

    def setUp(self):
        super(TestLearnedPolicy, self).setUp()
        manifest = synthetic.generate_complementarity_dataset(
            n=500, seed=13).manifest
        self.records = manifest.records
        self.model = deferral.fit_deferral_model(self.records,
                                                 manifest.label_space).model
        self.batch = evaluation.RecordBatch(self.records)

    def test_mask_matches_model(self):
        policy = baselines.LearnedPolicy(self.model)
        scores = self.model.score_records(self.records)
        np.testing.assert_array_equal(scores, policy.scores(self.batch))
        np.testing.assert_array_equal(scores >= self.model.threshold,
                                      policy.defer_mask(self.batch))

    def test_oracle_dominates(self):
        objective = metrics.Objective.binary_f1()
        learned = evaluation.evaluate_system(
            self.batch, baselines.LearnedPolicy(self.model), objective)
        oracle = evaluation.evaluate_system(
            self.batch, baselines.OraclePolicy(), objective)
        policies = [baselines.NeverPolicy(), baselines.AlwaysPolicy(),
                    baselines.FixedThresholdPolicy(0.8),
                    baselines.RandomPolicy(learned.deferral_rate)]
        for policy in policies:
            report = evaluation.evaluate_system(self.batch, policy,
                                                objective)
            self.assertGreaterEqual(oracle.f1, report.f1)
            self.assertGreaterEqual(oracle.accuracy, report.accuracy)
        self.assertGreaterEqual(oracle.f1, learned.f1)
        self.assertEqual(1.0, oracle.deferred_expert_accuracy)

    def test_random_matches_learned_rate(self):
        objective = metrics.Objective.binary_f1()
        learned = evaluation.evaluate_system(
            self.batch, baselines.LearnedPolicy(self.model), objective)
        random = evaluation.evaluate_system(
            self.batch, baselines.RandomPolicy(learned.deferral_rate),
            objective)
        self.assertEqual(learned.deferred_count, random.deferred_count)


class TestOracleDominance(base.TestCase):

    def test_random_datasets(self):
        gen = np.random.default_rng(17)
        for seed in range(500):
            records = base.random_records(gen, 30)
            batch = evaluation.RecordBatch(records)
            objective = metrics.Objective.binary_f1()
            oracle = evaluation.evaluate_system(
                batch, baselines.OraclePolicy(), objective)
            policies = [baselines.NeverPolicy(), baselines.AlwaysPolicy(),
                        baselines.FixedThresholdPolicy(0.7),
                        baselines.RandomPolicy(0.3, seed),
                        baselines.ScoredPolicy(gen.random(30), 0.5)]
            for policy in policies:
                report = evaluation.evaluate_system(batch, policy,
                                                    objective)
                self.assertGreaterEqual(oracle.accuracy, report.accuracy)
            rescued = np.sum((batch.base_preds != batch.golds) &
                             (batch.expert_preds == batch.golds))
            self.assertEqual(rescued / 30.0, oracle.deferral_rate)
