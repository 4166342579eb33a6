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



import argparse
import json
import os
import sys

import numpy as np

from defer_router import baselines
from defer_router import common
from defer_router import deferral
from defer_router import evaluation
from defer_router import features
from defer_router import ingestion
from defer_router import metrics
from defer_router import objects
from defer_router import router_service
from defer_router import synthetic
from defer_router import version


logger = common.configure_logger()

DEFAULT_THETA_GRID = '0.6,0.7,0.8,0.9,0.95'
DEFAULT_RATES = '0,0.05,0.07,0.1,0.168,0.2,0.3,0.5,1.0'
DEFAULT_FRACTIONS = '0.7,0.15,0.15'
SPLIT_NAMES = ('train', 'val', 'test')

BASE_POLICY = 'base'
EXPERT_POLICY = 'expert'
FIXED_POLICY = 'fixed'
RANDOM_POLICY = 'random'
LEARNED_POLICY = 'learned'
ORACLE_POLICY = 'oracle'
EVAL_POLICIES = (BASE_POLICY, EXPERT_POLICY, FIXED_POLICY, RANDOM_POLICY,
                 LEARNED_POLICY, ORACLE_POLICY)

# Errors a user can fix from the command line; anything else is a bug and
# keeps its traceback.
_EXPECTED_ERRORS = (objects.InvalidArgumentException,
                    objects.MissingExpertException,
                    deferral.InsufficientDataException,
                    deferral.DegenerateLabelsException,
                    deferral.ModelFormatException,
                    ingestion.IngestionException,
                    OSError)


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected a comma separated list of numbers, got %r' % text)


def _name_list(text):
    return [v.strip() for v in text.split(',') if v.strip()]


def _common_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--seed', metavar='SEED', type=int,
                        default=common.DEFAULT_SEED,
                        help="""seed for every randomised step.""")
    parser.add_argument('--labels', metavar='LABELS_FILE',
                        help="""label-space file (YAML or JSON) for """
                        """datasets without a header line.""",
                        default=None)
    parser.add_argument('--out', metavar='OUT_FILE',
                        help="""write the JSON report to this file.""",
                        default=None)
    parser.add_argument('--format', choices=('table', 'json'),
                        default='table',
                        help="""report format on stdout.""")
    parser.add_argument(
        '-d', '--debug',
        dest="debug",
        action='store_true',
        help="Print debugging output.",
        required=False)
    parser.add_argument(
        '-v', '--verbose',
        dest="verbose",
        action='store_true',
        help="Print verbose output.",
        required=False)
    parser.add_argument(
        '--log-file',
        dest="log_file",
        action='store_true',
        help="Also log to %s." % common._LOG_FILE,
        required=False)
    return parser


def _add_cost_args(parser):
    parser.add_argument('--cost-base', type=float, default=1.0,
                        help="""cost of one base model call.""")
    parser.add_argument('--cost-expert', type=float, default=50.0,
                        help="""cost of one expert call, in base calls.""")
    parser.add_argument('--lat-base-ms', type=float, default=12.0,
                        help="""base model latency in milliseconds.""")
    parser.add_argument('--lat-expert-ms', type=float, default=850.0,
                        help="""expert latency in milliseconds.""")


def parse_opts(argv):
    parser = argparse.ArgumentParser(
        description='Train, evaluate and serve a router that defers '
        'uncertain predictions of a base classifier to an expert model.')
    parser.add_argument('--version', action='version',
                        version=version.version_info.version_string())
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True
    common_args = _common_parser()

    train = subparsers.add_parser(
        'train', parents=[common_args],
        help='fit a deferral model and tune its threshold.')
    train.add_argument('--dataset', metavar='DATASET', required=True,
                       help="""newline-delimited training records.""")
    train.add_argument('--model', metavar='MODEL_FILE', required=True,
                       help="""where to write the model.""")
    train.add_argument('--mode', choices=deferral.MODES,
                       default=deferral.KFOLD,
                       help="""tune the threshold on out-of-fold scores """
                       """(kfold) or on one fit over the whole dataset """
                       """(single-fit).""")
    train.add_argument('--k', type=int, default=5,
                       help="""number of folds in kfold mode.""")
    train.add_argument('--c', type=float, default=1.0,
                       help="""inverse L2 strength.""")
    train.add_argument('--max-iter', type=int, default=1000,
                       help="""solver iteration cap.""")
    train.add_argument('--tol', type=float, default=1e-6,
                       help="""gradient max-norm tolerance.""")
    train.add_argument('--class-weighting', choices=deferral.CLASS_WEIGHTINGS,
                       default=deferral.BALANCED)
    train.add_argument('--objective', choices=metrics.OBJECTIVES,
                       default=None,
                       help="""metric the threshold maximizes. Defaults """
                       """to binary-f1 when the label space names a """
                       """positive class, macro-f1 otherwise.""")
    train.add_argument('--lexicon', metavar='LEXICON_FILE', default=None,
                       help="""keyword lexicon override (YAML or JSON).""")

    evaluate = subparsers.add_parser(
        'eval', parents=[common_args],
        help='compare routing policies on a dataset.')
    evaluate.add_argument('--dataset', metavar='DATASET', required=True)
    evaluate.add_argument('--model', metavar='MODEL_FILE', required=True)
    evaluate.add_argument('--policies', type=_name_list,
                          default=list(EVAL_POLICIES),
                          help="""comma separated subset of: %s."""
                          % ', '.join(EVAL_POLICIES))
    evaluate.add_argument('--theta-grid', type=_float_list,
                          default=_float_list(DEFAULT_THETA_GRID),
                          help="""confidence thresholds of the fixed """
                          """baseline.""")
    evaluate.add_argument('--objective', choices=metrics.OBJECTIVES,
                          default=None)
    _add_cost_args(evaluate)

    consensus = subparsers.add_parser(
        'consensus', parents=[common_args],
        help='keep instances both annotators labelled identically.')
    consensus.add_argument('--pairs', metavar='PAIRS_FILE', required=True,
                           help="""newline-delimited annotator pairs.""")
    consensus.add_argument('--dataset', metavar='DATASET', default=None,
                           help="""dataset to filter and relabel.""")
    consensus.add_argument('--kept', metavar='KEPT_FILE', default=None,
                           help="""where to write the kept records (or the """
                           """kept ids and labels without --dataset).""")

    cost = subparsers.add_parser(
        'cost', parents=[common_args],
        help='relative cost and latency over deferral rates.')
    cost.add_argument('--rates', type=_float_list,
                      default=_float_list(DEFAULT_RATES))
    cost.add_argument('--report', metavar='EVAL_REPORT', default=None,
                      help="""JSON report of an eval run whose rates are """
                      """added to the table.""")
    _add_cost_args(cost)

    serve = subparsers.add_parser(
        'serve', parents=[common_args],
        help='run the HTTP routing service.')
    serve.add_argument('--model', metavar='MODEL_FILE', default=None,
                       help="""model file. Defaults to $%s."""
                       % router_service.ENV_MODEL)
    serve.add_argument('--listen', metavar='HOST:PORT', default=None,
                       help="""listen address. Defaults to $%s or %s."""
                       % (router_service.ENV_LISTEN,
                          router_service.DEFAULT_LISTEN))
    serve.add_argument('--expert-url', metavar='URL', default=None,
                       help="""expert endpoint. Defaults to $%s; without """
                       """one, deferral is disabled."""
                       % router_service.ENV_EXPERT_URL)
    serve.add_argument('--expert-timeout-ms', type=int, default=None)
    serve.add_argument('--expert-retries', type=int, default=None)

    split = subparsers.add_parser(
        'split', parents=[common_args],
        help='split a dataset into train, val and test files.')
    split.add_argument('--dataset', metavar='DATASET', required=True)
    split.add_argument('--fractions', type=_float_list,
                       default=_float_list(DEFAULT_FRACTIONS))
    split.add_argument('--by-group', action='store_true', default=False,
                       help="""keep records sharing a group_id together.""")
    split.add_argument('--out-dir', metavar='OUT_DIR', required=True)

    synth = subparsers.add_parser(
        'synth', parents=[common_args],
        help='write the synthetic complementarity dataset.')
    synth.add_argument('--n', type=int, default=5000)
    synth.add_argument('--hedged-fraction', type=float, default=0.12)
    synth.add_argument('--positive-rate', type=float, default=0.29)
    synth.add_argument('--dataset', metavar='DATASET', required=True,
                       help="""where to write the dataset.""")

    opts = parser.parse_args(argv[1:])

    return opts


def _emit(opts, report, table):
    if opts.out:
        common.write_json(opts.out, report)
        logger.info(f"Wrote report to: {opts.out}")
    if opts.format == 'json':
        print(common.dump_json(report))
    else:
        print(table)


def _load_manifest(opts):
    label_space = None
    if opts.labels:
        label_space = ingestion.load_label_space(opts.labels)
    return ingestion.load_dataset(opts.dataset, label_space)


def _objective(name, label_space):
    if name is None:
        name = (metrics.BINARY_F1 if label_space.positive_index is not None
                else metrics.MACRO_F1)
    return metrics.Objective.for_label_space(name, label_space)


def _cost_model(opts):
    return evaluation.CostModel(opts.cost_base, opts.cost_expert,
                                opts.lat_base_ms, opts.lat_expert_ms)


def cmd_train(opts):
    manifest = _load_manifest(opts)
    lexicon = (features.Lexicon.from_file(opts.lexicon) if opts.lexicon
               else features.Lexicon.default())
    config = deferral.TrainingConfig(C=opts.c, max_iterations=opts.max_iter,
                                     convergence_tolerance=opts.tol,
                                     class_weighting=opts.class_weighting,
                                     seed=opts.seed)
    objective = _objective(opts.objective, manifest.label_space)
    result = deferral.fit_deferral_model(
        manifest.records, manifest.label_space, lexicon, config, objective,
        opts.mode, opts.k, opts.seed)
    model = result.model
    deferral.save_model(model, opts.model)

    errors = deferral.error_labels(manifest.records)
    precision, recall = deferral.error_prediction_scores(
        result.validation_scores, errors, model.threshold)
    batch = evaluation.RecordBatch(manifest.records)
    base = evaluation.evaluate_system(
        batch, baselines.NeverPolicy('base only'), objective)
    validation = evaluation.evaluate_system(
        batch, baselines.ScoredPolicy(result.validation_scores,
                                      model.threshold, 'learned (held out)'),
        objective)
    # the saved model scored on every row, as eval reports it
    fitted = evaluation.evaluate_system(
        batch, baselines.LearnedPolicy(model, 'learned (saved model)'),
        objective)
    coefficients = deferral.report_coefficients(model)
    report = {'mode': opts.mode,
              'n': len(manifest),
              'objective': objective.name,
              'base_error_rate': float(errors.mean()),
              'threshold': model.threshold,
              'error_predictor': {'precision': precision, 'recall': recall},
              'converged': result.fit.converged,
              'iterations': result.fit.iterations,
              'base': base.to_json(),
              'validation': validation.to_json(),
              'fitted': fitted.to_json(),
              'coefficients': [{'feature': name, 'coefficient': value}
                               for name, value in coefficients]}
    if not result.fit.converged:
        logger.warning('The error predictor did not converge; consider '
                       'raising --max-iter')
    table = '\n'.join([
        'Mode: %s, %d records, base error rate %.3f' % (
            opts.mode, len(manifest), errors.mean()),
        'Threshold: %.6g (%s)' % (model.threshold, objective.name),
        'Error predictor precision %.3f, recall %.3f' % (precision, recall),
        'Converged: %s after %d iterations' % (result.fit.converged,
                                               result.fit.iterations),
        '',
        evaluation.format_table([base, validation, fitted]),
        '',
        evaluation.format_rows(('Feature', 'Coefficient'),
                               [(name, '%+.4f' % value)
                                for name, value in coefficients])])
    _emit(opts, report, table)
    return 0


def cmd_eval(opts):
    unknown = set(opts.policies) - set(EVAL_POLICIES)
    if unknown:
        raise objects.InvalidArgumentException(
            'Unknown policies: %s (expected %s)'
            % (', '.join(sorted(unknown)), ', '.join(EVAL_POLICIES)))
    manifest = _load_manifest(opts)
    model = deferral.load_model(opts.model)
    if model.label_space != manifest.label_space:
        raise objects.InvalidArgumentException(
            'The model was trained on classes %s but the dataset has %s'
            % (', '.join(model.label_space.class_names),
               ', '.join(manifest.label_space.class_names)))
    objective = _objective(opts.objective, manifest.label_space)
    cost_model = _cost_model(opts)
    batch = evaluation.RecordBatch(manifest.records)

    def run(policy):
        return evaluation.evaluate_system(batch, policy, objective,
                                          cost_model)

    learned_policy = baselines.LearnedPolicy(
        model, 'learned (tau=%.4g)' % model.threshold)
    learned = None
    if LEARNED_POLICY in opts.policies or RANDOM_POLICY in opts.policies:
        learned = run(learned_policy)

    reports = []
    if BASE_POLICY in opts.policies:
        reports.append(run(baselines.NeverPolicy('base only')))
    if EXPERT_POLICY in opts.policies:
        reports.append(run(baselines.AlwaysPolicy('expert only')))
    if FIXED_POLICY in opts.policies:
        for theta in opts.theta_grid:
            reports.append(run(baselines.FixedThresholdPolicy(theta)))
    if RANDOM_POLICY in opts.policies:
        reports.append(run(baselines.RandomPolicy(learned.deferral_rate,
                                                  opts.seed)))
    if LEARNED_POLICY in opts.policies:
        reports.append(learned)
    if ORACLE_POLICY in opts.policies:
        reports.append(run(baselines.OraclePolicy('oracle')))

    report = {'dataset': opts.dataset,
              'n': batch.n,
              'objective': objective.name,
              'threshold': model.threshold,
              'cost_model': cost_model.to_json(),
              'reports': evaluation.reports_to_json(reports)}
    table = evaluation.format_table(reports)
    if learned is not None:
        breakdown = evaluation.error_breakdown(
            learned_policy.defer_mask(batch), batch.base_preds,
            batch.expert_preds, batch.golds)
        report['learned_error_breakdown'] = breakdown
        table += '\n\nLearned routing residual errors: %s' % ', '.join(
            '%s %d' % (k, v) for k, v in sorted(breakdown.items()))
    _emit(opts, report, table)
    return 0


def cmd_consensus(opts):
    manifest = None
    if opts.dataset:
        manifest = _load_manifest(opts)
        label_space = manifest.label_space
    elif opts.labels:
        label_space = ingestion.load_label_space(opts.labels)
    else:
        raise objects.InvalidArgumentException(
            'consensus needs --labels or a --dataset with a header line')
    pairs = ingestion.load_consensus_pairs(opts.pairs, label_space)
    result = ingestion.consensus_filter(pairs)
    report = {'total': result.total,
              'kept': result.kept_count,
              'agreement_rate': result.agreement_rate}
    if opts.kept:
        if manifest is not None:
            filtered = ingestion.apply_consensus(manifest, result)
            ingestion.save_dataset(filtered, opts.kept)
            report['kept_records'] = len(filtered)
        else:
            common.write_lines(opts.kept, [
                {'id': pair_id, 'label': label_space.name_of(label)}
                for pair_id, label in result.kept.items()])
    table = 'Kept %d of %d pairs (%.2f%% agreement)' % (
        result.kept_count, result.total, 100.0 * result.agreement_rate)
    _emit(opts, report, table)
    return 0


def _report_rates(path):
    with open(path, 'r') as f:
        data = json.load(f)
    rates = []
    for row in data.get('reports', []):
        rates.append((row['policy'], float(row['deferral_rate'])))
    if 'validation' in data:
        rates.append(('train: ' + data['validation']['policy'],
                      float(data['validation']['deferral_rate'])))
    return rates


def cmd_cost(opts):
    cost_model = _cost_model(opts)
    sources = [('grid', rate) for rate in opts.rates]
    if opts.report:
        try:
            sources.extend(_report_rates(opts.report))
        except (ValueError, KeyError, TypeError) as e:
            raise objects.InvalidArgumentException(
                'Cannot read deferral rates from %s: %s' % (opts.report, e))
    rows = []
    for source, rate in sources:
        rows.append({'source': source,
                     'deferral_rate': rate,
                     'relative_cost': evaluation.cascade_cost(rate,
                                                              cost_model),
                     'avg_latency_ms': evaluation.cascade_latency(
                         rate, cost_model),
                     'expert_cost_savings': 1.0 - rate})
    report = {'cost_model': cost_model.to_json(),
              'expert_only': {
                  'relative_cost': evaluation.expert_only_cost(cost_model),
                  'avg_latency_ms': evaluation.expert_only_latency(
                      cost_model)},
              'rows': rows}
    table_rows = [(r['source'], '%.1f%%' % (100.0 * r['deferral_rate']),
                   '%.1fx' % r['relative_cost'],
                   '%.1f' % r['avg_latency_ms'],
                   '%.1f%%' % (100.0 * r['expert_cost_savings']))
                  for r in rows]
    table_rows.append(('expert only', '100.0%',
                       '%.1fx' % evaluation.expert_only_cost(cost_model),
                       '%.1f' % evaluation.expert_only_latency(cost_model),
                       '0.0%'))
    table = evaluation.format_rows(
        ('Source', 'LLM%', 'Cost', 'Latency (ms)', 'Expert calls saved'),
        table_rows)
    _emit(opts, report, table)
    return 0


def cmd_serve(opts):
    model_path = opts.model or os.environ.get(router_service.ENV_MODEL)
    if not model_path:
        raise objects.InvalidArgumentException(
            'serve needs --model or $%s' % router_service.ENV_MODEL)
    host, port = router_service.parse_listen(
        opts.listen or os.environ.get(router_service.ENV_LISTEN) or
        router_service.DEFAULT_LISTEN)
    expert_config = router_service.ExpertClientConfig.from_env(
        endpoint_url=opts.expert_url, timeout_ms=opts.expert_timeout_ms,
        max_retries=opts.expert_retries)
    service = router_service.RouterService(expert_config=expert_config)
    try:
        service.load_model(model_path)
        if not expert_config.enabled:
            logger.warning('No expert endpoint configured; every request '
                           'is answered by the base model')
        try:
            router_service.serve(service, host, port)
        except SystemExit as e:
            # uvicorn exits on bind failures
            if e.code:
                logger.error('Service on %s:%d stopped with exit code %s',
                             host, port, e.code)
                return 1
    finally:
        service.close()
    return 0


def cmd_split(opts):
    if len(opts.fractions) != len(SPLIT_NAMES):
        raise objects.InvalidArgumentException(
            '--fractions needs %d values for %s'
            % (len(SPLIT_NAMES), ', '.join(SPLIT_NAMES)))
    manifest = _load_manifest(opts)
    if opts.by_group:
        splits = ingestion.group_split(manifest.records, opts.fractions,
                                       opts.seed)
    else:
        splits = ingestion.stratified_split(manifest.records,
                                            opts.fractions, opts.seed)
    label_space = manifest.label_space
    report = {'seed': opts.seed, 'by_group': opts.by_group, 'splits': {}}
    rows = []
    for name, records in zip(SPLIT_NAMES, splits):
        path = os.path.join(opts.out_dir, '%s.jsonl' % name)
        provenance = '%s; %s split (seed %d)' % (manifest.provenance, name,
                                                 opts.seed)
        ingestion.save_dataset(
            manifest.with_records(records, provenance.lstrip('; ')), path)
        counts = np.bincount(metrics.gold_labels(records),
                             minlength=label_space.K)
        per_class = {label_space.name_of(i): int(counts[i])
                     for i in range(label_space.K)}
        report['splits'][name] = {'path': path, 'records': len(records),
                                  'classes': per_class}
        rows.append((name, len(records)) + tuple(
            per_class[c] for c in label_space.class_names))
    table = evaluation.format_rows(
        ('Split', 'Records') + label_space.class_names, rows)
    _emit(opts, report, table)
    return 0


def cmd_synth(opts):
    dataset = synthetic.generate_complementarity_dataset(
        opts.n, opts.seed, opts.hedged_fraction, opts.positive_rate)
    ingestion.save_dataset(dataset.manifest, opts.dataset)
    report = {'dataset': opts.dataset,
              'n': len(dataset.manifest),
              'hedged': int(dataset.hedged.sum()),
              'seed': opts.seed}
    table = 'Wrote %d records (%d hedged) to %s' % (
        report['n'], report['hedged'], opts.dataset)
    _emit(opts, report, table)
    return 0


_COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'consensus': cmd_consensus,
    'cost': cmd_cost,
    'serve': cmd_serve,
    'split': cmd_split,
    'synth': cmd_synth,
}


def main(argv=sys.argv, main_logger=None):
    opts = parse_opts(argv)
    if not main_logger:
        main_logger = common.configure_logger(log_file=opts.log_file)
    common.logger_level(main_logger, opts.verbose, opts.debug)

    try:
        return _COMMANDS[opts.command](opts)
    except _EXPECTED_ERRORS as e:
        main_logger.error('%s failed: %s', opts.command, e)
        return 1


if __name__ == '__main__':
    sys.exit(main(sys.argv, main_logger=logger))
