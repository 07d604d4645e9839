"""
End-to-end runs of gen-data, train, eval and analyze on the smoke configuration,
plus the desk-scale experiments behind --run-slow.
"""
import os
import statistics

import numpy as np
import pytest

from adareg.cli import main
from adareg.config.run_config import CATEGORIES, load_run_config
from adareg.data.synth import generate
from adareg.evaluation.metrics import evaluate
from adareg.model.topology import extract_embeddings
from adareg.regularization.analysis import TRAJECTORY_HEADER
from adareg.training.trainer import LOSS_LOG_HEADER, Trainer, compare_collapse, run_training
from adareg.utils.results_handler import read_csv

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))), 'config')
SMOKE = os.path.join(CONFIG_DIR, 'smoke.env')
DESK = os.path.join(CONFIG_DIR, 'desk.env')


@pytest.fixture(scope='module')
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp('pipeline')
    data, run = str(root / 'data'), str(root / 'run')
    assert main(['gen-data', '--config', SMOKE, '--out-dir', data]) == 0
    assert main(['train', '--config', SMOKE, '--data-dir', data, '--out-dir', run]) == 0
    return root, data, run


def _read(path):
    with open(path, 'rb') as file:
        return file.read()


def test_training_outputs(pipeline):
    _, _, run = pipeline
    for name in ('checkpoint.bin', 'loss_log.csv', 'diagnostics.csv', 'reg_snapshots.csv', 'effective_config.env'):
        assert os.path.exists(os.path.join(run, name)), name
    rows = read_csv(os.path.join(run, 'loss_log.csv'), LOSS_LOG_HEADER)
    assert len(rows) == 20
    assert all(np.isfinite(float(r['total'])) for r in rows)
    assert all(float(r['penalty']) >= 0.0 for r in rows)


@pytest.mark.parametrize('protocol', ['same_cam_same_id', 'same_cam'])
def test_eval_writes_report(pipeline, protocol):
    root, data, run = pipeline
    out = str(root / f'eval_{protocol}')
    code = main(['eval', '--checkpoint', os.path.join(run, 'checkpoint.bin'), '--data-dir', data,
                 '--out-dir', out, '--protocol', protocol])
    assert code == 0
    metrics = {r['metric']: r['value'] for r in read_csv(os.path.join(out, 'report.csv'), ('metric', 'value'))}
    assert {'mAP', 'rank1', 'rank5', 'rank10'} <= set(metrics)
    assert metrics['protocol'] == protocol
    assert 0.0 <= float(metrics['mAP']) <= 1.0
    for name in ('query_embeddings.bin', 'gallery_embeddings.bin', 'query_meta.csv', 'gallery_meta.csv',
                 'per_query.csv', 'ranked_lists.csv'):
        assert os.path.exists(os.path.join(out, name)), name


def test_analyze_covers_every_category(pipeline):
    root, _, run = pipeline
    out = str(root / 'analysis')
    assert main(['analyze', '--snapshot-log', os.path.join(run, 'reg_snapshots.csv'), '--out-dir', out]) == 0
    rows = read_csv(os.path.join(out, 'trajectory.csv'), TRAJECTORY_HEADER)
    assert {r['category'] for r in rows} == set(CATEGORIES)
    assert sorted({int(r['iteration']) for r in rows}) == [0, 5, 10, 15, 20]
    histogram = read_csv(os.path.join(out, 'histogram.csv'), ('category', 'bucket_lo', 'bucket_hi', 'count'))
    assert {r['category'] for r in histogram} == set(CATEGORIES)


def test_training_is_bit_identical(pipeline):
    root, data, run = pipeline
    again = str(root / 'run_again')
    assert main(['train', '--config', SMOKE, '--data-dir', data, '--out-dir', again]) == 0
    for name in ('checkpoint.bin', 'loss_log.csv', 'reg_snapshots.csv', 'diagnostics.csv'):
        assert _read(os.path.join(run, name)) == _read(os.path.join(again, name)), name


def test_unconstrained_thetas_go_negative(smoke_config, smoke_dataset):
    config = smoke_config.with_overrides({'reg.mode': 'unconstrained'})
    trainer = Trainer(config, smoke_dataset)
    trainer.run(5)
    assert min(f.theta.item() for f in trainer.model.factors) < 0.0


def test_adaptive_penalty_stays_non_negative(smoke_config, smoke_dataset):
    result = Trainer(smoke_config, smoke_dataset).run(10)
    assert all(row[4] >= 0.0 for row in result.loss_log)
    assert all(0.0 <= row[3] <= row[4] <= smoke_config.reg.amplitude for row in result.diagnostics)


@pytest.mark.slow
def test_unconstrained_mode_collapses():
    config = load_run_config(SMOKE)
    report = compare_collapse(config, generate(config.data), iterations=200)
    assert report.unconstrained_min_theta < 0.0
    assert report.ratio >= 10.0
    assert report.adaptive_min_penalty >= 0.0


DESK_MAP_MARGIN = 0.005


@pytest.mark.slow
def test_desk_experiment(tmp_path):
    config = load_run_config(DESK)
    dataset = generate(config.data)
    scores = {'adaptive': [], 'off': []}
    for seed in (0, 1, 2):
        for mode in scores:
            run_config = config.with_overrides({'reg.mode': mode, 'train.seed': seed})
            result = run_training(run_config, dataset, str(tmp_path / f'{mode}_{seed}'))
            query, gallery = dataset.indices('query'), dataset.indices('gallery')
            report = evaluate(extract_embeddings(result.model, dataset.images[query][:, None]),
                              dataset.identities[query], dataset.cameras[query],
                              extract_embeddings(result.model, dataset.images[gallery][:, None]),
                              dataset.identities[gallery], dataset.cameras[gallery], run_config.eval.protocol)
            scores[mode].append(report.mAP)

    rerun = run_training(config.with_overrides({'train.seed': 0}), dataset, str(tmp_path / 'rerun'))
    assert _read(rerun.checkpoint_path) == _read(str(tmp_path / 'adaptive_0' / 'checkpoint.bin'))
    assert statistics.mean(scores['adaptive']) > statistics.mean(scores['off']) + DESK_MAP_MARGIN

    assert main(['analyze', '--snapshot-log', str(tmp_path / 'adaptive_0' / 'reg_snapshots.csv'),
                 '--out-dir', str(tmp_path / 'analysis')]) == 0
    rows = read_csv(str(tmp_path / 'analysis' / 'trajectory.csv'), TRAJECTORY_HEADER)
    for category in ('conv_kernel', 'bn_gamma', 'bn_beta'):
        medians = {r['median_lambda'] for r in rows if r['category'] == category}
        assert len(medians) > 1, category


@pytest.mark.slow
def test_desk_nonzero_bias_factor_decreases(tmp_path):
    config = load_run_config(DESK, {'model.conv_bias_init': 'normal'})
    result = run_training(config, generate(config.data), str(tmp_path / 'run'))
    lambdas = [next(v.lam for v in s.values if v.param_name == 'backbone.block1.conv.bias')
               for s in result.snapshots]
    assert len(lambdas) > 2
    assert all(later < earlier for earlier, later in zip(lambdas, lambdas[1:]))
