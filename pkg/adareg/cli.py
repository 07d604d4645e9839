"""
Command Line Interface
Subcommands: gen-data, train, eval, analyze, gradcheck and collapse.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure,
3 I/O failure.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

from adareg.config.run_config import PROTOCOLS, REG_MODES, RunConfig, load_run_config, to_flat
from adareg.data.storage import load_dataset, save_dataset
from adareg.data.synth import generate, nearest_centroid_accuracy
from adareg.evaluation.metrics import evaluate
from adareg.evaluation.report_io import write_embeddings, write_meta, write_report
from adareg.model.checkpoint import load_checkpoint, restore_model
from adareg.model.topology import extract_embeddings
from adareg.regularization.analysis import (
    factor_histogram,
    median_trajectory,
    read_snapshot_log,
    write_histogram_csv,
    write_trajectory_csv,
)
from adareg.training.gradcheck_suite import run_gradcheck_suite
from adareg.training.trainer import SNAPSHOT_FILE, compare_collapse, run_training
from adareg.utils.error_handler import handle_cli_errors
from adareg.utils.exceptions import GradientCheckFailure, ValidationError
from adareg.utils.logger import setup_logger
from adareg.utils.results_handler import log_results, save_effective_config, save_json, write_csv

logger = setup_logger('CLI')


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the validation exit code."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(ValidationError.exit_code, f"{self.prog}: error: {message}\n")


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parses command-line arguments.

    Returns:
        argparse.Namespace: Parsed arguments.
    """
    parser = ArgumentParser(
        prog='adareg',
        description='Adaptive L2 regularization on a desk-scale re-identification pipeline',
        epilog='Example usage: python main.py train --config config/smoke.env --data-dir data --out-dir runs/smoke',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, data_dir=False, out_dir=True, seed=True):
        p.add_argument('--config', type=str, default=None, help='Flat section.field=value config file')
        if seed:
            p.add_argument('--seed', type=int, default=None, help='Override the seed used by this command')
        if data_dir:
            p.add_argument('--data-dir', type=str, required=True, help='Dataset directory')
        if out_dir:
            p.add_argument('--out-dir', type=str, required=True, help='Output directory')

    p = sub.add_parser('gen-data', help='Generate the synthetic dataset')
    common(p)

    p = sub.add_parser('train', help='Train a model')
    common(p, data_dir=True)
    p.add_argument('--reg-mode', choices=REG_MODES, default=None, help='Regularizer mode')

    p = sub.add_parser('eval', help='Evaluate a checkpoint under the cross-camera protocol')
    common(p, data_dir=True, seed=False)
    p.add_argument('--checkpoint', type=str, required=True, help='Checkpoint written by train')
    p.add_argument('--protocol', choices=PROTOCOLS, default=None, help='Gallery filtering protocol')

    p = sub.add_parser('analyze', help='Median trajectories and histogram of regularization factors')
    common(p, seed=False)
    p.add_argument('--snapshot-log', type=str, required=True, help=f'{SNAPSHOT_FILE} written by train')

    p = sub.add_parser('gradcheck', help='Finite-difference gradient check suite')
    common(p, out_dir=False)
    p.add_argument('--out-dir', type=str, default=None, help='Optional directory for the report')

    p = sub.add_parser('collapse', help='Compare adaptive and unconstrained regularizers')
    common(p, data_dir=True)
    p.add_argument('--iterations', type=int, default=200, help='Iterations per run (default: 200)')

    return parser.parse_args(argv)


def _config(args: argparse.Namespace, seed_key: Optional[str] = None,
            extra: Optional[Dict[str, object]] = None) -> RunConfig:
    overrides: Dict[str, object] = dict(extra or {})
    if seed_key and args.seed is not None:
        overrides[seed_key] = args.seed
    return load_run_config(args.config, overrides)


@handle_cli_errors
def cmd_gen_data(args: argparse.Namespace) -> None:
    config = _config(args, 'data.seed')
    dataset = generate(config.data)
    save_dataset(dataset, args.out_dir)
    save_effective_config(config, args.out_dir)
    accuracy, chance = nearest_centroid_accuracy(dataset)
    logger.info(f"Nearest-centroid oracle: accuracy {accuracy:.3f} (chance {chance:.3f})")


@handle_cli_errors
def cmd_train(args: argparse.Namespace) -> None:
    extra = {'reg.mode': args.reg_mode} if args.reg_mode else None
    config = _config(args, 'train.seed', extra)
    dataset = load_dataset(args.data_dir)
    result = run_training(config, dataset, args.out_dir)
    logger.info(f"Training finished after {result.iterations} iterations; checkpoint {result.checkpoint_path}")


@handle_cli_errors
def cmd_eval(args: argparse.Namespace) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    overrides: Dict[str, object] = {}
    if args.config:
        overrides.update(_eval_section(args.config))
    if args.protocol:
        overrides['eval.protocol'] = args.protocol
    if overrides:
        config = config.with_overrides(overrides)
    model = restore_model(checkpoint)
    dataset = load_dataset(args.data_dir)

    query, gallery = dataset.indices('query'), dataset.indices('gallery')
    query_emb = extract_embeddings(model, dataset.images[query][:, None, :, :])
    gallery_emb = extract_embeddings(model, dataset.images[gallery][:, None, :, :])
    os.makedirs(args.out_dir, exist_ok=True)
    write_embeddings(os.path.join(args.out_dir, 'query_embeddings.bin'), query_emb)
    write_embeddings(os.path.join(args.out_dir, 'gallery_embeddings.bin'), gallery_emb)
    write_meta(os.path.join(args.out_dir, 'query_meta.csv'), dataset.identities[query], dataset.cameras[query])
    write_meta(os.path.join(args.out_dir, 'gallery_meta.csv'), dataset.identities[gallery], dataset.cameras[gallery])

    report = evaluate(query_emb, dataset.identities[query], dataset.cameras[query],
                      gallery_emb, dataset.identities[gallery], dataset.cameras[gallery],
                      config.eval.protocol, config.eval.max_rank)
    write_report(args.out_dir, report, dataset.identities[gallery], dataset.cameras[gallery],
                 dataset.identities[query], config.eval.dump_top_k)
    save_effective_config(config, args.out_dir)
    log_results('Evaluation report', report.summary())


def _eval_section(path: str) -> Dict[str, str]:
    """eval.* keys of a config file, used to override a checkpoint's echo."""
    return {k: v for k, v in to_flat(load_run_config(path)).items() if k.startswith('eval.')}


@handle_cli_errors
def cmd_analyze(args: argparse.Namespace) -> None:
    config = _config(args)
    snapshots = read_snapshot_log(args.snapshot_log)
    if not snapshots:
        raise ValidationError(f"snapshot log {args.snapshot_log} is empty")
    write_trajectory_csv(os.path.join(args.out_dir, 'trajectory.csv'), median_trajectory(snapshots))
    a = config.analysis
    histogram = factor_histogram(snapshots[-1], a.hist_lo, a.hist_hi, a.buckets)
    write_histogram_csv(os.path.join(args.out_dir, 'histogram.csv'), histogram)
    save_effective_config(config, args.out_dir)
    logger.info(f"Analyzed {len(snapshots)} snapshots; histogram of iteration {snapshots[-1].iteration}")


@handle_cli_errors
def cmd_gradcheck(args: argparse.Namespace) -> None:
    config = _config(args, 'gradcheck.seed')
    reports = run_gradcheck_suite(config)
    for report in reports:
        status = 'pass' if report.passed else 'FAIL'
        print(f"{report.label:<20} {status}  max_rel_error={report.max_rel_error:.3e}  "
              f"checked={report.checked}  excluded={len(report.excluded)}")
    if args.out_dir:
        header = ('check', 'passed', 'max_rel_error', 'max_abs_error', 'checked', 'excluded', 'failures')
        write_csv(os.path.join(args.out_dir, 'gradcheck.csv'), header,
                  ((r.label, r.passed, r.max_rel_error, r.max_abs_error, r.checked, len(r.excluded),
                    len(r.failures)) for r in reports))
        save_effective_config(config, args.out_dir)
    failed = [r.label for r in reports if not r.passed]
    if failed:
        raise GradientCheckFailure(f"gradient check failed for: {', '.join(failed)}")


@handle_cli_errors
def cmd_collapse(args: argparse.Namespace) -> None:
    config = _config(args, 'train.seed')
    dataset = load_dataset(args.data_dir)
    report = compare_collapse(config, dataset, args.iterations)
    save_json(report.to_dict(), os.path.join(args.out_dir, 'collapse.json'))
    save_effective_config(config, args.out_dir)
    log_results('Collapse comparison', report.to_dict())


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'eval': cmd_eval,
    'analyze': cmd_analyze,
    'gradcheck': cmd_gradcheck,
    'collapse': cmd_collapse,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Runs one subcommand and returns its exit code.
    """
    args = parse_arguments(argv)
    return COMMANDS[args.command](args)
