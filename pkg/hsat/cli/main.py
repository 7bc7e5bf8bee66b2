"""hsat command line.

Exit codes: 0 ok, 1 unexpected error, 2 configuration error, 3 data error, 4 numeric failure.
Any ``--section.key value`` argument not consumed by a subcommand is applied as a config override.
"""
import argparse
import json
import logging
import os
import sys
import traceback
from typing import Dict, List, Optional

import logzero
from logzero import logger

from hsat.cli.config import PRESETS, ExperimentConfig, InvalidConfigValueError, parse_config
from hsat.cli.run_manifest import RunManifest
from hsat.evaluator.evaluate import evaluate, sweep, transfer_matrix
from hsat.evaluator.report import write_report
from hsat.exceptions import ConfigurationError, DataError, NumericError
from hsat.hierdata.dataset import HierDataset
from hsat.hierdata.manifest import MANIFEST_FILE
from hsat.hierdata.synthetic import generate_synthetic
from hsat.model.checkpoint import load_checkpoint
from hsat.model.encoder import init_params
from hsat.trainer.train import TRAIN_LOG, train

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RULES = ('pgd', 'bim', 'mifgsm')


def exit_code_for(e: Exception) -> int:
    if isinstance(e, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(e, DataError):
        return EXIT_DATA
    if isinstance(e, NumericError):
        return EXIT_NUMERIC
    return EXIT_UNEXPECTED


def _log_and_raise(e, event):
    trc = traceback.format_exc()
    logger.error(f'Error processing command {json.dumps(event)}: {e}\n\n{trc}')
    raise e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON experiment config file')
    common.add_argument('--preset', choices=PRESETS, help='start from a shipped preset')
    common.add_argument('--seed', type=int, help='global seed')
    common.add_argument('--out', help='output directory')
    common.add_argument('--verbose', action='store_true', help='debug logging')

    parser = argparse.ArgumentParser(prog='hsat', description='Hierarchical self-supervised adversarial training')
    commands = parser.add_subparsers(dest='command', required=True)

    gen_data = commands.add_parser('gen-data', parents=[common], help='generate a synthetic hierarchical dataset')
    gen_data.add_argument('--classes', type=int)
    gen_data.add_argument('--patients-per-class', type=int)
    gen_data.add_argument('--slides', type=int)
    gen_data.add_argument('--patches', type=int)

    train_parser = commands.add_parser('train', parents=[common], help='train an encoder')
    train_parser.add_argument('--data', required=True)

    knn_eval = commands.add_parser('knn-eval', parents=[common], help='clean kNN evaluation')
    knn_eval.add_argument('--ckpt', required=True)
    knn_eval.add_argument('--data', required=True)
    knn_eval.add_argument('--k', type=int)

    attack_eval = commands.add_parser('attack-eval', parents=[common], help='white-box robustness sweep')
    attack_eval.add_argument('--ckpt', required=True)
    attack_eval.add_argument('--data', required=True)
    attack_eval.add_argument('--rule', action='append', choices=RULES)
    attack_eval.add_argument('--eps', action='append', help='budget, e.g. 8/255; repeatable')
    attack_eval.add_argument('--steps', type=int)
    attack_eval.add_argument('--k', type=int)

    transfer_eval = commands.add_parser('transfer-eval', parents=[common], help='black-box transfer matrix')
    transfer_eval.add_argument('--surrogate', action='append',
                               help='surrogate checkpoint; repeatable, defaults to every target')
    transfer_eval.add_argument('--targets', nargs='+', required=True)
    transfer_eval.add_argument('--data', required=True)
    transfer_eval.add_argument('--rule', choices=RULES, default='pgd')
    transfer_eval.add_argument('--eps', default='8/255')
    transfer_eval.add_argument('--steps', type=int)
    transfer_eval.add_argument('--k', type=int)
    return parser


def parse_overrides(extra: List[str]) -> Dict[str, str]:
    overrides = {}
    tokens = list(extra)
    while tokens:
        token = tokens.pop(0)
        if not token.startswith('--') or '.' not in token:
            raise InvalidConfigValueError(f'Unrecognized argument "{token}"; overrides look like --section.key value')
        key = token[2:]
        if '=' in key:
            key, value = key.split('=', 1)
        elif tokens:
            value = tokens.pop(0)
        else:
            raise InvalidConfigValueError(f'Override "{token}" is missing a value')
        overrides[key] = value
    return overrides


def command_overrides(args: argparse.Namespace) -> Dict[str, object]:
    """Subcommand flags expressed as dotted config paths."""
    mapping = {
        'seed': 'seed', 'out': 'out', 'classes': 'data.classes', 'patients_per_class': 'data.patients_per_class',
        'slides': 'data.slides', 'patches': 'data.patches', 'k': 'eval.k', 'steps': 'eval.steps',
    }
    overrides = {path: getattr(args, name) for name, path in mapping.items() if getattr(args, name, None) is not None}
    rule = getattr(args, 'rule', None)
    if rule is not None:
        overrides['eval.rules'] = rule if isinstance(rule, list) else [rule]
    eps = getattr(args, 'eps', None)
    if eps is not None:
        overrides['eval.eps'] = eps if isinstance(eps, list) else [eps]
    return overrides


def model_name(path: str) -> str:
    path = os.path.abspath(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    return f'{os.path.basename(os.path.dirname(path))}/{stem}'


def _load_models(paths: List[str], manifest: RunManifest) -> Dict[str, object]:
    models = {}
    for path in paths:
        name = model_name(path)
        if name in models:
            name = f'{name}#{len(models)}'
        models[name] = load_checkpoint(path)
        manifest.record_checkpoint(path)
    return models


def _load_dataset(directory: str, manifest: RunManifest) -> HierDataset:
    dataset = HierDataset.load(directory)
    manifest.record_dataset(directory)
    return dataset


def gen_data_command(args, cfg: ExperimentConfig, manifest: RunManifest) -> List[str]:
    generate_synthetic(cfg.data, cfg.out)
    manifest.record_dataset(cfg.out)
    return [os.path.join(cfg.out, MANIFEST_FILE)]


def train_command(args, cfg: ExperimentConfig, manifest: RunManifest) -> List[str]:
    dataset = _load_dataset(args.data, manifest)
    config_path = os.path.join(cfg.out, 'config.json')
    with open(config_path, 'w') as fp:
        json.dump(cfg.to_json(), fp, indent=2, sort_keys=True)
    result = train(dataset, init_params(cfg.model, cfg.seed), cfg.train, cfg.out)
    for path in result.checkpoints:
        manifest.record_checkpoint(path, role='output')
    return [config_path, os.path.join(cfg.out, TRAIN_LOG)] + result.checkpoints


def knn_eval_command(args, cfg: ExperimentConfig, manifest: RunManifest) -> List[str]:
    dataset = _load_dataset(args.data, manifest)
    (name, params), = _load_models([args.ckpt], manifest).items()
    reports = evaluate(params, dataset, None, cfg.eval.k, cfg=cfg.eval, model=name)
    return list(write_report(reports, cfg.out, 'knn_report').values())


def attack_eval_command(args, cfg: ExperimentConfig, manifest: RunManifest) -> List[str]:
    dataset = _load_dataset(args.data, manifest)
    (name, params), = _load_models([args.ckpt], manifest).items()
    reports = sweep(params, dataset, cfg.eval.attacks(), cfg=cfg.eval, model=name)
    return list(write_report(reports, cfg.out, 'attack_report').values())


def transfer_eval_command(args, cfg: ExperimentConfig, manifest: RunManifest) -> List[str]:
    dataset = _load_dataset(args.data, manifest)
    targets = _load_models(args.targets, manifest)
    surrogates = _load_models(args.surrogate, manifest) if args.surrogate else targets
    attacks = cfg.eval.attacks()
    if len(attacks) != 1:
        raise InvalidConfigValueError(f'transfer-eval takes one rule and one budget, got {len(attacks)} attacks')
    reports = transfer_matrix(surrogates, targets, dataset, attacks[0], cfg=cfg.eval)
    return list(write_report(reports, cfg.out, 'transfer_report').values())


HANDLERS = {
    'gen-data': gen_data_command,
    'train': train_command,
    'knn-eval': knn_eval_command,
    'attack-eval': attack_eval_command,
    'transfer-eval': transfer_eval_command,
}


def run(command: str, args: argparse.Namespace, cfg: ExperimentConfig, manifest: RunManifest) -> List[str]:
    try:
        return HANDLERS[command](args, cfg, manifest)
    except Exception as e:
        _log_and_raise(e, {'command': command, 'out': cfg.out})


def main(argv: Optional[List[str]] = None) -> int:
    args, extra = build_parser().parse_known_args(argv)
    logzero.loglevel(logging.DEBUG if args.verbose else logging.INFO)
    manifest = None
    try:
        overrides = parse_overrides(extra)
        overrides.update(command_overrides(args))
        cfg = parse_config(args.config, overrides, args.preset)
        os.makedirs(cfg.out, exist_ok=True)
        logzero.logfile(os.path.join(cfg.out, 'run.log'))
        logger.info(f'Command input: {json.dumps({"command": args.command, "config": cfg.to_json()})}')
        manifest = RunManifest(cfg.out, args.command, cfg.to_json(), argv if argv is not None else sys.argv[1:])
        manifest.start()
        outputs = run(args.command, args, cfg, manifest)
        manifest.record_outputs(outputs)
        manifest.finalize('ok', EXIT_OK)
        return EXIT_OK
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f'{args.command} failed with exit code {code}: {type(e).__name__}: {e}')
        if manifest is not None:
            manifest.finalize('failed', code, f'{type(e).__name__}: {e}')
        return code
    finally:
        logzero.logfile(None)


if __name__ == '__main__':
    sys.exit(main())
