"""The `feedback-nn` command line interface.

```bash
feedback-nn train --config configs/two_moons_flat.conf
feedback-nn eval --checkpoint runs/two_moons_flat/model.ckpt
feedback-nn attack --checkpoint runs/two_moons_flat/model.ckpt --attack PGD-20
feedback-nn linear-demo --n 10 --eps 0.1
feedback-nn gradcheck --unroll 2 --mode features
```

Errors are printed as a single `error[<code>]: <message>` line on stderr. Usage errors, unknown attack
names included, exit with status 2, every other error with status 1.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

import numpy as np

from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config, run_config_from_dict
from .data import Dataset
from .errors import FeedbackNNError, PoleError, SingularSystemError, UnknownAttackError
from .evaluation import build_suite, evaluate, inspect_attack, parse_attack, render_report
from .gradcheck import run_gradcheck
from .linear_control import (
    build_example_system,
    closed_loop_output,
    exact_gain,
    iterated_feedback,
    iterated_gain,
    make_controller,
)
from .nn import ControllerInput
from .training import train

__all__ = ('LINEAR_DEMO_COLUMNS', 'build_parser', 'linear_demo_rows', 'main')

logger = logging.getLogger(__name__)

LINEAR_DEMO_COLUMNS = ('epsilon', 'kappa', 'P', 'predicted_gain', 'measured_gain', 'abs_error', 'status')

HISTORY_FILE = 'history.csv'
CHECKPOINT_FILE = 'model.ckpt'
REPORT_FILE = 'report.csv'


class _UsageError(Exception):
    pass


def _print_error(code: str, message: str) -> None:
    message = message.replace('\n', ' ')
    print(f'error[{code}]: {message}', file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """An argument parser reporting usage errors as one `error[E_USAGE]` line."""

    def error(self, message: str) -> NoReturn:
        _print_error('E_USAGE', f'{self.prog}: {message}')
        self.exit(2)


def _floats(value: str) -> list[float]:
    try:
        return [float(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {value!r}') from None


def _ints(value: str) -> list[int]:
    try:
        return [int(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated integers, got {value!r}') from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog='feedback-nn', description='Feedback neural networks and feedback looped adversarial training.'
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='log debug messages')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='only log warnings and errors')
    commands = parser.add_subparsers(dest='command', required=True)

    train_parser = commands.add_parser('train', help='train a model from a run configuration')
    train_parser.add_argument('--config', required=True, type=Path, help='the run configuration file')
    train_parser.add_argument('--out', type=Path, help='the output directory (overrides [output] dir)')
    train_parser.add_argument('--seed', type=int, help='the training seed (overrides [train] seed)')

    eval_parser = commands.add_parser('eval', help='measure the accuracy of a checkpoint under attack')
    eval_parser.add_argument('--checkpoint', required=True, type=Path)
    eval_parser.add_argument('--config', type=Path, help='the run configuration (defaults to the checkpoint echo)')
    eval_parser.add_argument('--attack', nargs='+', help='attack names, e.g. NAT FGSM PGD-20 PGD-100 MIM')
    eval_parser.add_argument('--eps', type=float, help='the L-infinity radius')
    eval_parser.add_argument('--kappa', type=float, help='the attack step size')
    eval_parser.add_argument('--steps', type=int, help='the step count of PGD and MIM without an explicit count')
    eval_parser.add_argument('--seed', type=int, nargs='+', dest='seeds', help='the evaluation seeds')
    eval_parser.add_argument('--format', choices=('table', 'csv'), default='table', help='the stdout format')
    eval_parser.add_argument('--out', type=Path, help='the directory of the CSV report')

    attack_parser = commands.add_parser('attack', help='run one attack on the held-out split of a checkpoint')
    attack_parser.add_argument('--checkpoint', required=True, type=Path)
    attack_parser.add_argument('--config', type=Path)
    attack_parser.add_argument('--attack', required=True)
    attack_parser.add_argument('--eps', type=float)
    attack_parser.add_argument('--kappa', type=float)
    attack_parser.add_argument('--steps', type=int)
    attack_parser.add_argument('--seed', type=int, default=0)

    demo_parser = commands.add_parser('linear-demo', help='sweep the gains of the linear feedback example')
    demo_parser.add_argument('--n', type=int, default=10, help='the system dimension')
    demo_parser.add_argument('--eps', type=float, default=0.1, help='the reciprocal of the dominant eigenvalue')
    demo_parser.add_argument('--kappa', type=_floats, help='comma separated controller gains')
    demo_parser.add_argument('--P', type=_ints, dest='iterations', default=[0, 1, 2, 5, 10], help='iteration counts')
    demo_parser.add_argument('--seed', type=int, default=0)
    demo_parser.add_argument('--out', type=Path, help='write the CSV to this file instead of stdout')

    grad_parser = commands.add_parser('gradcheck', help='compare recorded gradients with finite differences')
    grad_parser.add_argument('--widths', type=_ints, default=[2, 8, 8, 2], help='main network widths')
    grad_parser.add_argument('--controller-hidden', type=_ints, default=[8], help='controller hidden widths')
    grad_parser.add_argument('--unroll', type=int, default=1)
    grad_parser.add_argument('--mode', choices=('predictions', 'features', 'both'), default='both')
    grad_parser.add_argument('--seed', type=int, default=0)
    grad_parser.add_argument('--corrupt-adjoint', action='store_true', help=argparse.SUPPRESS)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format='%(levelname)s %(name)s: %(message)s', force=True)


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out: Path = args.out or config.output_dir
    out.mkdir(parents=True, exist_ok=True)

    train_set, held_out = config.data.split()
    train_config = dataclasses.replace(config.train, bounds=train_set.bounds)
    model = config.model.build(train_set, train_config.method, train_config.seed)
    logger.info('training %s on %s (%d samples)', train_config.method.value, train_set.name, len(train_set))
    trained, history = train(model, train_set, train_config, probe=held_out)

    history.write_csv(out / HISTORY_FILE)
    meta = CheckpointMeta(train_config.seed, len(history), config.to_dict())
    save_checkpoint(trained, meta, out / CHECKPOINT_FILE)  # pyright: ignore[reportArgumentType]
    print(f'wrote {out / HISTORY_FILE} and {out / CHECKPOINT_FILE}')
    return 0


def _run_config(args: argparse.Namespace, echo: dict[str, object]) -> RunConfig:
    if args.config is not None:
        return load_run_config(args.config)
    if not echo:
        raise _UsageError('the checkpoint holds no configuration echo; pass --config')
    return run_config_from_dict(echo)


def _held_out(config: RunConfig) -> Dataset:
    _, held_out = config.data.split()
    return held_out


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = _run_config(args, dict(checkpoint.meta.config))
    dataset = _held_out(config)
    train_config = config.train
    suite = build_suite(
        args.attack or config.eval.attacks,
        epsilon=args.eps if args.eps is not None else train_config.epsilon,
        kappa=args.kappa if args.kappa is not None else train_config.kappa,
        bounds=dataset.bounds,
        steps=args.steps,
        restarts=config.eval.restarts,
    )
    report = evaluate(
        checkpoint.model,
        dataset,
        suite,
        args.seeds or config.eval.seeds,
        method=train_config.method.value,
        model_id=str(args.checkpoint),
        batch_size=config.eval.batch_size,
        mim_decay=config.eval.mim_decay,
    )
    out: Path = args.out or args.checkpoint.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(render_report(report, 'csv'))
    sys.stdout.write(render_report(report, args.format))
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = _run_config(args, dict(checkpoint.meta.config))
    dataset = _held_out(config)
    entry = parse_attack(
        args.attack,
        epsilon=args.eps if args.eps is not None else config.train.epsilon,
        kappa=args.kappa if args.kappa is not None else config.train.kappa,
        bounds=dataset.bounds,
        steps=args.steps,
    )
    result = inspect_attack(checkpoint.model, dataset, entry, args.seed, mim_decay=config.eval.mim_decay)
    print(f'attack: {result.name}')
    print(f'samples: {len(dataset)}')
    print(f'clean_acc: {result.clean_acc:.2f}')
    print(f'robust_acc: {result.robust_acc:.2f}')
    print(f'clean_loss: {result.clean_loss:.6f}')
    print(f'adv_loss: {result.adv_loss:.6f}')
    print(f'max_perturbation: {result.max_perturbation:.6g}')
    return 0


def linear_demo_rows(
    n: int, epsilon: float, kappas: Sequence[float], iterations: Sequence[int], seed: int = 0
) -> list[list[object]]:
    """Predicted and measured attenuation of the dominant perturbation `ε·v₁`.

    Each gain yields one closed loop row (`P = exact`) then one row per iteration count. Closed loop
    rows at the pole `κ = ε` are flagged with the `pole` status.
    """
    system = build_example_system(n, epsilon, seed)
    x = epsilon * system.dominant
    rows: list[list[object]] = []
    for kappa in kappas:
        controller = make_controller(system, kappa)
        try:
            predicted = exact_gain(epsilon, kappa)
            measured = float(np.linalg.norm(closed_loop_output(system, controller, x)))
            rows.append([epsilon, kappa, 'exact', predicted, measured, abs(predicted - measured), 'ok'])
        except (PoleError, SingularSystemError) as e:
            logger.warning('kappa=%r: %s', kappa, e)
            rows.append([epsilon, kappa, 'exact', math.inf, math.nan, math.nan, 'pole'])
        for p in iterations:
            predicted = iterated_gain(epsilon, kappa, p)
            measured = float(np.linalg.norm(iterated_feedback(system, controller, x, p)))
            rows.append([epsilon, kappa, p, predicted, measured, abs(predicted - measured), 'ok'])
    return rows


def cmd_linear_demo(args: argparse.Namespace) -> int:
    epsilon: float = args.eps
    kappas = args.kappa or [0.0, epsilon / 4, epsilon / 2, epsilon * (1 - epsilon), epsilon, 2 * epsilon, 4 * epsilon]
    rows = linear_demo_rows(args.n, epsilon, kappas, args.iterations, args.seed)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(LINEAR_DEMO_COLUMNS)
    writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    if args.out is not None:
        args.out.write_text(buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    modes = list(ControllerInput) if args.mode == 'both' else [ControllerInput(args.mode)]
    passed = True
    for mode in modes:
        report = run_gradcheck(
            args.widths,
            args.controller_hidden,
            unroll=args.unroll,
            mode=mode,
            seed=args.seed,
            corrupt_adjoint=args.corrupt_adjoint,
        )
        for check in report.checks:
            line = f'{mode.value:<11} {check.component} {check.tensor:<16} {check.error:.3e}'
            print(f'{line} ({check.coordinates} coordinates)')
        worst = report.worst
        status = 'PASS' if report.passed else 'FAIL'
        print(f'{status} {mode.value}: worst relative error {worst.error:.3e} ({worst.component} {worst.tensor})')
        passed = passed and report.passed
    return 0 if passed else 1


_COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'attack': cmd_attack,
    'linear-demo': cmd_linear_demo,
    'gradcheck': cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface and return the exit status.

    Usage errors exit with status 2, every other error with status 1.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        return _COMMANDS[args.command](args)
    except UnknownAttackError as e:
        _print_error(e.code, str(e))
        return 2
    except _UsageError as e:
        _print_error('E_USAGE', str(e))
        return 2
    except FeedbackNNError as e:
        _print_error(e.code, str(e))
        return 1
    except OSError as e:
        _print_error('E_IO', f'{e.strerror}: {e.filename}')
        return 1
