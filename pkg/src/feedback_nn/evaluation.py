"""Accuracy under attack, averaged over seeds.

An [`AttackSuite`][feedback_nn.evaluation.AttackSuite] lists the attacks to run, in report order.
Attack names follow the usual robustness benchmark columns:

* `NAT`: no attack, clean accuracy;
* `FGSM`: fast gradient sign method;
* `PGD-<k>`: projected gradient descent with `k` steps (`PGD` alone means 20 steps);
* `MIM-<k>`: momentum iterative method with `k` steps (`MIM` alone means 10 steps).
"""

from __future__ import annotations

import csv
import io
import logging
import re
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import NDArray
from typing_extensions import TypeAlias, assert_never

from .attacks import AttackBudget, fgsm, mim, pgd
from .data import Dataset, batches
from .errors import InvalidParameterError, UnknownAttackError
from .nn import Classifier
from .tensor import Array, Tensor, softmax_cross_entropy

__all__ = (
    'ATTACK_NAME_FORMS',
    'CANONICAL_ATTACKS',
    'REPORT_COLUMNS',
    'AccuracyReport',
    'AttackAccuracy',
    'AttackInspection',
    'AttackKind',
    'AttackSuite',
    'ReportFormat',
    'SuiteEntry',
    'build_suite',
    'canonical_suite',
    'evaluate',
    'inspect_attack',
    'parse_attack',
    'render_report',
    'run_attack',
)

logger = logging.getLogger(__name__)

CANONICAL_ATTACKS = ('NAT', 'FGSM', 'PGD-20', 'PGD-100', 'MIM')
"""The attacks of the canonical suite, in report order."""

ATTACK_NAME_FORMS = ('NAT', 'FGSM', 'PGD', 'PGD-<steps>', 'MIM', 'MIM-<steps>')
"""The accepted attack name forms (case insensitive)."""

REPORT_COLUMNS = ('method', 'attack', 'mean_acc', 'std_acc', 'seeds', 'epsilon', 'kappa', 'steps')
"""The header of the CSV report."""

ReportFormat: TypeAlias = Literal['table', 'csv']

_DEFAULT_STEPS = {'PGD': 20, 'MIM': 10}
_NAME_RE = re.compile(r'^(NAT|FGSM|PGD|MIM)(?:-(\d+))?$')


class AttackKind(str, Enum):
    NAT = 'nat'
    FGSM = 'fgsm'
    PGD = 'pgd'
    MIM = 'mim'


@dataclass(frozen=True)
class SuiteEntry:
    """One attack of a suite."""

    name: str
    """The report column name, e.g. `PGD-20`."""

    kind: AttackKind
    budget: AttackBudget | None = None
    """The attack budget, `None` for `NAT` only."""

    restarts: int = 1
    """A sample counts as robust only if it resists every restart."""

    def __post_init__(self) -> None:
        if (self.kind is AttackKind.NAT) != (self.budget is None):
            raise InvalidParameterError('budget', f'{self.name}: only NAT runs without a budget')
        if self.restarts < 1:
            raise InvalidParameterError('restarts', f'must be at least 1, got {self.restarts}')


@dataclass(frozen=True)
class AttackSuite:
    """An ordered collection of uniquely named attacks."""

    entries: tuple[SuiteEntry, ...]

    def __post_init__(self) -> None:
        names = self.names
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise InvalidParameterError('suite', f'duplicate attack names: {", ".join(duplicates)}')

    @property
    def names(self) -> list[str]:
        return [entry.name for entry in self.entries]

    def __iter__(self) -> Iterator[SuiteEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def parse_attack(
    name: str,
    *,
    epsilon: float,
    kappa: float,
    bounds: tuple[float, float] = (0.0, 1.0),
    steps: int | None = None,
    random_start: bool = True,
    restarts: int = 1,
) -> SuiteEntry:
    """Build the suite entry named `name`.

    `steps` overrides the default step count of the `PGD` and `MIM` forms without an explicit count.
    PGD starts from a random point of the ε-ball when `random_start` is set; FGSM and MIM start from
    the clean input.

    Raises:
        UnknownAttackError: If `name` does not match one of the
            [accepted forms][feedback_nn.evaluation.ATTACK_NAME_FORMS].
    """
    match = _NAME_RE.match(name.strip().upper())
    if match is None:
        raise UnknownAttackError(name, ATTACK_NAME_FORMS)
    family, count = match.groups()
    if family == 'NAT':
        if count is not None:
            raise UnknownAttackError(name, ATTACK_NAME_FORMS)
        return SuiteEntry('NAT', AttackKind.NAT)
    if family == 'FGSM':
        if count is not None:
            raise UnknownAttackError(name, ATTACK_NAME_FORMS)
        return SuiteEntry('FGSM', AttackKind.FGSM, AttackBudget(epsilon, kappa, 1, False, bounds))

    k = int(count) if count is not None else steps if steps is not None else _DEFAULT_STEPS[family]
    canonical = f'{family}-{count}' if count is not None else family
    if family == 'PGD':
        budget = AttackBudget(epsilon, kappa, k, random_start, bounds)
        return SuiteEntry(canonical, AttackKind.PGD, budget, restarts if random_start else 1)
    return SuiteEntry(canonical, AttackKind.MIM, AttackBudget(epsilon, kappa, k, False, bounds))


def build_suite(
    names: Iterable[str],
    *,
    epsilon: float,
    kappa: float,
    bounds: tuple[float, float] = (0.0, 1.0),
    steps: int | None = None,
    random_start: bool = True,
    restarts: int = 1,
) -> AttackSuite:
    """Build a suite from attack names, each parsed by [`parse_attack()`][feedback_nn.evaluation.parse_attack]."""
    return AttackSuite(
        tuple(
            parse_attack(
                name,
                epsilon=epsilon,
                kappa=kappa,
                bounds=bounds,
                steps=steps,
                random_start=random_start,
                restarts=restarts,
            )
            for name in names
        )
    )


def canonical_suite(epsilon: float, kappa: float, *, bounds: tuple[float, float] = (0.0, 1.0)) -> AttackSuite:
    """The suite `NAT, FGSM, PGD-20, PGD-100, MIM`."""
    return build_suite(CANONICAL_ATTACKS, epsilon=epsilon, kappa=kappa, bounds=bounds)


def run_attack(
    model: Classifier,
    x: Array,
    y: NDArray[np.int64],
    entry: SuiteEntry,
    rng: np.random.Generator,
    *,
    mim_decay: float = 1.0,
) -> Array:
    """Return the inputs produced by the attack of `entry` (the clean inputs for `NAT`)."""
    budget = entry.budget
    kind = entry.kind
    if kind is AttackKind.NAT or budget is None:
        return x
    elif kind is AttackKind.FGSM:
        return fgsm(model, x, y, budget)
    elif kind is AttackKind.PGD:
        return pgd(model, x, y, budget, rng=rng)
    elif kind is AttackKind.MIM:
        return mim(model, x, y, budget, decay=mim_decay, rng=rng)
    else:  # pragma: no cover
        assert_never(kind)


def _predict(model: Classifier, x: Array) -> NDArray[np.int64]:
    return model(Tensor(x)).data.argmax(axis=1)


class AttackAccuracy(NamedTuple):
    """The accuracies of one attack of the suite, in percent."""

    name: str
    mean: float
    std: float
    """The population standard deviation over seeds."""

    per_seed: tuple[float, ...]
    budget: AttackBudget | None


@dataclass(frozen=True)
class AccuracyReport:
    """Accuracies under every attack of a suite, over several seeds."""

    rows: tuple[AttackAccuracy, ...]
    """One row per attack, in suite order."""

    seeds: tuple[int, ...]
    method: str = ''
    model_id: str = ''
    dataset_id: str = ''
    std_kind: str = 'population'

    def row(self, name: str) -> AttackAccuracy:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)


def _accuracy(
    model: Classifier,
    dataset: Dataset,
    entry: SuiteEntry,
    seed: int,
    attack_index: int,
    batch_size: int,
    mim_decay: float,
) -> float:
    correct = 0
    start = 0
    for x, y in batches(dataset, batch_size, seed, shuffle=False):
        robust = np.ones(len(y), dtype=bool)
        restarts = 1 if entry.kind is AttackKind.NAT else entry.restarts
        for restart in range(restarts):
            rng = np.random.default_rng([seed, attack_index, restart, start])
            x_adv = run_attack(model, x, y, entry, rng, mim_decay=mim_decay)
            robust &= _predict(model, x_adv) == y
        correct += int(robust.sum())
        start += len(y)
    return 100.0 * correct / len(dataset)


def evaluate(
    model: Classifier,
    dataset: Dataset,
    suite: AttackSuite,
    seeds: Sequence[int],
    *,
    method: str = '',
    model_id: str = '',
    batch_size: int = 256,
    mim_decay: float = 1.0,
) -> AccuracyReport:
    """Measure the top-1 accuracy of `model` under every attack of `suite`, for every seed.

    Attacks are white-box and regenerated for each seed; only the random starts depend on the seed.

    Args:
        model: The classifier to evaluate.
        dataset: The evaluation set.
        suite: The attacks, in report order.
        seeds: The seeds, aggregated in the given order.
        method: The training method, reported in the first CSV column.
        model_id: An identifier of the model, kept in the report metadata.
        batch_size: The number of samples attacked at once.
        mim_decay: The momentum decay of MIM attacks.

    Raises:
        InvalidParameterError: If `suite` or `seeds` is empty.
    """
    if not len(suite):
        raise InvalidParameterError('suite', 'at least one attack is required')
    if not seeds:
        raise InvalidParameterError('seeds', 'at least one seed is required')

    per_attack: list[list[float]] = [[] for _ in suite]
    for seed in seeds:
        for index, entry in enumerate(suite):
            accuracy = _accuracy(model, dataset, entry, seed, index, batch_size, mim_decay)
            per_attack[index].append(accuracy)
            logger.info('seed %d %s: %.2f%%', seed, entry.name, accuracy)

    rows = tuple(
        AttackAccuracy(entry.name, float(np.mean(values)), float(np.std(values)), tuple(values), entry.budget)
        for entry, values in zip(suite, per_attack)
    )
    return AccuracyReport(rows, tuple(seeds), method, model_id, dataset.name)


def _render_csv(report: AccuracyReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        budget = row.budget
        epsilon, kappa, steps = (0.0, 0.0, 0) if budget is None else (budget.epsilon, budget.kappa, budget.steps)
        stats = [repr(row.mean), repr(row.std), len(report.seeds)]
        writer.writerow([report.method, row.name, *stats, repr(epsilon), repr(kappa), steps])
    return buffer.getvalue()


def _render_table(report: AccuracyReport) -> str:
    header = ['method', *(row.name for row in report.rows)]
    cells = [report.method or '-', *(f'{row.mean:.2f} ± {row.std:.2f}' for row in report.rows)]
    widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
    lines = [
        '  '.join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        '  '.join('-' * w for w in widths),
        '  '.join(c.ljust(w) for c, w in zip(cells, widths)).rstrip(),
        f'seeds: {", ".join(map(str, report.seeds))} ({report.std_kind} std)',
    ]
    return '\n'.join(lines) + '\n'


def render_report(report: AccuracyReport, fmt: ReportFormat = 'table') -> str:
    """Render `report` as an aligned text table (one column per attack) or as CSV (one row per attack).

    Raises:
        InvalidParameterError: If the report has no rows.
    """
    if not report.rows:
        raise InvalidParameterError('report', 'cannot render a report without attacks')
    if fmt == 'table':
        return _render_table(report)
    elif fmt == 'csv':
        return _render_csv(report)
    else:  # pragma: no cover
        assert_never(fmt)


class AttackInspection(NamedTuple):
    """The effect of a single attack on a dataset."""

    name: str
    clean_acc: float
    robust_acc: float
    clean_loss: float
    adv_loss: float
    max_perturbation: float
    """The largest L∞ distance between an adversarial input and its clean counterpart."""


def inspect_attack(
    model: Classifier, dataset: Dataset, entry: SuiteEntry, seed: int, *, mim_decay: float = 1.0
) -> AttackInspection:
    """Run one attack on the whole of `dataset` and summarize its effect."""
    x, y = dataset.inputs, dataset.labels
    x_adv = run_attack(model, x, y, entry, np.random.default_rng([seed, 0, 0, 0]), mim_decay=mim_decay)
    clean_logits, adv_logits = model(Tensor(x)), model(Tensor(x_adv))
    return AttackInspection(
        entry.name,
        100.0 * float(np.mean(clean_logits.data.argmax(axis=1) == y)),
        100.0 * float(np.mean(adv_logits.data.argmax(axis=1) == y)),
        softmax_cross_entropy(clean_logits, y).item(),
        softmax_cross_entropy(adv_logits, y).item(),
        float(np.max(np.abs(x_adv - x))),
    )
