"""Run configuration files.

A run configuration is a flat `key = value` text file split in sections. Blank lines and lines
starting with `#` or `;` are ignored:

```ini
[train]
method = flat
epochs = 100

[attack]
epsilon = 0.3
kappa = 0.075
steps = 10

[data]
source = two_moons
n = 2000
noise = 0.2

[model]
hidden = 32, 32
controller_hidden = 32, 64

[eval]
attacks = NAT, FGSM, PGD-20, PGD-100, MIM
seeds = 0, 1, 2, 3, 4

[output]
dir = runs/two_moons_flat
```

Every error is reported with the file name and line number.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, NamedTuple, cast

from typing_extensions import TypeAlias

from .data import Dataset, load_csv, load_idx, train_test_split, two_moons
from .errors import ConfigError, FeedbackNNError, InvalidParameterError
from .evaluation import CANONICAL_ATTACKS
from .nn import (
    Activation,
    ControllerInput,
    FeedbackModel,
    MlpSpec,
    ModelParams,
    build_feedback_model,
    init_params,
)
from .training import TrainConfig, TrainingMethod

__all__ = (
    'DataSource',
    'DataSourceKind',
    'EvalConfig',
    'ModelConfig',
    'RunConfig',
    'load_run_config',
    'parse_run_config',
    'run_config_from_dict',
)

logger = logging.getLogger(__name__)

DataSourceKind: TypeAlias = Literal['two_moons', 'idx', 'csv']


@dataclass(frozen=True)
class DataSource:
    """Where the samples of a run come from, and how they are split."""

    kind: DataSourceKind = 'two_moons'
    n: int = 2000
    """The number of generated samples (`two_moons` only)."""

    noise: float = 0.2
    seed: int = 0
    """The seed of the generated samples and of the held-out split."""

    rescale: bool = True
    """Min-max scale the generated samples into `[0, 1]²` (`two_moons` only); otherwise they keep the
    native units of the unit radius arcs."""

    images: Path | None = None
    labels: Path | None = None
    path: Path | None = None
    """The CSV file (`csv` only)."""

    label_column_first: bool = True
    test_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in ('two_moons', 'idx', 'csv'):
            raise InvalidParameterError('source', f'unknown data source {self.kind!r}')
        if self.kind == 'idx' and (self.images is None or self.labels is None):
            raise InvalidParameterError('images', 'the idx source needs both images and labels')
        if self.kind == 'csv' and self.path is None:
            raise InvalidParameterError('path', 'the csv source needs a path')
        for name in ('images', 'labels', 'path'):
            value: Path | None = getattr(self, name)
            if value is not None and not value.exists():
                raise InvalidParameterError(name, f'no such file: {value}')
        if not 0 < self.test_fraction < 1:
            raise InvalidParameterError('test_fraction', f'must lie in (0, 1), got {self.test_fraction!r}')

    def load(self) -> Dataset:
        if self.kind == 'two_moons':
            return two_moons(self.n, self.noise, self.seed, rescale=self.rescale)
        elif self.kind == 'idx':
            return load_idx(cast(Path, self.images), cast(Path, self.labels))
        else:
            return load_csv(cast(Path, self.path), label_column_first=self.label_column_first)

    def split(self) -> tuple[Dataset, Dataset]:
        """Load the samples and split them into training and held-out sets."""
        return train_test_split(self.load(), self.test_fraction, self.seed)


@dataclass(frozen=True)
class ModelConfig:
    """The architecture of the trained model."""

    hidden: tuple[int, ...] = (32, 32)
    """The hidden widths of the main network."""

    activation: Activation = 'relu'
    controller_hidden: tuple[int, ...] = (32, 64)
    controller_input: ControllerInput = ControllerInput.PREDICTIONS
    unroll: int = 1
    feedback: bool | None = None
    """Whether to wrap the main network in a feedback loop; defaults to `True` for the `flat` method only."""

    def __post_init__(self) -> None:
        if not self.hidden:
            raise InvalidParameterError('hidden', 'at least one hidden layer is required')
        if self.activation not in ('relu', 'identity'):
            raise InvalidParameterError('activation', f'unknown activation {self.activation!r}')
        if not self.controller_hidden:
            raise InvalidParameterError('controller_hidden', 'at least one hidden layer is required')
        if self.unroll < 1:
            raise InvalidParameterError('unroll', f'must be at least 1, got {self.unroll}')

    def uses_feedback(self, method: TrainingMethod) -> bool:
        return method is TrainingMethod.FLAT if self.feedback is None else self.feedback

    def build(self, dataset: Dataset, method: TrainingMethod, seed: int) -> ModelParams | FeedbackModel:
        """Initialize a model sized for `dataset`."""
        spec = MlpSpec((dataset.dim, *self.hidden, dataset.num_classes), self.activation)
        if not self.uses_feedback(method):
            return init_params(spec, seed)
        return build_feedback_model(
            spec, self.controller_hidden, unroll=self.unroll, controller_input=self.controller_input, seed=seed
        )


@dataclass(frozen=True)
class EvalConfig:
    attacks: tuple[str, ...] = CANONICAL_ATTACKS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    restarts: int = 1
    mim_decay: float = 1.0
    batch_size: int = 256

    def __post_init__(self) -> None:
        if not self.attacks:
            raise InvalidParameterError('attacks', 'at least one attack is required')
        if not self.seeds:
            raise InvalidParameterError('seeds', 'at least one seed is required')
        if self.restarts < 1:
            raise InvalidParameterError('restarts', f'must be at least 1, got {self.restarts}')
        if self.mim_decay < 0:
            raise InvalidParameterError('mim_decay', f'must be non-negative, got {self.mim_decay!r}')
        if self.batch_size < 1:
            raise InvalidParameterError('batch_size', f'must be at least 1, got {self.batch_size}')


@dataclass(frozen=True)
class RunConfig:
    """Everything a `train` or `eval` command needs."""

    train: TrainConfig = TrainConfig()
    data: DataSource = DataSource()
    model: ModelConfig = ModelConfig()
    eval: EvalConfig = EvalConfig()
    output_dir: Path = Path('runs')

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed))

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON compatible echo of the configuration.

        [`run_config_from_dict()`][feedback_nn.config.run_config_from_dict] rebuilds the configuration.
        """
        train = dataclasses.asdict(self.train)
        train['method'] = self.train.method.value
        data = {k: str(v) if isinstance(v, Path) else v for k, v in dataclasses.asdict(self.data).items()}
        model = dataclasses.asdict(self.model)
        model['controller_input'] = self.model.controller_input.value
        return {
            'train': _jsonable(train),
            'data': _jsonable(data),
            'model': _jsonable(model),
            'eval': _jsonable(dataclasses.asdict(self.eval)),
            'output_dir': str(self.output_dir),
        }


def _jsonable(values: Mapping[str, Any]) -> dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}


def _tuples(values: Mapping[str, Any]) -> dict[str, Any]:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}


def run_config_from_dict(echo: Mapping[str, Any]) -> RunConfig:
    """Rebuild a run configuration from the echo stored in a checkpoint."""
    train = _tuples(echo['train'])
    train['method'] = TrainingMethod(train['method'])
    data = {k: Path(v) if k in ('images', 'labels', 'path') and v is not None else v for k, v in echo['data'].items()}
    model = _tuples(echo['model'])
    model['controller_input'] = ControllerInput(model['controller_input'])
    return RunConfig(
        TrainConfig(**train),
        DataSource(**data),
        ModelConfig(**model),
        EvalConfig(**_tuples(echo['eval'])),
        Path(echo['output_dir']),
    )


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(f'expected a boolean, got {value!r}')


def _parse_list(convert: Callable[[str], Any]) -> Callable[[str], tuple[Any, ...]]:
    def parse(value: str) -> tuple[Any, ...]:
        return tuple(convert(item.strip()) for item in value.split(',') if item.strip())

    return parse


def _parse_optional_bool(value: str) -> bool | None:
    return None if value.lower() == 'auto' else _parse_bool(value)


class _Field(NamedTuple):
    target: str
    """The configuration object receiving the value: `train`, `data`, `model`, `eval` or `output`."""

    name: str
    convert: Callable[[str], Any]


_SCHEMA: dict[str, dict[str, _Field]] = {
    'train': {
        'method': _Field('train', 'method', TrainingMethod),
        'epochs': _Field('train', 'epochs', int),
        'batch_size': _Field('train', 'batch_size', int),
        'learning_rate': _Field('train', 'learning_rate', float),
        'momentum': _Field('train', 'momentum', float),
        'weight_decay': _Field('train', 'weight_decay', float),
        'lr_breakpoints': _Field('train', 'lr_breakpoints', _parse_list(float)),
        'seed': _Field('train', 'seed', int),
        'freeze_controller': _Field('train', 'freeze_controller', _parse_bool),
        'probe_size': _Field('train', 'probe_size', int),
        'probe_steps': _Field('train', 'probe_steps', int),
    },
    'attack': {
        'epsilon': _Field('train', 'epsilon', float),
        'kappa': _Field('train', 'kappa', float),
        'steps': _Field('train', 'steps', int),
        'random_start': _Field('train', 'random_start', _parse_bool),
    },
    'data': {
        'source': _Field('data', 'kind', str),
        'n': _Field('data', 'n', int),
        'noise': _Field('data', 'noise', float),
        'seed': _Field('data', 'seed', int),
        'rescale': _Field('data', 'rescale', _parse_bool),
        'images': _Field('data', 'images', Path),
        'labels': _Field('data', 'labels', Path),
        'path': _Field('data', 'path', Path),
        'label_column': _Field('data', 'label_column_first', lambda v: {'first': True, 'last': False}[v.lower()]),
        'test_fraction': _Field('data', 'test_fraction', float),
    },
    'model': {
        'hidden': _Field('model', 'hidden', _parse_list(int)),
        'activation': _Field('model', 'activation', str),
        'controller_hidden': _Field('model', 'controller_hidden', _parse_list(int)),
        'controller_input': _Field('model', 'controller_input', ControllerInput),
        'unroll': _Field('model', 'unroll', int),
        'feedback': _Field('model', 'feedback', _parse_optional_bool),
    },
    'eval': {
        'attacks': _Field('eval', 'attacks', _parse_list(str)),
        'seeds': _Field('eval', 'seeds', _parse_list(int)),
        'restarts': _Field('eval', 'restarts', int),
        'mim_decay': _Field('eval', 'mim_decay', float),
        'batch_size': _Field('eval', 'batch_size', int),
    },
    'output': {
        'dir': _Field('output', 'dir', Path),
    },
}


class _Entry(NamedTuple):
    section: str
    key: str
    value: Any
    line: int


def _read_entries(text: str, source: str) -> list[_Entry]:
    entries: list[_Entry] = []
    seen: dict[tuple[str, str], int] = {}
    section: str | None = None
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(('#', ';')):
            continue
        if line.startswith('['):
            if not line.endswith(']'):
                raise ConfigError(source, line_number, f'malformed section header {line!r}')
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                expected = ", ".join(_SCHEMA)
                raise ConfigError(source, line_number, f'unknown section [{section}]; expected one of {expected}')
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(source, line_number, f'expected "key = value", got {line!r}')
        if section is None:
            raise ConfigError(source, line_number, f'{key!r} appears before any section header')
        field_ = _SCHEMA[section].get(key)
        if field_ is None:
            raise ConfigError(source, line_number, f'unknown key {key!r} in section [{section}]')
        if (section, key) in seen:
            raise ConfigError(source, line_number, f'duplicate key {key!r}, first set on line {seen[section, key]}')
        seen[section, key] = line_number
        try:
            converted = field_.convert(value)
        except (ValueError, KeyError) as e:
            raise ConfigError(source, line_number, f'invalid value for {key!r}: {value!r} ({e})') from None
        entries.append(_Entry(section, key, converted, line_number))
    return entries


def parse_run_config(text: str, *, source: str = '<string>', base_dir: Path | None = None) -> RunConfig:
    """Parse the text of a run configuration.

    Relative paths are resolved against `base_dir` (by default, the current directory).

    Raises:
        ConfigError: On any syntax error, unknown section or key, invalid value or missing file.
    """
    entries = _read_entries(text, source)
    values: dict[str, dict[str, Any]] = {'train': {}, 'data': {}, 'model': {}, 'eval': {}, 'output': {}}
    lines: dict[tuple[str, str], int] = {}
    for entry in entries:
        field_ = _SCHEMA[entry.section][entry.key]
        value = entry.value
        if isinstance(value, Path) and base_dir is not None and not value.is_absolute():
            value = base_dir / value
        values[field_.target][field_.name] = value
        lines[field_.target, field_.name] = entry.line

    def build(target: str, factory: Callable[..., Any]) -> Any:
        try:
            return factory(**values[target])
        except FeedbackNNError as e:
            name = getattr(e, 'name', None)
            line = lines.get((target, name)) if isinstance(name, str) else None
            if line is None and name == 'source':
                line = lines.get((target, 'kind'))
            raise ConfigError(source, line, str(e)) from None

    train: TrainConfig = build('train', TrainConfig)
    if train.method is TrainingMethod.NATURAL and ('train', 'steps') in lines:
        logger.warning('%s:%d: attack steps are ignored by natural training', source, lines['train', 'steps'])
    data: DataSource = build('data', DataSource)
    model: ModelConfig = build('model', ModelConfig)
    if train.method is TrainingMethod.FLAT and model.feedback is False:
        raise ConfigError(source, lines.get(('model', 'feedback')), 'the flat method needs a feedback model')
    evaluation: EvalConfig = build('eval', EvalConfig)
    output_dir = values['output'].get('dir', Path('runs'))
    return RunConfig(train, data, model, evaluation, output_dir)


def load_run_config(path: str | Path) -> RunConfig:
    """Read and parse the run configuration at `path`; relative paths are resolved against its directory."""
    path = Path(path)
    try:
        content = path.read_bytes()
    except OSError as e:
        raise ConfigError(str(path), None, f'cannot read the configuration: {e.strerror}') from None
    try:
        text = content.decode('utf-8')
    except UnicodeDecodeError as e:
        line = content.count(b'\n', 0, e.start) + 1
        raise ConfigError(str(path), line, f'invalid UTF-8 byte 0x{content[e.start]:02x}') from None
    return parse_run_config(text, source=str(path), base_dir=path.parent)

