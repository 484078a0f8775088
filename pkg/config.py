# -*- coding: utf-8 -*-
"""
Конфигурация запуска конвейера Auto-Set.

Формат файла - dotenv (KEY=value), разделы задаются префиксами ключей
(PATHS_, DATA_, SEGMENTATION_, ARCH_, TRAIN_, INFERENCE_, SYNTH_ и SEED)
и отмечаются комментариями "# [раздел]" при сохранении.

Приоритет значений: переменная окружения AUTOSET_<KEY>, затем файл,
затем значения по умолчанию. Списки записываются через запятую,
числа с плавающей точкой - через repr, поэтому сохранение и загрузка
не теряют точности.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from dotenv import dotenv_values

from dataio import SegmentationConfig
from errors import AutoSetError, ConfigError
from inference import CALIBRATION_METRICS, DEFAULT_U_GRID, InferenceConfig
from network import DECODER_ACTIVATIONS, ArchitectureConfig
from synthgen import SynthConfig, default_signatures
from training import TrainConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = 'AUTOSET_'
DATA_FORMATS = ('generic', 'wisdm', 'synthetic')


# ============================================================================
# РАЗДЕЛЫ КОНФИГУРАЦИИ
# ============================================================================

@dataclass
class PathsSection:
    data: str = 'data/stream.csv'
    format: str = 'generic'
    out: str = 'out'
    log_dir: str = 'logs'


@dataclass
class DataSection:
    null_label: str = 'null'
    sample_rate: float = 20.0
    test_fraction: float = 0.25
    # 0 - число тестовых записей по доле test_fraction
    test_streams: int = 0
    val_fraction: float = 0.15
    labeled_fraction: float = 1.0


@dataclass
class SegmentationSection:
    window: int = 200
    stride: int = 20
    # 0 - половина частоты дискретизации
    recognition_length: int = 0


@dataclass
class ArchSection:
    conv_filters: Tuple[int, ...] = (64, 64, 64, 64)
    kernel: int = 5
    stride: int = 2
    dense_widths: Tuple[int, ...] = (128, 128)
    # 0 - максимальная мощность целей обучающих данных
    max_cardinality: int = 0
    decoder_activation: str = 'sigmoid'


@dataclass
class TrainSection:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 64
    lr_decay: float = 0.95
    decay_pretraining: bool = False
    patience: int = 5
    max_epochs: int = 20


@dataclass
class InferenceSection:
    # Пусто - U подбирается на валидации
    u: Optional[float] = field(default=None, metadata={'kind': 'optional_float'})
    threshold: float = 0.5
    u_grid: Tuple[float, ...] = DEFAULT_U_GRID
    calibration_metric: str = 'mr'


@dataclass
class SynthSection:
    n_channels: int = 3
    activities: Tuple[str, ...] = ('walk', 'jog', 'sit')
    sample_rate: float = 20.0
    total_length: int = 60000
    episode_min: int = 100
    episode_max: int = 300
    noise_std: float = 0.05
    null_fraction: float = 0.0


SECTIONS = (
    ('paths', 'PATHS', PathsSection),
    ('data', 'DATA', DataSection),
    ('segmentation', 'SEGMENTATION', SegmentationSection),
    ('arch', 'ARCH', ArchSection),
    ('train', 'TRAIN', TrainSection),
    ('inference', 'INFERENCE', InferenceSection),
    ('synth', 'SYNTH', SynthSection),
)


# ============================================================================
# ПРЕОБРАЗОВАНИЕ ЗНАЧЕНИЙ
# ============================================================================

def _format_value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ','.join(_format_value(v) for v in value)
    return str(value)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_value(raw: str, default: Any, kind: Optional[str]) -> Any:
    raw = raw.strip()
    if kind == 'optional_float':
        return None if raw == '' else float(raw)
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [item.strip() for item in raw.split(',') if item.strip()]
        sample = default[0] if default else ''
        if isinstance(sample, int):
            return tuple(int(item) for item in items)
        if isinstance(sample, float):
            return tuple(float(item) for item in items)
        return tuple(items)
    return raw


# ============================================================================
# КОНФИГУРАЦИЯ ЗАПУСКА
# ============================================================================

@dataclass
class RunConfig:
    """
    Полная конфигурация запуска: пути, данные, сегментация, архитектура,
    обучение, вывод, синтетический генератор и зерно.
    """
    paths: PathsSection = field(default_factory=PathsSection)
    data: DataSection = field(default_factory=DataSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    arch: ArchSection = field(default_factory=ArchSection)
    train: TrainSection = field(default_factory=TrainSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    synth: SynthSection = field(default_factory=SynthSection)
    seed: int = 0

    # ------------------------------------------------------------------
    # Загрузка и сохранение
    # ------------------------------------------------------------------

    @classmethod
    def keys(cls) -> List[str]:
        result = []
        for _, prefix, section_cls in SECTIONS:
            result.extend(f"{prefix}_{f.name.upper()}" for f in fields(section_cls))
        return result + ['SEED']

    @classmethod
    def load(cls, path: Optional[str] = None,
             environ: Optional[Dict[str, str]] = None) -> "RunConfig":
        """
        Загрузка конфигурации из файла dotenv и переменных AUTOSET_*.

        Raises:
            ConfigError: Файл не найден или значения не разбираются
        """
        values: Dict[str, Optional[str]] = {}
        if path is not None:
            if not os.path.isfile(path):
                raise ConfigError(f"Config file not found: {path}")
            values.update(dotenv_values(path))
        environ = os.environ if environ is None else environ
        known = set(cls.keys())
        for key in known:
            env_value = environ.get(ENV_PREFIX + key)
            if env_value is not None:
                values[key] = env_value

        unknown = sorted(set(values) - known)
        if unknown:
            logger.warning(f"Ignoring unknown config keys: {unknown}")

        config, problems = cls(), []
        for attr, prefix, section_cls in SECTIONS:
            section = getattr(config, attr)
            for f in fields(section_cls):
                key = f"{prefix}_{f.name.upper()}"
                if values.get(key) is None:
                    continue
                try:
                    setattr(section, f.name, _parse_value(values[key], getattr(section, f.name),
                                                          f.metadata.get('kind')))
                except ValueError as e:
                    problems.append(f"{key}: {e}")
        if values.get('SEED') is not None:
            try:
                config.seed = int(values['SEED'])
            except ValueError as e:
                problems.append(f"SEED: {e}")
        if problems:
            raise ConfigError("Cannot parse config: " + "; ".join(problems))
        return config

    def to_lines(self) -> List[str]:
        lines = []
        for attr, prefix, section_cls in SECTIONS:
            section = getattr(self, attr)
            lines.append(f"# [{attr}]")
            for f in fields(section_cls):
                lines.append(f"{prefix}_{f.name.upper()}={_format_value(getattr(section, f.name))}")
            lines.append('')
        lines.append('SEED=' + _format_value(self.seed))
        return lines

    def save(self, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write('\n'.join(self.to_lines()) + '\n')

    # ------------------------------------------------------------------
    # Производные конфигурации модулей
    # ------------------------------------------------------------------

    @property
    def recognition_length(self) -> int:
        r = self.segmentation.recognition_length
        return r if r > 0 else max(1, int(round(self.data.sample_rate / 2.0)))

    def segmentation_config(self) -> SegmentationConfig:
        try:
            return SegmentationConfig(self.segmentation.window, self.segmentation.stride,
                                      self.recognition_length)
        except AutoSetError as e:
            raise ConfigError(str(e)) from e

    def architecture(self, n_channels: int, n_activities: int, max_cardinality: int,
                     head: str = 'set') -> ArchitectureConfig:
        """Архитектура для данных (d, M); ARCH_MAX_CARDINALITY > 0 фиксирует K."""
        k = self.arch.max_cardinality or max_cardinality
        return ArchitectureConfig(
            n_channels=n_channels, window=self.segmentation.window,
            conv_filters=self.arch.conv_filters, kernel=self.arch.kernel,
            stride=self.arch.stride, dense_widths=self.arch.dense_widths,
            n_activities=n_activities, max_cardinality=k,
            decoder_activation=self.arch.decoder_activation, head=head)

    def train_config(self, mode: str) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.train.learning_rate, weight_decay=self.train.weight_decay,
            batch_size=self.train.batch_size, lr_decay=self.train.lr_decay,
            decay_enabled=self.train.decay_pretraining if mode == 'auto' else True,
            patience=self.train.patience, max_epochs=self.train.max_epochs,
            seed=self.seed, mode=mode)

    def inference_config(self, mode: str, u: Optional[float] = None,
                         threshold: Optional[float] = None) -> InferenceConfig:
        return InferenceConfig(
            u=u if u is not None else (self.inference.u or 1.0),
            mode=mode,
            threshold=threshold if threshold is not None else self.inference.threshold)

    def synth_config(self, seed: Optional[int] = None) -> SynthConfig:
        s = self.synth
        return SynthConfig(
            n_channels=s.n_channels, sample_rate=s.sample_rate,
            activities=default_signatures(s.activities, s.n_channels),
            noise_std=s.noise_std, episode_min=s.episode_min, episode_max=s.episode_max,
            total_length=s.total_length, null_fraction=s.null_fraction,
            seed=self.seed if seed is None else seed)

    # ------------------------------------------------------------------
    # Проверка
    # ------------------------------------------------------------------

    def validate(self, require_data: bool = False) -> None:
        """
        Проверка всех значений до каких-либо побочных эффектов.

        Args:
            require_data (bool): Требовать существования PATHS_DATA

        Raises:
            ConfigError: Список всех найденных проблем
        """
        problems = []
        if self.paths.format not in DATA_FORMATS:
            problems.append(f"PATHS_FORMAT must be one of {DATA_FORMATS}")
        if require_data and self.paths.format != 'synthetic' and \
                not os.path.exists(self.paths.data):
            problems.append(f"PATHS_DATA does not exist: {self.paths.data}")
        if self.data.sample_rate <= 0:
            problems.append("DATA_SAMPLE_RATE must be positive")
        if not 0 <= self.data.test_fraction < 1:
            problems.append("DATA_TEST_FRACTION must be in [0, 1)")
        if self.data.test_streams < 0:
            problems.append("DATA_TEST_STREAMS must be >= 0")
        if not 0 <= self.data.val_fraction < 1:
            problems.append("DATA_VAL_FRACTION must be in [0, 1)")
        if not 0 <= self.data.labeled_fraction <= 1:
            problems.append("DATA_LABELED_FRACTION must be in [0, 1]")
        if self.segmentation.recognition_length < 0:
            problems.append("SEGMENTATION_RECOGNITION_LENGTH must be >= 0")
        if self.arch.max_cardinality < 0:
            problems.append("ARCH_MAX_CARDINALITY must be >= 0")
        if self.arch.decoder_activation not in DECODER_ACTIVATIONS:
            problems.append(f"ARCH_DECODER_ACTIVATION must be one of {DECODER_ACTIVATIONS}")
        if self.inference.u is not None and self.inference.u <= 0:
            problems.append("INFERENCE_U must be positive")
        if not 0 < self.inference.threshold < 1:
            problems.append("INFERENCE_THRESHOLD must be in (0, 1)")
        if not self.inference.u_grid or min(self.inference.u_grid) <= 0:
            problems.append("INFERENCE_U_GRID must list positive values")
        if self.inference.calibration_metric not in CALIBRATION_METRICS:
            problems.append(f"INFERENCE_CALIBRATION_METRIC must be one of {CALIBRATION_METRICS}")

        checks = [
            self.segmentation_config,
            lambda: self.architecture(1, 1, 1).validate(),
            lambda: self.train_config('set').validate(),
            lambda: self.synth_config().validate(),
        ]
        for check in checks:
            try:
                check()
            except AutoSetError as e:
                problems.append(str(e))
        if problems:
            raise ConfigError("Invalid configuration: " + "; ".join(problems))
