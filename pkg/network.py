# -*- coding: utf-8 -*-
"""
Сеть Auto-Set: кодировщик, декодировщик и голова предсказания множеств.

Три группы параметров:
- theta_enc: четыре временные свертки (ширина 5, шаг 2) с ReLU
- theta_dec: симметричная цепочка транспонированных сверток
- omega: два полносвязных слоя с ReLU и выходной слой из M сигмоид
  (элементы множества) и K+1 log-softmax (мощность множества)

Мультиклассовая голова (head='multiclass') заменяет выходной слой на
log-softmax по M активностям и Null-классу.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import CheckpointMismatchError, ConfigError, ShapeError
from tensor_autodiff import (DTYPE, Tensor, conv1d_temporal, deconv1d_temporal, dense,
                             log_softmax, relu, reshape, sigmoid, slice_last)

logger = logging.getLogger(__name__)

# Группы параметров в порядке индексов генератора инициализации
GROUP_ENCODER = 'theta_enc'
GROUP_DECODER = 'theta_dec'
GROUP_HEAD = 'omega'
GROUPS = (GROUP_ENCODER, GROUP_DECODER, GROUP_HEAD)

DECODER_ACTIVATIONS = ('sigmoid', 'linear')

# Голова множеств (M + K+1 выходов) или мультиклассовая (M активностей + Null)
HEAD_KINDS = ('set', 'multiclass')


# ============================================================================
# КОНФИГУРАЦИЯ АРХИТЕКТУРЫ
# ============================================================================

@dataclass(frozen=True)
class ArchitectureConfig:
    """
    Гиперпараметры сети.

    Attributes:
        n_channels (int): Число каналов d
        window (int): Длина окна w
        conv_filters (tuple): Число фильтров каждого сверточного слоя
        kernel (int): Ширина фильтра k
        stride (int): Шаг свертки
        dense_widths (tuple): Ширины скрытых полносвязных слоев
        n_activities (int): M - число выходов элементов
        max_cardinality (int): K - выходов мощности K+1
        decoder_activation (str): Активация последнего слоя декодировщика
        head (str): set или multiclass
    """
    n_channels: int
    window: int
    conv_filters: Tuple[int, ...] = (64, 64, 64, 64)
    kernel: int = 5
    stride: int = 2
    dense_widths: Tuple[int, ...] = (128, 128)
    n_activities: int = 1
    max_cardinality: int = 1
    decoder_activation: str = 'sigmoid'
    head: str = 'set'

    def validate(self) -> None:
        problems = []
        if self.n_channels < 1 or self.window < 1:
            problems.append(f"n_channels and window must be positive "
                            f"({self.n_channels}, {self.window})")
        if not self.conv_filters or min(self.conv_filters) < 1:
            problems.append(f"conv_filters must be non-empty positive counts: {self.conv_filters}")
        if not self.dense_widths or min(self.dense_widths) < 1:
            problems.append(f"dense_widths must be non-empty positive widths: {self.dense_widths}")
        if self.kernel < 1 or self.stride < 1:
            problems.append(f"kernel and stride must be positive ({self.kernel}, {self.stride})")
        if self.n_activities < 1:
            problems.append(f"n_activities must be >= 1, got {self.n_activities}")
        if not 0 <= self.max_cardinality <= self.n_activities:
            problems.append(f"max_cardinality must be in 0..{self.n_activities}, "
                            f"got {self.max_cardinality}")
        if self.decoder_activation not in DECODER_ACTIVATIONS:
            problems.append(f"decoder_activation must be one of {DECODER_ACTIVATIONS}")
        if self.head not in HEAD_KINDS:
            problems.append(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if problems:
            raise ConfigError("Invalid architecture: " + "; ".join(problems))

        t = self.window
        for layer, _ in enumerate(self.conv_filters, start=1):
            if t < self.kernel:
                raise ShapeError(f"conv layer {layer}: temporal length {t} < kernel {self.kernel}")
            t = (t - self.kernel) // self.stride + 1

    def temporal_lengths(self) -> List[int]:
        """Длины по времени: [w, t1, ..., tn] (для w=200: 200, 98, 47, 22, 9)."""
        lengths = [self.window]
        for _ in self.conv_filters:
            lengths.append((lengths[-1] - self.kernel) // self.stride + 1)
        return lengths

    @property
    def latent_size(self) -> int:
        return self.conv_filters[-1] * self.temporal_lengths()[-1]

    @property
    def head_width(self) -> int:
        if self.head == 'multiclass':
            return self.n_activities + 1
        return self.n_activities + self.max_cardinality + 1

    def to_dict(self) -> Dict:
        record = asdict(self)
        record['conv_filters'] = list(self.conv_filters)
        record['dense_widths'] = list(self.dense_widths)
        return record

    @classmethod
    def from_dict(cls, record: Dict) -> "ArchitectureConfig":
        values = dict(record)
        values['conv_filters'] = tuple(values['conv_filters'])
        values['dense_widths'] = tuple(values['dense_widths'])
        return cls(**values)


# ============================================================================
# ПРЕДСТАВЛЕНИЯ ВЫХОДОВ
# ============================================================================

@dataclass
class LatentRep:
    """Выпрямленная последняя карта признаков кодировщика (p значений)."""
    z: np.ndarray

    @property
    def size(self) -> int:
        return self.z.shape[-1]


@dataclass
class SetScores:
    """Вероятности M элементов и K+1 лог-вероятностей мощности."""
    element_scores: np.ndarray
    cardinality_logscores: np.ndarray

    @property
    def n_activities(self) -> int:
        return self.element_scores.shape[-1]

    @property
    def max_cardinality(self) -> int:
        return self.cardinality_logscores.shape[-1] - 1


# ============================================================================
# ХРАНИЛИЩЕ ПАРАМЕТРОВ
# ============================================================================

def _parameter_layout(arch: ArchitectureConfig,
                      include_decoder: bool) -> List[Tuple[str, str, Tuple[int, ...], int, int]]:
    # (имя, группа, форма, fan_in, fan_out); смещения имеют fan 0
    layout = []
    k = arch.kernel
    channels = [arch.n_channels] + list(arch.conv_filters)
    for i in range(1, len(channels)):
        c_in, c_out = channels[i - 1], channels[i]
        layout.append((f"enc.conv{i}.weight", GROUP_ENCODER, (c_out, c_in, k), c_in * k, c_out * k))
        layout.append((f"enc.conv{i}.bias", GROUP_ENCODER, (c_out,), 0, 0))

    if include_decoder:
        n = len(arch.conv_filters)
        for j in range(1, n + 1):
            c_in, c_out = channels[n - j + 1], channels[n - j]
            layout.append((f"dec.deconv{j}.weight", GROUP_DECODER, (c_in, c_out, k),
                           c_in * k, c_out * k))
            layout.append((f"dec.deconv{j}.bias", GROUP_DECODER, (c_out,), 0, 0))

    widths = [arch.latent_size] + list(arch.dense_widths)
    for j in range(1, len(widths)):
        layout.append((f"head.dense{j}.weight", GROUP_HEAD, (widths[j], widths[j - 1]),
                       widths[j - 1], widths[j]))
        layout.append((f"head.dense{j}.bias", GROUP_HEAD, (widths[j],), 0, 0))
    layout.append(("head.out.weight", GROUP_HEAD, (arch.head_width, widths[-1]),
                   widths[-1], arch.head_width))
    layout.append(("head.out.bias", GROUP_HEAD, (arch.head_width,), 0, 0))
    return layout


class ParameterStore:
    """
    Именованные тензоры параметров, разбитые на группы theta_enc/theta_dec/omega,
    с моментами ADAM и счетчиком шагов.
    """

    def __init__(self, arch: ArchitectureConfig, tensors: Dict[str, Tensor],
                 groups: Dict[str, str], vocabulary: Optional[Sequence[str]] = None):
        if set(tensors) != set(groups):
            raise CheckpointMismatchError("Every parameter needs exactly one group tag")
        self.arch = arch
        self.tensors = tensors
        self.groups = groups
        self.vocabulary: Optional[Tuple[str, ...]] = tuple(vocabulary) if vocabulary else None
        self.m = {name: np.zeros_like(t.data) for name, t in tensors.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in tensors.items()}
        self.step = 0

    @classmethod
    def initialize(cls, arch: ArchitectureConfig, seed: int, include_decoder: bool = True,
                   vocabulary: Optional[Sequence[str]] = None) -> "ParameterStore":
        """
        Инициализация Глоро: U(-sqrt(6/(fan_in+fan_out)), +...), смещения нулевые.

        Каждая группа получает свой генератор default_rng([seed, индекс группы]),
        поэтому наличие декодировщика не меняет начальные веса остальных групп.
        """
        arch.validate()
        rngs = {group: np.random.default_rng([seed, i]) for i, group in enumerate(GROUPS)}
        tensors, groups = {}, {}
        for name, group, shape, fan_in, fan_out in _parameter_layout(arch, include_decoder):
            if fan_in:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                data = rngs[group].uniform(-limit, limit, size=shape)
            else:
                data = np.zeros(shape, dtype=DTYPE)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
            groups[name] = group
        store = cls(arch, tensors, groups, vocabulary)
        logger.info(f"Initialized parameters: {store.parameter_counts()}")
        return store

    @classmethod
    def from_arrays(cls, arch: ArchitectureConfig, arrays: Dict[str, np.ndarray],
                    groups: Dict[str, str],
                    vocabulary: Optional[Sequence[str]] = None) -> "ParameterStore":
        """Восстановление из чекпоинта с проверкой имен и форм по архитектуре."""
        include_decoder = any(g == GROUP_DECODER for g in groups.values())
        expected = {name: (group, shape)
                    for name, group, shape, _, _ in _parameter_layout(arch, include_decoder)}
        if set(expected) != set(arrays):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise CheckpointMismatchError(f"Checkpoint parameters do not match architecture "
                                          f"(missing {missing}, unexpected {extra})")
        tensors = {}
        for name, (group, shape) in expected.items():
            if groups[name] != group or tuple(arrays[name].shape) != shape:
                raise CheckpointMismatchError(
                    f"Parameter {name}: expected group {group} shape {shape}, got "
                    f"group {groups[name]} shape {tuple(arrays[name].shape)}")
            tensors[name] = Tensor(arrays[name], requires_grad=True, name=name)
        return cls(arch, tensors, {name: expected[name][0] for name in expected}, vocabulary)

    @property
    def has_decoder(self) -> bool:
        return GROUP_DECODER in self.groups.values()

    def names(self, groups: Optional[Iterable[str]] = None) -> List[str]:
        wanted = set(groups) if groups is not None else set(GROUPS)
        return [name for name in self.tensors if self.groups[name] in wanted]

    def subset(self, groups: Iterable[str]) -> Dict[str, Tensor]:
        return {name: self.tensors[name] for name in self.names(groups)}

    def parameter_counts(self) -> Dict[str, int]:
        counts = {group: 0 for group in GROUPS}
        for name, tensor in self.tensors.items():
            counts[self.groups[name]] += tensor.size
        return counts

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Копия весов для выбора лучшей эпохи."""
        return self.arrays()

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, data in snapshot.items():
            self.tensors[name].data[...] = data

    def load_group_from(self, other: "ParameterStore", group: str) -> None:
        """
        Копирование весов группы из другого хранилища (теплый старт кодировщика).

        Raises:
            CheckpointMismatchError: Несовпадение имен или форм
        """
        mine, theirs = self.names([group]), other.names([group])
        if mine != theirs:
            raise CheckpointMismatchError(f"Group {group}: parameter names differ "
                                          f"({mine} vs {theirs})")
        for name in mine:
            src = other.tensors[name].data
            if src.shape != self.tensors[name].shape:
                raise CheckpointMismatchError(f"Parameter {name}: shape {src.shape} != "
                                              f"{self.tensors[name].shape}")
            self.tensors[name].data[...] = src


# ============================================================================
# ПРЯМЫЕ ПРОХОДЫ
# ============================================================================

def _check_input(x: Tensor, arch: ArchitectureConfig) -> None:
    if x.ndim not in (2, 3) or x.shape[-2:] != (arch.n_channels, arch.window):
        raise ShapeError(f"Segment shape {x.shape} does not match "
                         f"d x w = {arch.n_channels} x {arch.window}")


def encode_tensor(x: Union[Tensor, np.ndarray], params: ParameterStore) -> Tensor:
    """Кодировщик на графе: [d, w] -> [p] или [B, d, w] -> [B, p]."""
    arch = params.arch
    h = x if isinstance(x, Tensor) else Tensor(x)
    _check_input(h, arch)
    batched = h.ndim == 3
    for i in range(1, len(arch.conv_filters) + 1):
        h = relu(conv1d_temporal(h, params.tensors[f"enc.conv{i}.weight"],
                                 params.tensors[f"enc.conv{i}.bias"], stride=arch.stride))
    flat = (h.shape[0], arch.latent_size) if batched else (arch.latent_size,)
    return reshape(h, flat)


def decode_tensor(z: Tensor, params: ParameterStore) -> Tensor:
    """Декодировщик на графе: [p] -> [d, w] (или с осью батча)."""
    arch = params.arch
    if not params.has_decoder:
        raise CheckpointMismatchError("Parameter store has no decoder parameters")
    if z.shape[-1] != arch.latent_size:
        raise ShapeError(f"Latent size {z.shape[-1]} != {arch.latent_size}")
    lengths = arch.temporal_lengths()
    n = len(arch.conv_filters)
    map_shape = (arch.conv_filters[-1], lengths[-1])
    h = reshape(z, (z.shape[0],) + map_shape if z.ndim == 2 else map_shape)
    for j in range(1, n + 1):
        h = deconv1d_temporal(h, params.tensors[f"dec.deconv{j}.weight"],
                              params.tensors[f"dec.deconv{j}.bias"], stride=arch.stride,
                              target_length=lengths[n - j])
        if j < n:
            h = relu(h)
    return sigmoid(h) if arch.decoder_activation == 'sigmoid' else h


def _head_output(z: Tensor, params: ParameterStore, head: str) -> Tensor:
    arch = params.arch
    if arch.head != head:
        raise ConfigError(f"Parameter store has a {arch.head} head, {head} head requested")
    h = z
    for j in range(1, len(arch.dense_widths) + 1):
        h = relu(dense(h, params.tensors[f"head.dense{j}.weight"],
                       params.tensors[f"head.dense{j}.bias"]))
    return dense(h, params.tensors["head.out.weight"], params.tensors["head.out.bias"])


def head_tensors(z: Tensor, params: ParameterStore) -> Tuple[Tensor, Tensor]:
    """Голова: (вероятности элементов [.., M], лог-вероятности мощности [.., K+1])."""
    arch = params.arch
    out = _head_output(z, params, 'set')
    m = arch.n_activities
    return sigmoid(slice_last(out, 0, m)), log_softmax(slice_last(out, m, arch.head_width))


def class_logscores_tensor(z: Tensor, params: ParameterStore) -> Tensor:
    """Мультиклассовая голова: log-softmax по M активностям и Null (индекс M)."""
    return log_softmax(_head_output(z, params, 'multiclass'))


def encode(x: np.ndarray, params: ParameterStore) -> LatentRep:
    return LatentRep(encode_tensor(x, params).numpy().copy())


def decode(z: Union[LatentRep, np.ndarray], params: ParameterStore) -> np.ndarray:
    data = z.z if isinstance(z, LatentRep) else z
    return decode_tensor(Tensor(data), params).numpy().copy()


def predict_scores(x: np.ndarray, params: ParameterStore) -> SetScores:
    """
    Оценки множества для сегмента [d, w] (или батча [B, d, w]).

    Returns:
        SetScores: element_scores в (0,1)^M и нормированные лог-вероятности мощности
    """
    probs, logprobs = head_tensors(encode_tensor(x, params), params)
    return SetScores(probs.numpy().copy(), logprobs.numpy().copy())


def predict_batches(segments: np.ndarray, params: ParameterStore,
                    batch_size: int = 256) -> List[SetScores]:
    """Оценки для массива [N, d, w], по одному SetScores на сегмент."""
    results: List[SetScores] = []
    for start in range(0, segments.shape[0], batch_size):
        scores = predict_scores(segments[start:start + batch_size], params)
        results.extend(SetScores(e, c) for e, c in zip(scores.element_scores,
                                                       scores.cardinality_logscores))
    return results


def predict_class_logscores(segments: np.ndarray, params: ParameterStore,
                            batch_size: int = 256) -> np.ndarray:
    """Лог-вероятности классов [N, M+1] мультиклассовой модели для массива [N, d, w]."""
    chunks = [class_logscores_tensor(encode_tensor(segments[start:start + batch_size], params),
                                     params).numpy().copy()
              for start in range(0, segments.shape[0], batch_size)]
    if not chunks:
        return np.zeros((0, params.arch.head_width), dtype=DTYPE)
    return np.concatenate(chunks)
