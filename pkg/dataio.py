# -*- coding: utf-8 -*-
"""
Модуль подготовки данных датчиков для распознавания активностей.

Этот модуль обеспечивает:
- Загрузку сырых аннотированных потоков (WISDM CSV и общий формат t,label,ch1..chd)
- Поканальную нормализацию в [0,1] по статистике обучающих потоков
- Сегментацию скользящим окном (w отсчетов, шаг stride)
- Построение целевого множества активностей с длиной распознавания r
- Разбиение на обучающие/валидационные/тестовые и размеченные/неразмеченные части

Пустое множество активностей означает Null-сегмент: Null-класс не входит
в словарь и выражается только пустым целевым множеством.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataFormatError, EmptyDatasetError, UnknownActivityError

logger = logging.getLogger(__name__)

# ============================================================================
# КОНСТАНТЫ
# ============================================================================

# Защита от деления на ноль для постоянных каналов
RANGE_EPS = 1e-12

# Колонки сырого файла WISDM: user,activity,timestamp,x,y,z;
WISDM_COLUMNS = ['user', 'activity', 'timestamp', 'x', 'y', 'z']
WISDM_SAMPLE_RATE_HZ = 20.0

# Метка Null по умолчанию в общем формате
DEFAULT_NULL_LABEL = 'null'


# ============================================================================
# СЛОВАРЬ АКТИВНОСТЕЙ И МНОЖЕСТВА
# ============================================================================

@dataclass(frozen=True)
class ActivityVocabulary:
    """
    Упорядоченный список из M различных активностей.

    Null-класс в словарь не входит.
    """
    labels: Tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 1:
            raise DataFormatError("Activity vocabulary must contain at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise DataFormatError(f"Activity vocabulary has duplicate labels: {self.labels}")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownActivityError(label) from None

    @classmethod
    def from_annotations(cls, annotations: Iterable[Optional[str]]) -> "ActivityVocabulary":
        """Словарь из отсортированных уникальных не-Null меток."""
        return cls(tuple(sorted({a for a in annotations if a is not None})))


@dataclass(frozen=True)
class ActivitySet:
    """
    Множество активностей сегмента; пустое множество - Null-сегмент.
    """
    members: FrozenSet[str] = frozenset()

    @property
    def cardinality(self) -> int:
        return len(self.members)

    def ordered(self, vocab: ActivityVocabulary) -> List[str]:
        """Элементы в порядке словаря."""
        return [label for label in vocab.labels if label in self.members]

    def indicator(self, vocab: ActivityVocabulary) -> np.ndarray:
        for label in self.members:
            vocab.index(label)
        return np.array([1.0 if label in self.members else 0.0 for label in vocab.labels])

    def bitmap(self, vocab: ActivityVocabulary) -> int:
        return sum(1 << vocab.index(label) for label in self.members)

    @classmethod
    def of(cls, *labels: str) -> "ActivitySet":
        return cls(frozenset(labels))

    @classmethod
    def from_bitmap(cls, bitmap: int, vocab: ActivityVocabulary) -> "ActivitySet":
        if bitmap >> len(vocab):
            raise DataFormatError(f"Set bitmap {bitmap:#x} exceeds vocabulary of {len(vocab)}")
        return cls(frozenset(label for i, label in enumerate(vocab.labels) if bitmap >> i & 1))

    @classmethod
    def from_indices(cls, indices: Iterable[int], vocab: ActivityVocabulary) -> "ActivitySet":
        return cls(frozenset(vocab.labels[i] for i in indices))

    def describe(self, vocab: Optional[ActivityVocabulary] = None) -> str:
        items = self.ordered(vocab) if vocab else sorted(self.members)
        return '{' + ','.join(items) + '}'


# ============================================================================
# ПОТОКИ, КОНФИГУРАЦИЯ И СЕГМЕНТЫ
# ============================================================================

@dataclass
class SensorStream:
    """
    d именованных каналов одинаковой длины L с необязательными аннотациями.

    Attributes:
        channels (np.ndarray): Массив [d, L]
        channel_names (tuple): Имена каналов
        annotations (tuple): Метка каждого отсчета (None - Null) или None
        sample_rate_hz (float): Частота дискретизации
        stream_id (str): Идентификатор записи (пользователь, файл)
    """
    channels: np.ndarray
    channel_names: Tuple[str, ...]
    annotations: Optional[Tuple[Optional[str], ...]] = None
    sample_rate_hz: float = WISDM_SAMPLE_RATE_HZ
    stream_id: str = 'stream'

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=np.float64))
        if len(self.channel_names) != self.channels.shape[0]:
            raise DataFormatError(f"Stream {self.stream_id}: {self.channels.shape[0]} channels "
                                  f"but {len(self.channel_names)} names")
        if self.annotations is not None and len(self.annotations) != self.length:
            raise DataFormatError(f"Stream {self.stream_id}: {len(self.annotations)} annotations "
                                  f"for {self.length} samples")
        if self.sample_rate_hz <= 0:
            raise DataFormatError(f"Stream {self.stream_id}: sample rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    def slice(self, start: int, stop: int, stream_id: Optional[str] = None) -> "SensorStream":
        annotations = None if self.annotations is None else self.annotations[start:stop]
        return replace(self, channels=self.channels[:, start:stop].copy(),
                       annotations=annotations, stream_id=stream_id or self.stream_id)


@dataclass(frozen=True)
class SegmentationConfig:
    """Параметры окна: w=200, stride=20, r=10 (половина частоты 20 Гц)."""
    window_w: int = 200
    stride: int = 20
    recognition_length_r: int = 10

    def __post_init__(self):
        if min(self.window_w, self.stride, self.recognition_length_r) < 1:
            raise DataFormatError(f"Segmentation parameters must be positive: {self}")
        if self.recognition_length_r > self.window_w:
            raise DataFormatError(f"Recognition length r={self.recognition_length_r} exceeds "
                                  f"window w={self.window_w}")
        if self.stride > self.window_w:
            raise DataFormatError(f"Stride {self.stride} exceeds window w={self.window_w}")


@dataclass
class Segment:
    """Окно d x w потока без цели (элемент неразмеченного набора U)."""
    data: np.ndarray
    offset: int
    stream_id: str = 'stream'


@dataclass
class LabeledSegment(Segment):
    """
    Окно с целевым множеством активностей (элемент S).

    approx_target - мультиклассовое приближение цели по последнему отсчету
    (None, если окно размечено без аннотаций потока).
    """
    target: ActivitySet = field(default_factory=ActivitySet)
    approx_target: Optional[ActivitySet] = None

    def unlabeled(self) -> Segment:
        return Segment(self.data, self.offset, self.stream_id)


@dataclass
class ChannelStats:
    """Поканальные минимумы и максимумы обучающих данных."""
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> Dict[str, List[float]]:
        return {'mins': [float(v) for v in self.mins], 'maxs': [float(v) for v in self.maxs]}

    @classmethod
    def from_dict(cls, record: Dict[str, List[float]]) -> "ChannelStats":
        return cls(np.asarray(record['mins'], dtype=np.float64),
                   np.asarray(record['maxs'], dtype=np.float64))


# ============================================================================
# НОРМАЛИЗАЦИЯ
# ============================================================================

def compute_channel_stats(streams: Sequence[SensorStream]) -> ChannelStats:
    """Совместные min/max по всем переданным (обучающим) потокам."""
    if not streams:
        raise EmptyDatasetError("Cannot compute channel statistics without streams")
    stacked = np.concatenate([s.channels for s in streams], axis=1)
    return ChannelStats(stacked.min(axis=1), stacked.max(axis=1))


def normalize_per_channel(stream: SensorStream,
                          stats: Optional[ChannelStats] = None
                          ) -> Tuple[SensorStream, ChannelStats]:
    """
    Поканальное масштабирование (x - min) / (max - min) в [0, 1].

    Без stats статистика считается по самому потоку (обучение); переданная
    статистика (валидация/тест) применяется с обрезкой в [0, 1].
    Постоянный канал (диапазон < 1e-12) отображается в нули.

    Args:
        stream (SensorStream): Исходный поток
        stats (ChannelStats): Статистика обучающих данных или None

    Returns:
        Tuple[SensorStream, ChannelStats]: Нормализованный поток и использованная статистика
    """
    if stream.length == 0:
        raise EmptyDatasetError(f"Stream {stream.stream_id} has no samples")
    if stats is None:
        stats = compute_channel_stats([stream])
    if stats.mins.shape[0] != stream.n_channels:
        raise DataFormatError(f"Channel statistics for {stats.mins.shape[0]} channels, "
                              f"stream {stream.stream_id} has {stream.n_channels}")

    span = stats.maxs - stats.mins
    degenerate = span < RANGE_EPS
    safe_span = np.where(degenerate, 1.0, span)
    scaled = (stream.channels - stats.mins[:, None]) / safe_span[:, None]
    scaled[degenerate, :] = 0.0
    scaled = np.clip(scaled, 0.0, 1.0)
    return replace(stream, channels=scaled), stats


# ============================================================================
# СЕГМЕНТАЦИЯ И ЦЕЛЕВЫЕ МНОЖЕСТВА
# ============================================================================

def segment(stream: SensorStream, cfg: SegmentationConfig) -> List[Segment]:
    """
    Нарезка потока окнами w со сдвигом stride.

    Окна начинаются в 0, stride, 2*stride, ...; их число
    floor((L - w) / stride) + 1; неполное хвостовое окно отбрасывается.
    При L < w возвращается пустой список с предупреждением.
    """
    w, stride = cfg.window_w, cfg.stride
    if stream.length < w:
        logger.warning(f"Stream {stream.stream_id}: length {stream.length} shorter than "
                       f"window {w}, no segments produced")
        return []
    count = (stream.length - w) // stride + 1
    return [Segment(stream.channels[:, i * stride:i * stride + w].copy(), i * stride,
                    stream.stream_id)
            for i in range(count)]


def count_window_labels(annotations: Sequence[Optional[str]],
                        vocab: ActivityVocabulary) -> Tuple[Dict[str, int], int]:
    """
    Подсчет отсчетов каждой активности в окне.

    Returns:
        Tuple[Dict[str, int], int]: Счетчики по словарю и число Null-отсчетов

    Raises:
        UnknownActivityError: Метка вне словаря
    """
    counts = Counter(annotations)
    null_count = counts.pop(None, 0)
    for label in counts:
        vocab.index(label)
    return {label: counts.get(label, 0) for label in vocab.labels}, null_count


def build_target_set(annotations: Sequence[Optional[str]], vocab: ActivityVocabulary,
                     r: int) -> ActivitySet:
    """
    Целевое множество окна: активности с не менее чем r отсчетами.

    Порог включающий (count >= r); Null-отсчеты в множество не попадают.
    Если ни одна активность не набрала r отсчетов, результат - пустое множество.
    """
    counts, null_count = count_window_labels(annotations, vocab)
    if null_count == len(annotations):
        return ActivitySet()
    return ActivitySet(frozenset(label for label, n in counts.items() if n >= r))


def build_last_sample_target(annotations: Sequence[Optional[str]],
                             vocab: ActivityVocabulary) -> ActivitySet:
    """
    Мультиклассовое приближение цели: метка последнего отсчета окна.

    Цель мультиклассовой модели и мера потерь информации при приближенной разметке.
    """
    last = annotations[-1]
    if last is None:
        return ActivitySet()
    vocab.index(last)
    return ActivitySet.of(last)


def label_segments(stream: SensorStream, segments: Sequence[Segment],
                   vocab: ActivityVocabulary, cfg: SegmentationConfig) -> List[LabeledSegment]:
    """Присваивает каждому окну целевое множество и цель по последнему отсчету."""
    if stream.annotations is None:
        raise DataFormatError(f"Stream {stream.stream_id} has no annotations to label from")
    w, r = cfg.window_w, cfg.recognition_length_r
    labeled = []
    for seg in segments:
        window = stream.annotations[seg.offset:seg.offset + w]
        labeled.append(LabeledSegment(seg.data, seg.offset, seg.stream_id,
                                      target=build_target_set(window, vocab, r),
                                      approx_target=build_last_sample_target(window, vocab)))
    return labeled


def approximation_mismatch(stream: SensorStream, segments: Sequence[LabeledSegment],
                           vocab: ActivityVocabulary, cfg: SegmentationConfig) -> int:
    """Число окон, где приближение по последнему отсчету не совпадает с целью."""
    w = cfg.window_w
    return sum(1 for seg in segments
               if build_last_sample_target(stream.annotations[seg.offset:seg.offset + w],
                                           vocab) != seg.target)


# ============================================================================
# ЗАГРУЗКА ДАННЫХ
# ============================================================================

def ingest_wisdm_csv(path: str) -> Dict[str, SensorStream]:
    """
    Загрузка файла WISDM (строки user,activity,timestamp,x,y,z с ';' в конце).

    Возвращает по одному потоку на пользователя (d=3, 20 Гц), отсчеты
    упорядочены по timestamp внутри пользователя. Некорректные строки
    пропускаются, их число пишется в лог.

    Args:
        path (str): Путь к CSV в UTF-8

    Returns:
        Dict[str, SensorStream]: Потоки по идентификатору пользователя

    Raises:
        DataFormatError: Если не найдено ни одной корректной строки
    """
    bad_lines: List[List[str]] = []
    try:
        frame = pd.read_csv(path, header=None, names=WISDM_COLUMNS, dtype=str,
                            engine='python', skip_blank_lines=True, encoding='utf-8',
                            on_bad_lines=lambda line: bad_lines.append(line))
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=WISDM_COLUMNS)

    frame = frame.apply(lambda col: col.str.strip())
    frame['z'] = frame['z'].str.rstrip(';').str.strip()
    for column in ('timestamp', 'x', 'y', 'z'):
        frame[column] = pd.to_numeric(frame[column], errors='coerce')

    valid = frame[['timestamp', 'x', 'y', 'z']].notna().all(axis=1)
    valid &= frame['user'].fillna('').ne('') & frame['activity'].fillna('').ne('')
    skipped = len(bad_lines) + int((~valid).sum())
    frame = frame[valid]
    if skipped:
        logger.warning(f"WISDM file {path}: skipped {skipped} malformed rows")
    if frame.empty:
        raise DataFormatError(f"WISDM file {path}: no valid rows")

    streams: Dict[str, SensorStream] = {}
    for user, group in frame.groupby('user', sort=True):
        group = group.sort_values('timestamp', kind='mergesort')
        streams[str(user)] = SensorStream(
            channels=group[['x', 'y', 'z']].to_numpy(dtype=np.float64).T,
            channel_names=('x', 'y', 'z'),
            annotations=tuple(group['activity'].tolist()),
            sample_rate_hz=WISDM_SAMPLE_RATE_HZ,
            stream_id=str(user),
        )
    logger.info(f"WISDM file {path}: {len(frame)} rows, {len(streams)} users")
    return streams


def ingest_delimited_csv(path: str, null_label: str = DEFAULT_NULL_LABEL,
                         sample_rate_hz: float = WISDM_SAMPLE_RATE_HZ,
                         stream_id: Optional[str] = None) -> SensorStream:
    """
    Загрузка общего формата с заголовком t,label,ch1..chd (одна строка - один отсчет).

    Пустая метка или null_label означают Null; если метки пусты во всем файле,
    поток считается неаннотированным.
    """
    frame = pd.read_csv(path, dtype={'label': str}, keep_default_na=False, encoding='utf-8',
                        float_precision='round_trip')
    if list(frame.columns[:2]) != ['t', 'label'] or len(frame.columns) < 3:
        raise DataFormatError(f"{path}: header must be t,label,ch1..chd, got {list(frame.columns)}")
    if frame.empty:
        raise DataFormatError(f"{path}: no samples")
    frame = frame.sort_values('t', kind='mergesort')

    channel_names = tuple(frame.columns[2:])
    labels = [None if lab in ('', null_label) else lab for lab in frame['label'].tolist()]
    annotations = None if frame['label'].eq('').all() else tuple(labels)
    return SensorStream(
        channels=frame[list(channel_names)].to_numpy(dtype=np.float64).T,
        channel_names=channel_names,
        annotations=annotations,
        sample_rate_hz=sample_rate_hz,
        stream_id=stream_id or str(path),
    )


def write_delimited_csv(stream: SensorStream, path: str,
                        null_label: str = DEFAULT_NULL_LABEL) -> None:
    """Запись потока в общий формат t,label,ch1..chd."""
    frame = pd.DataFrame(stream.channels.T, columns=list(stream.channel_names))
    if stream.annotations is None:
        labels = [''] * stream.length
    else:
        labels = [null_label if lab is None else lab for lab in stream.annotations]
    frame.insert(0, 'label', labels)
    frame.insert(0, 't', np.arange(stream.length))
    frame.to_csv(path, index=False, float_format='%.17g', encoding='utf-8')


# ============================================================================
# РАЗБИЕНИЯ
# ============================================================================

def split_streams(streams: Dict[str, SensorStream], test_fraction: float, seed: int,
                  test_count: int = 0) -> Tuple[List[SensorStream], List[SensorStream]]:
    """
    Отделение тестовых записей целиком (случайный выбор пользователей).

    test_count > 0 задает число тестовых записей вместо доли (8 из 36
    пользователей WISDM). Для единственного потока тестом становится
    непрерывный хвост длиной test_fraction, чтобы перекрывающиеся окна
    не пересекали границу.
    """
    if not streams:
        raise EmptyDatasetError("No streams to split")
    ordered = [streams[key] for key in sorted(streams)]
    if len(ordered) > 1 and test_count > 0:
        return _hold_out_streams(ordered, min(len(ordered) - 1, test_count), seed)
    if test_fraction <= 0:
        return ordered, []

    if len(ordered) == 1:
        stream = ordered[0]
        cut = stream.length - int(round(test_fraction * stream.length))
        return ([stream.slice(0, cut, f"{stream.stream_id}#train")],
                [stream.slice(cut, stream.length, f"{stream.stream_id}#test")])

    n_test = min(len(ordered) - 1, max(1, int(round(test_fraction * len(ordered)))))
    return _hold_out_streams(ordered, n_test, seed)


def _hold_out_streams(ordered: List[SensorStream], n_test: int,
                      seed: int) -> Tuple[List[SensorStream], List[SensorStream]]:
    chosen = set(np.random.default_rng(seed).permutation(len(ordered))[:n_test].tolist())
    train = [s for i, s in enumerate(ordered) if i not in chosen]
    test = [s for i, s in enumerate(ordered) if i in chosen]
    logger.info(f"Held out test streams: {[s.stream_id for s in test]}")
    return train, test


def holdout_split(segments: Sequence[Segment], fraction: float,
                  seed: int) -> Tuple[List[Segment], List[Segment]]:
    """Детерминированное отделение доли fraction сегментов (порядок сохраняется)."""
    n_held = int(round(fraction * len(segments)))
    held = set(np.random.default_rng(seed).permutation(len(segments))[:n_held].tolist())
    kept = [s for i, s in enumerate(segments) if i not in held]
    return kept, [s for i, s in enumerate(segments) if i in held]


def split_dataset(segments: Sequence[LabeledSegment], labeled_fraction: float,
                  seed: int) -> Tuple[List[LabeledSegment], List[Segment]]:
    """
    Разделение на размеченный S и неразмеченный U.

    U всегда содержит все сегменты (без целей), S - долю labeled_fraction
    размеченных сегментов, выбранную детерминированно по seed.
    """
    if not 0.0 <= labeled_fraction <= 1.0:
        raise DataFormatError(f"labeled_fraction must be in [0, 1], got {labeled_fraction}")
    unlabeled = [s.unlabeled() for s in segments]
    _, labeled = holdout_split(segments, labeled_fraction, seed)
    return labeled, unlabeled


def stack_segments(segments: Sequence[Segment]) -> np.ndarray:
    """Сегменты в массив [N, d, w]."""
    if not segments:
        raise EmptyDatasetError("No segments to stack")
    return np.stack([s.data for s in segments])


def encode_targets(segments: Sequence[LabeledSegment],
                   vocab: ActivityVocabulary) -> Tuple[np.ndarray, np.ndarray]:
    """Индикаторы [N, M] и мощности [N] целевых множеств."""
    indicators = np.stack([s.target.indicator(vocab) for s in segments])
    return indicators, indicators.sum(axis=1).astype(np.int64)
