# -*- coding: utf-8 -*-
"""
Модуль хранения артефактов конвейера.

Этот модуль обеспечивает:
- Архивы сегментов: каталог с records.bin и manifest.json
  (запись = u32 d, u32 w, d*w float64, u16 битовая маска множества, little-endian;
  цели по последнему отсчету хранятся в manifest.json)
- Версионированные чекпоинты параметров (имя, группа, форма, float64) с эхо
  конфигурации архитектуры
- Дампы предсказаний в формате JSON Lines (заголовок + запись на сегмент)
- Детерминированную запись JSON (отсортированные ключи)

Все файлы пишутся через временный файл и os.replace, повторная запись тех же
данных дает побайтно идентичный результат.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dataio import ActivitySet, ActivityVocabulary, LabeledSegment, Segment
from errors import CheckpointMismatchError, DataFormatError
from network import GROUPS, ArchitectureConfig, ParameterStore

logger = logging.getLogger(__name__)

# ============================================================================
# КОНСТАНТЫ ФОРМАТОВ
# ============================================================================

ARCHIVE_RECORDS = 'records.bin'
ARCHIVE_MANIFEST = 'manifest.json'
ARCHIVE_FORMAT = 'autoset-segments'
ARCHIVE_VERSION = 1
MAX_BITMAP_LABELS = 16

CHECKPOINT_MAGIC = b'ASCK'
CHECKPOINT_VERSION = 1

DUMP_FORMAT = 'autoset-predictions'


# ============================================================================
# ВСПОМОГАТЕЛЬНЫЕ ФУНКЦИИ ЗАПИСИ
# ============================================================================

def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, 'wb') as f:
        f.write(payload)
    os.replace(tmp_path, path)


def canonical_json(obj: Any, indent: Optional[int] = 2) -> str:
    """JSON с отсортированными ключами и repr-точностью float."""
    separators = (',', ': ') if indent else (',', ':')
    return json.dumps(obj, sort_keys=True, indent=indent, ensure_ascii=False,
                      separators=separators, allow_nan=False)


def write_json(path: str, obj: Any) -> None:
    _atomic_write(path, (canonical_json(obj) + '\n').encode('utf-8'))


def read_json(path: str) -> Any:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"Cannot read JSON file {path}: {e}") from e


# ============================================================================
# АРХИВ СЕГМЕНТОВ
# ============================================================================

@dataclass
class SegmentArchive:
    """Содержимое архива: словарь, признак разметки и сегменты в порядке записи."""
    vocabulary: ActivityVocabulary
    labeled: bool
    segments: List[Union[Segment, LabeledSegment]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def targets(self) -> List[ActivitySet]:
        if not self.labeled:
            raise DataFormatError("Unlabeled archive has no targets")
        return [s.target for s in self.segments]

    @property
    def approx_targets(self) -> List[ActivitySet]:
        """Цели по последнему отсчету (есть в архивах, записанных prepare)."""
        if not self.labeled:
            raise DataFormatError("Unlabeled archive has no targets")
        if any(s.approx_target is None for s in self.segments):
            raise DataFormatError("Archive carries no last-sample targets; re-run prepare")
        return [s.approx_target for s in self.segments]


def _record_dtype(d: int, w: int) -> np.dtype:
    return np.dtype([('d', '<u4'), ('w', '<u4'), ('data', '<f8', (d, w)), ('bitmap', '<u2')])


def _segment_meta(seg: Segment, vocab: ActivityVocabulary, labeled: bool) -> Dict[str, Any]:
    meta = {'stream_id': seg.stream_id, 'offset': int(seg.offset)}
    # Цель по последнему отсчету хранится в манифесте, формат записей прежний
    if labeled and getattr(seg, 'approx_target', None) is not None:
        meta['approx_target'] = seg.approx_target.ordered(vocab)
    return meta


def _approx_target(meta: Dict[str, Any], vocab: ActivityVocabulary) -> Optional[ActivitySet]:
    labels = meta.get('approx_target')
    if labels is None:
        return None
    for label in labels:
        vocab.index(label)
    return ActivitySet(frozenset(labels))


def write_segment_archive(path: str, segments: Sequence[Segment], vocab: ActivityVocabulary,
                          labeled: bool) -> None:
    """
    Запись архива сегментов в каталог path.

    Args:
        path (str): Каталог архива (создается при необходимости)
        segments (Sequence[Segment]): Сегменты одной формы d x w
        vocab (ActivityVocabulary): Словарь для битовых масок
        labeled (bool): Хранить ли целевые множества

    Raises:
        DataFormatError: Словарь больше 16 меток или сегменты разной формы
    """
    if len(vocab) > MAX_BITMAP_LABELS:
        raise DataFormatError(f"Archive bitmap holds at most {MAX_BITMAP_LABELS} labels, "
                              f"vocabulary has {len(vocab)}")
    shapes = {s.data.shape for s in segments}
    if len(shapes) > 1:
        raise DataFormatError(f"Segments of different shapes cannot share an archive: {shapes}")
    d, w = shapes.pop() if shapes else (0, 0)

    records = np.zeros(len(segments), dtype=_record_dtype(d, w))
    records['d'], records['w'] = d, w
    for i, seg in enumerate(segments):
        records['data'][i] = seg.data
        if labeled:
            records['bitmap'][i] = seg.target.bitmap(vocab)

    manifest = {
        'format': ARCHIVE_FORMAT,
        'version': ARCHIVE_VERSION,
        'vocabulary': list(vocab.labels),
        'labeled': labeled,
        'count': len(segments),
        'segments': [_segment_meta(s, vocab, labeled) for s in segments],
    }
    os.makedirs(path, exist_ok=True)
    _atomic_write(os.path.join(path, ARCHIVE_RECORDS), records.tobytes())
    write_json(os.path.join(path, ARCHIVE_MANIFEST), manifest)
    logger.info(f"Wrote archive {path}: {len(segments)} segments ({d}x{w}), labeled={labeled}")


def read_segment_archive(path: str) -> SegmentArchive:
    """Чтение архива, записанного write_segment_archive (побайтно точное)."""
    manifest = read_json(os.path.join(path, ARCHIVE_MANIFEST))
    if manifest.get('format') != ARCHIVE_FORMAT or manifest.get('version') != ARCHIVE_VERSION:
        raise DataFormatError(f"{path}: not a version {ARCHIVE_VERSION} segment archive")
    vocab = ActivityVocabulary(tuple(manifest['vocabulary']))
    labeled = bool(manifest['labeled'])

    with open(os.path.join(path, ARCHIVE_RECORDS), 'rb') as f:
        payload = f.read()
    count = manifest['count']
    if count == 0:
        return SegmentArchive(vocab, labeled, [])
    if len(payload) < 8:
        raise DataFormatError(f"{path}: truncated records file")

    d, w = struct.unpack('<II', payload[:8])
    dtype = _record_dtype(d, w)
    if len(payload) != count * dtype.itemsize:
        raise DataFormatError(f"{path}: records size {len(payload)} does not match "
                              f"{count} records of {dtype.itemsize} bytes")
    records = np.frombuffer(payload, dtype=dtype)
    if np.any(records['d'] != d) or np.any(records['w'] != w):
        raise DataFormatError(f"{path}: inconsistent record headers")

    segments: List[Union[Segment, LabeledSegment]] = []
    for rec, meta in zip(records, manifest['segments']):
        data = np.array(rec['data'], dtype=np.float64)
        if labeled:
            target = ActivitySet.from_bitmap(int(rec['bitmap']), vocab)
            segments.append(LabeledSegment(data, meta['offset'], meta['stream_id'], target,
                                           _approx_target(meta, vocab)))
        else:
            segments.append(Segment(data, meta['offset'], meta['stream_id']))
    return SegmentArchive(vocab, labeled, segments)


# ============================================================================
# ЧЕКПОИНТЫ
# ============================================================================

def save_checkpoint(path: str, params: ParameterStore,
                    metadata: Optional[Dict[str, Any]] = None) -> None:
    """
    Сохранение параметров: magic, версия, JSON-заголовок, затем записи
    (длина имени u16, имя, индекс группы u8, ndim u8, размеры u32, данные float64).
    """
    header = {
        'architecture': params.arch.to_dict(),
        'vocabulary': list(params.vocabulary) if params.vocabulary else None,
        'metadata': metadata or {},
        'count': len(params.tensors),
    }
    header_bytes = canonical_json(header, indent=None).encode('utf-8')
    chunks = [CHECKPOINT_MAGIC, struct.pack('<II', CHECKPOINT_VERSION, len(header_bytes)),
              header_bytes]
    for name, tensor in params.tensors.items():
        encoded = name.encode('utf-8')
        shape = tensor.shape
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<BB', GROUPS.index(params.groups[name]), len(shape)))
        chunks.append(struct.pack(f'<{len(shape)}I', *shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype='<f8').tobytes())
    _atomic_write(path, b''.join(chunks))
    logger.info(f"Saved checkpoint {path}: {params.parameter_counts()}")


def load_checkpoint(path: str, expected_arch: Optional[ArchitectureConfig] = None
                    ) -> Tuple[ParameterStore, Dict[str, Any]]:
    """
    Загрузка чекпоинта.

    Returns:
        Tuple[ParameterStore, Dict]: Параметры и метаданные

    Raises:
        DataFormatError: Файл не является чекпоинтом поддерживаемой версии
        CheckpointMismatchError: Архитектура не совпадает с ожидаемой
    """
    try:
        with open(path, 'rb') as f:
            payload = f.read()
    except OSError as e:
        raise DataFormatError(f"Cannot read checkpoint {path}: {e}") from e

    if payload[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from('<II', payload, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(payload[pos:pos + header_len].decode('utf-8'))
    pos += header_len

    arch = ArchitectureConfig.from_dict(header['architecture'])
    if expected_arch is not None and arch != expected_arch:
        raise CheckpointMismatchError(f"{path}: architecture {arch} does not match "
                                      f"configured {expected_arch}")

    arrays: Dict[str, np.ndarray] = {}
    groups: Dict[str, str] = {}
    try:
        for _ in range(header['count']):
            (name_len,) = struct.unpack_from('<H', payload, pos)
            pos += 2
            name = payload[pos:pos + name_len].decode('utf-8')
            pos += name_len
            group_idx, ndim = struct.unpack_from('<BB', payload, pos)
            pos += 2
            shape = struct.unpack_from(f'<{ndim}I', payload, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(payload, dtype='<f8', count=size,
                                         offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
            groups[name] = GROUPS[group_idx]
    except (struct.error, ValueError, IndexError) as e:
        raise DataFormatError(f"{path}: truncated or corrupt checkpoint ({e})") from e
    if pos != len(payload):
        raise DataFormatError(f"{path}: {len(payload) - pos} trailing bytes after records")

    store = ParameterStore.from_arrays(arch, arrays, groups, header.get('vocabulary'))
    return store, header.get('metadata', {})


# ============================================================================
# ДАМПЫ ПРЕДСКАЗАНИЙ
# ============================================================================

def write_prediction_dump(path: str, header: Dict[str, Any],
                          records: Sequence[Dict[str, Any]]) -> None:
    """Первая строка - заголовок, затем по одной записи JSON на сегмент."""
    lines = [canonical_json(dict(header, format=DUMP_FORMAT, count=len(records)), indent=None)]
    lines.extend(canonical_json(rec, indent=None) for rec in records)
    _atomic_write(path, ('\n'.join(lines) + '\n').encode('utf-8'))
    logger.info(f"Wrote prediction dump {path}: {len(records)} records")


def read_prediction_dump(path: str) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = [json.loads(line) for line in f if line.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"Cannot read prediction dump {path}: {e}") from e
    if not lines or lines[0].get('format') != DUMP_FORMAT:
        raise DataFormatError(f"{path}: missing prediction dump header")
    header, records = lines[0], lines[1:]
    if header.get('count') != len(records):
        raise DataFormatError(f"{path}: header announces {header.get('count')} records, "
                              f"found {len(records)}")
    return header, records
