# -*- coding: utf-8 -*-
"""Тесты архивов сегментов, чекпоинтов и дампов предсказаний."""

import numpy as np
import pytest

from dataio import ActivitySet, ActivityVocabulary, LabeledSegment, Segment
from errors import CheckpointMismatchError, DataFormatError
from network import ArchitectureConfig, ParameterStore
from storage import (load_checkpoint, read_json, read_prediction_dump, read_segment_archive,
                     save_checkpoint, write_json, write_prediction_dump, write_segment_archive)


@pytest.fixture
def labeled_segments():
    rng = np.random.default_rng(0)
    targets = [ActivitySet.of('a'), ActivitySet(), ActivitySet.of('b', 'c')]
    return [LabeledSegment(rng.normal(size=(2, 5)), 20 * i, f"user{i % 2}", t)
            for i, t in enumerate(targets)]


def test_labeled_archive_roundtrip_is_exact(tmp_path, labeled_segments, vocab):
    path = str(tmp_path / 'train')
    write_segment_archive(path, labeled_segments, vocab, labeled=True)
    archive = read_segment_archive(path)
    assert archive.labeled and archive.vocabulary == vocab and len(archive) == 3
    for original, restored in zip(labeled_segments, archive.segments):
        assert restored.data.tobytes() == original.data.tobytes()
        assert (restored.offset, restored.stream_id) == (original.offset, original.stream_id)
    assert archive.targets == [s.target for s in labeled_segments]


def test_archive_keeps_last_sample_targets(tmp_path, labeled_segments, vocab):
    path = str(tmp_path / 'train')
    write_segment_archive(path, labeled_segments, vocab, labeled=True)
    with pytest.raises(DataFormatError, match="last-sample"):
        read_segment_archive(path).approx_targets

    approx = [ActivitySet.of('a'), ActivitySet(), ActivitySet.of('c')]
    for seg, target in zip(labeled_segments, approx):
        seg.approx_target = target
    write_segment_archive(path, labeled_segments, vocab, labeled=True)
    archive = read_segment_archive(path)
    assert archive.approx_targets == approx
    assert archive.targets == [s.target for s in labeled_segments]
    manifest = read_json(str(tmp_path / 'train' / 'manifest.json'))
    assert [m['approx_target'] for m in manifest['segments']] == [['a'], [], ['c']]


def test_unlabeled_archive(tmp_path, labeled_segments, vocab):
    path = str(tmp_path / 'unlabeled')
    write_segment_archive(path, [s.unlabeled() for s in labeled_segments], vocab, labeled=False)
    archive = read_segment_archive(path)
    assert all(type(s) is Segment for s in archive.segments)
    with pytest.raises(DataFormatError):
        archive.targets


def test_empty_archive(tmp_path, vocab):
    path = str(tmp_path / 'empty')
    write_segment_archive(path, [], vocab, labeled=True)
    assert len(read_segment_archive(path)) == 0


def test_archive_rejects_large_vocabulary(tmp_path):
    vocab = ActivityVocabulary(tuple(f"act{i}" for i in range(17)))
    with pytest.raises(DataFormatError, match="16"):
        write_segment_archive(str(tmp_path / 'x'), [], vocab, labeled=True)


def test_archive_detects_truncation(tmp_path, labeled_segments, vocab):
    path = tmp_path / 'train'
    write_segment_archive(str(path), labeled_segments, vocab, labeled=True)
    records = path / 'records.bin'
    records.write_bytes(records.read_bytes()[:-3])
    with pytest.raises(DataFormatError, match="size"):
        read_segment_archive(str(path))


def test_archive_bytes_are_deterministic(tmp_path, labeled_segments, vocab):
    first, second = tmp_path / 'one', tmp_path / 'two'
    write_segment_archive(str(first), labeled_segments, vocab, labeled=True)
    write_segment_archive(str(second), labeled_segments, vocab, labeled=True)
    for name in ('records.bin', 'manifest.json'):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_checkpoint_roundtrip(tmp_path, small_params):
    path = str(tmp_path / 'model.ckpt')
    small_params.tensors['head.out.bias'].data[...] = np.pi
    save_checkpoint(path, small_params, {'mode': 'auto-set', 'seed': 7})
    store, metadata = load_checkpoint(path, expected_arch=small_params.arch)
    assert metadata == {'mode': 'auto-set', 'seed': 7}
    assert store.vocabulary == small_params.vocabulary
    assert store.names() == small_params.names()
    for name in store.names():
        assert store.tensors[name].data.tobytes() == small_params.tensors[name].data.tobytes()
        assert store.groups[name] == small_params.groups[name]


def test_checkpoint_without_decoder(tmp_path, small_arch, vocab):
    params = ParameterStore.initialize(small_arch, seed=0, include_decoder=False,
                                       vocabulary=vocab.labels)
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(path, params)
    store, _ = load_checkpoint(path)
    assert not store.has_decoder


def test_checkpoint_architecture_mismatch(tmp_path, small_params, small_arch):
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(path, small_params)
    other = ArchitectureConfig.from_dict(dict(small_arch.to_dict(), dense_widths=[8, 8]))
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, expected_arch=other)


def test_checkpoint_bad_magic_and_truncation(tmp_path, small_params):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(str(path), small_params)
    payload = path.read_bytes()
    path.write_bytes(b'XXXX' + payload[4:])
    with pytest.raises(DataFormatError, match="not a checkpoint"):
        load_checkpoint(str(path))
    path.write_bytes(payload[:-8])
    with pytest.raises(DataFormatError):
        load_checkpoint(str(path))


def test_checkpoint_bytes_are_deterministic(tmp_path, small_params):
    save_checkpoint(str(tmp_path / 'a.ckpt'), small_params, {'seed': 1})
    save_checkpoint(str(tmp_path / 'b.ckpt'), small_params, {'seed': 1})
    assert (tmp_path / 'a.ckpt').read_bytes() == (tmp_path / 'b.ckpt').read_bytes()


def test_prediction_dump(tmp_path):
    path = str(tmp_path / 'dump.jsonl')
    records = [{'index': i, 'predicted': ['a'], 'element_scores': [0.1 * i, 0.5]}
               for i in range(3)]
    write_prediction_dump(path, {'model': 'auto-set', 'U': 2.5}, records)
    header, loaded = read_prediction_dump(path)
    assert header['count'] == 3 and header['format'] == 'autoset-predictions'
    assert header['U'] == 2.5
    assert loaded == records
    with open(path, encoding='utf-8') as f:
        assert len(f.readlines()) == 4


def test_prediction_dump_count_mismatch(tmp_path):
    path = tmp_path / 'dump.jsonl'
    write_prediction_dump(str(path), {'model': 'x'}, [{'index': 0}, {'index': 1}])
    lines = path.read_text(encoding='utf-8').splitlines()
    path.write_text('\n'.join(lines[:-1]) + '\n', encoding='utf-8')
    with pytest.raises(DataFormatError, match="announces"):
        read_prediction_dump(str(path))


def test_json_is_canonical(tmp_path):
    path = str(tmp_path / 'r.json')
    write_json(path, {'b': 1, 'a': [0.1, None]})
    with open(path, encoding='utf-8') as f:
        assert f.read() == '{\n  "a": [\n    0.1,\n    null\n  ],\n  "b": 1\n}\n'
    assert read_json(path) == {'a': [0.1, None], 'b': 1}
