# -*- coding: utf-8 -*-
"""
Командная строка конвейера Auto-Set.

Команды:
- prepare  - загрузка, нормализация, сегментация и архивы train/val/test/unlabeled
- train    - обучение одной из моделей deep-bce, auto-bce, deep-set, auto-set, multiclass
- infer    - дамп предсказаний для архива
- eval     - отчет о метриках по дампу: цели-множества и цели по последнему отсчету
- compare  - сравнительная таблица моделей
- synth    - запись синтетического потока в общем формате

Любая ошибка AutoSetError логируется, код завершения 1.

Использование: python cli.py prepare --config run.env

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import functools
import glob
import logging
import os
from collections import Counter
from typing import Dict, List, Optional, Sequence

import click

from config import RunConfig
from dataio import (ActivitySet, ActivityVocabulary, LabeledSegment,
                    SensorStream, approximation_mismatch, compute_channel_stats,
                    holdout_split, ingest_delimited_csv, ingest_wisdm_csv,
                    label_segments, normalize_per_channel, segment, split_dataset,
                    split_streams, stack_segments)
from errors import (AlignmentError, AutoSetError, ConfigError, DataFormatError,
                    EmptyDatasetError)
from inference import calibrate_U_from_scores, predict_classes, predict_sets
from logging_config import setup_logging
from metrics import EvalPair, MetricsReport, compare_runs, evaluate
from monitoring import TrainingMonitor
from network import (ArchitectureConfig, ParameterStore, predict_batches,
                     predict_class_logscores)
from storage import (load_checkpoint, read_json, read_prediction_dump, read_segment_archive,
                     save_checkpoint, write_json, write_prediction_dump,
                     write_segment_archive)
from synthgen import generate, write_stream
from training import TrainingData, train, warm_start_encoder

logger = logging.getLogger(__name__)

# Модели: режим обучения с учителем и наличие предобучения автокодировщика.
# multiclass - обычная мультиклассовая постановка с целью по последнему отсчету
MODEL_MODES = {
    'deep-bce': ('bce', False),
    'auto-bce': ('bce', True),
    'deep-set': ('set', False),
    'auto-set': ('set', True),
    'multiclass': ('multiclass', False),
}


# ============================================================================
# ОБЩИЕ ОПЦИИ И ОБРАБОТКА ОШИБОК
# ============================================================================

def common_options(func):
    """--config, --seed и --out для каждой команды."""
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                  help='Config file (KEY=value).')
    @click.option('--seed', type=int, default=None, help='Override SEED.')
    @click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                  help='Override PATHS_OUT.')
    @functools.wraps(func)
    def wrapper(config_path, seed, out_dir, **kwargs):
        try:
            cfg = RunConfig.load(config_path)
            if seed is not None:
                cfg.seed = seed
            if out_dir is not None:
                cfg.paths.out = out_dir
            return func(cfg, **kwargs)
        except AutoSetError as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(1)
    return wrapper


def _start(cfg: RunConfig, require_data: bool = False) -> None:
    # Проверка до любых записей на диск
    cfg.validate(require_data=require_data)
    setup_logging(cfg.paths.log_dir)


def _prepared_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.paths.out, 'prepared')


def _model_dir(cfg: RunConfig, mode: str) -> str:
    return os.path.join(cfg.paths.out, 'models', mode)


def _dump_path(cfg: RunConfig, mode: str, split: str) -> str:
    return os.path.join(cfg.paths.out, 'predictions', f"{mode}-{split}.jsonl")


def _report_base(cfg: RunConfig, mode: str, split: str) -> str:
    return os.path.join(cfg.paths.out, 'reports', f"{mode}-{split}")


def _load_archive(cfg: RunConfig, split: str):
    path = os.path.join(_prepared_dir(cfg), split)
    if not os.path.isdir(path):
        raise DataFormatError(f"Missing prepared archive {path}; run prepare first")
    return read_segment_archive(path)


def _load_stats(cfg: RunConfig) -> Dict:
    path = os.path.join(_prepared_dir(cfg), 'stats.json')
    if not os.path.isfile(path):
        raise DataFormatError(f"Missing {path}; run prepare first")
    return read_json(path)


def _architecture(cfg: RunConfig, stats: Dict, objective: str) -> ArchitectureConfig:
    head = 'multiclass' if objective == 'multiclass' else 'set'
    return cfg.architecture(len(stats['channel_names']), len(stats['vocabulary']),
                            stats['max_cardinality'], head=head)


# ============================================================================
# PREPARE
# ============================================================================

def load_streams(cfg: RunConfig) -> Dict[str, SensorStream]:
    """Потоки по формату PATHS_FORMAT (каталог generic - поток на файл)."""
    fmt, path = cfg.paths.format, cfg.paths.data
    if fmt == 'synthetic':
        stream = generate(cfg.synth_config())
        return {stream.stream_id: stream}
    if fmt == 'wisdm':
        return ingest_wisdm_csv(path)
    files = sorted(glob.glob(os.path.join(path, '*.csv'))) if os.path.isdir(path) else [path]
    if not files:
        raise DataFormatError(f"No .csv files in {path}")
    streams = {}
    for file in files:
        stream_id = os.path.splitext(os.path.basename(file))[0]
        streams[stream_id] = ingest_delimited_csv(file, cfg.data.null_label,
                                                  cfg.data.sample_rate, stream_id)
    return streams


def _cardinality_histogram(segments: Sequence[LabeledSegment]) -> Dict[str, int]:
    counts = Counter(s.target.cardinality for s in segments)
    return {str(c): counts[c] for c in sorted(counts)}


@click.group()
def cli():
    """Auto-Set HAR: set-based activity recognition pipeline."""


@cli.command()
@common_options
def prepare(cfg: RunConfig):
    """Normalize, segment and archive the input streams."""
    _start(cfg, require_data=True)
    seg_cfg = cfg.segmentation_config()
    streams = load_streams(cfg)
    if any(s.annotations is None for s in streams.values()):
        raise DataFormatError("prepare needs annotated streams")
    vocab = ActivityVocabulary.from_annotations(
        a for s in streams.values() for a in s.annotations)

    train_streams, test_streams = split_streams(streams, cfg.data.test_fraction, cfg.seed,
                                                cfg.data.test_streams)
    stats = compute_channel_stats(train_streams)

    def label_streams(stream_list: List[SensorStream]):
        segments, mismatched = [], 0
        for stream in stream_list:
            normalized, _ = normalize_per_channel(stream, stats)
            stream_segments = label_segments(normalized, segment(normalized, seg_cfg), vocab,
                                             seg_cfg)
            mismatched += approximation_mismatch(normalized, stream_segments, vocab, seg_cfg)
            segments.extend(stream_segments)
        return segments, mismatched

    train_all, train_mismatch = label_streams(train_streams)
    test_segments, test_mismatch = label_streams(test_streams)
    if not train_all:
        raise EmptyDatasetError("No training segments: streams shorter than the window")
    train_segments, val_segments = holdout_split(train_all, cfg.data.val_fraction, cfg.seed)
    supervised, unlabeled = split_dataset(train_segments, cfg.data.labeled_fraction, cfg.seed)
    max_cardinality = max(1, max(s.target.cardinality for s in train_all))

    out = _prepared_dir(cfg)
    archives = {'train': supervised, 'val': val_segments, 'test': test_segments}
    for split, segments in archives.items():
        write_segment_archive(os.path.join(out, split), segments, vocab, labeled=True)
    write_segment_archive(os.path.join(out, 'unlabeled'), unlabeled, vocab, labeled=False)

    first = next(iter(streams.values()))
    write_json(os.path.join(out, 'stats.json'), {
        'vocabulary': list(vocab.labels),
        'channel_names': list(first.channel_names),
        'channel_stats': stats.to_dict(),
        'max_cardinality': max_cardinality,
        'segmentation': {'window': seg_cfg.window_w, 'stride': seg_cfg.stride,
                         'recognition_length': seg_cfg.recognition_length_r},
        'seed': cfg.seed,
    })
    total = len(train_all) + len(test_segments)
    summary = {
        'segments': {'train': len(supervised), 'val': len(val_segments),
                     'test': len(test_segments), 'unlabeled': len(unlabeled)},
        'cardinality_histogram': {'train': _cardinality_histogram(supervised),
                                  'val': _cardinality_histogram(val_segments),
                                  'test': _cardinality_histogram(test_segments)},
        'approx_mismatch_fraction': (train_mismatch + test_mismatch) / total if total else 0.0,
        'test_streams': [s.stream_id for s in test_streams],
        'streams': len(streams),
    }
    write_json(os.path.join(out, 'summary.json'), summary)
    logger.info(f"Prepared {summary['segments']} into {out}")
    click.echo(f"prepared: {summary['segments']}")


# ============================================================================
# TRAIN
# ============================================================================

@cli.command('train')
@common_options
@click.option('--mode', type=click.Choice(list(MODEL_MODES)), required=True)
@click.option('--resume-pretrain', is_flag=True,
              help='Reuse the existing pretrain checkpoint of this mode.')
def train_cmd(cfg: RunConfig, mode: str, resume_pretrain: bool):
    """Train one of deep-bce, auto-bce, deep-set, auto-set, multiclass."""
    _start(cfg)
    objective, pretrain = MODEL_MODES[mode]
    stats = _load_stats(cfg)
    vocab = ActivityVocabulary(tuple(stats['vocabulary']))
    arch = _architecture(cfg, stats, objective)
    arch.validate()

    train_archive, val_archive = _load_archive(cfg, 'train'), _load_archive(cfg, 'val')
    model_dir = _model_dir(cfg, mode)
    monitor = TrainingMonitor(run_name=mode)
    reports = []

    params = ParameterStore.initialize(arch, cfg.seed, include_decoder=False,
                                       vocabulary=vocab.labels)
    if pretrain:
        pretrain_path = os.path.join(model_dir, 'pretrain.ckpt')
        if resume_pretrain:
            if not os.path.isfile(pretrain_path):
                raise DataFormatError(f"Missing pretrain checkpoint {pretrain_path}")
            pretrained, _ = load_checkpoint(pretrain_path, expected_arch=arch)
        else:
            unlabeled = _load_archive(cfg, 'unlabeled')
            pretrained = ParameterStore.initialize(arch, cfg.seed, include_decoder=True,
                                                   vocabulary=vocab.labels)
            val_data = TrainingData.unlabeled(val_archive.segments) if len(val_archive) else None
            report = train(TrainingData.unlabeled(unlabeled.segments), val_data,
                           cfg.train_config('auto'), pretrained, phase='pretrain',
                           monitor=monitor)
            report.checkpoint = 'pretrain.ckpt'
            save_checkpoint(pretrain_path, pretrained,
                            {'mode': mode, 'phase': 'pretrain', 'best_epoch': report.best_epoch})
            reports.append(report)
        warm_start_encoder(params, pretrained)

    k = arch.max_cardinality
    if not len(train_archive):
        raise EmptyDatasetError("No labeled training segments (check DATA_LABELED_FRACTION)")
    if objective == 'multiclass':
        train_data = TrainingData.last_sample(train_archive.segments, vocab)
        val_data = (TrainingData.last_sample(val_archive.segments, vocab)
                    if len(val_archive) else None)
    else:
        train_data = TrainingData.labeled(train_archive.segments, vocab, k)
        val_data = (TrainingData.labeled(val_archive.segments, vocab, k)
                    if len(val_archive) else None)
    report = train(train_data, val_data, cfg.train_config(objective), params,
                   phase='finetune' if pretrain else 'supervised', monitor=monitor)
    report.checkpoint = 'model.ckpt'
    save_checkpoint(os.path.join(model_dir, 'model.ckpt'), params,
                    {'mode': mode, 'objective': objective, 'best_epoch': report.best_epoch})
    reports.append(report)

    lines = [f"model={mode} objective={objective} seed={cfg.seed} "
             f"phases={','.join(r.phase for r in reports)}"]
    for r in reports:
        lines.extend(r.to_log_lines())
    with open(os.path.join(model_dir, 'train_report.txt'), 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
    write_json(os.path.join(model_dir, 'train_report.json'),
               {'model': mode, 'seed': cfg.seed, 'phases': [r.to_record() for r in reports]})
    monitor.export(os.path.join(model_dir, 'metrics.prom'))
    click.echo(f"{mode}: best epoch {report.best_epoch}, "
               f"validation objective {report.best_val_objective:.6f}")


# ============================================================================
# INFER
# ============================================================================

@cli.command()
@common_options
@click.option('--mode', type=click.Choice(list(MODEL_MODES)), required=True)
@click.option('--split', type=click.Choice(['train', 'val', 'test']), default='test')
@click.option('--u', 'u_value', type=float, default=None, help='Pin U instead of calibrating.')
@click.option('--threshold', type=float, default=None, help='Threshold for *-bce models.')
def infer(cfg: RunConfig, mode: str, split: str, u_value: Optional[float],
          threshold: Optional[float]):
    """Write the prediction dump of a trained model for one archive."""
    _start(cfg)
    objective, _ = MODEL_MODES[mode]
    stats = _load_stats(cfg)
    vocab = ActivityVocabulary(tuple(stats['vocabulary']))
    arch = _architecture(cfg, stats, objective)
    params, _ = load_checkpoint(os.path.join(_model_dir(cfg, mode), 'model.ckpt'),
                                expected_arch=arch)
    archive = _load_archive(cfg, split)
    header = {'model': mode, 'split': split, 'vocabulary': list(vocab.labels),
              'max_cardinality': arch.max_cardinality}
    path = _dump_path(cfg, mode, split)

    if objective == 'multiclass':
        logscores = (predict_class_logscores(stack_segments(archive.segments), params)
                     if len(archive) else [])
        header.update({'inference': 'multiclass', 'U': None})
        records = []
        for i, (seg, row, pred) in enumerate(zip(archive.segments, logscores,
                                                 predict_classes(logscores, vocab))):
            records.append({
                'index': i,
                'stream_id': seg.stream_id,
                'offset': int(seg.offset),
                'predicted': pred.predicted.ordered(vocab),
                'objective': pred.objective,
                'class_logscores': [float(v) for v in row],
            })
        write_prediction_dump(path, header, records)
        click.echo(f"{mode}: {len(records)} predictions -> {path}")
        return

    scores = predict_batches(stack_segments(archive.segments), params) if len(archive) else []
    if objective == 'set':
        pinned = u_value if u_value is not None else cfg.inference.u
        if pinned is not None:
            u, source, calibration = pinned, 'pinned', None
        else:
            val_archive = _load_archive(cfg, 'val')
            if not len(val_archive):
                raise EmptyDatasetError("U calibration needs validation segments; pin --u")
            val_scores = predict_batches(stack_segments(val_archive.segments), params)
            u, calibration = calibrate_U_from_scores(
                val_scores, val_archive.targets, vocab, cfg.inference.u_grid,
                cfg.inference.calibration_metric)
            source = 'calibrated'
        inf_cfg = cfg.inference_config('map_set', u=u)
        header.update({'inference': 'map_set', 'U': u, 'u_source': source,
                       'calibration_metric': cfg.inference.calibration_metric,
                       'calibration_value': calibration})
    else:
        inf_cfg = cfg.inference_config('threshold', threshold=threshold)
        header.update({'inference': 'threshold', 'threshold': inf_cfg.threshold, 'U': None})

    predictions = predict_sets(scores, inf_cfg, vocab)
    records = []
    for i, (seg, s, pred) in enumerate(zip(archive.segments, scores, predictions)):
        records.append({
            'index': i,
            'stream_id': seg.stream_id,
            'offset': int(seg.offset),
            'predicted': pred.predicted.ordered(vocab),
            'objective': pred.objective,
            'element_scores': [float(v) for v in s.element_scores],
            'cardinality_logscores': [float(v) for v in s.cardinality_logscores],
        })
    write_prediction_dump(path, header, records)
    click.echo(f"{mode}: {len(records)} predictions -> {path}")


# ============================================================================
# EVAL / COMPARE
# ============================================================================

# Цели оценки: множества по правилу длины r или приближение по последнему отсчету
EVAL_TARGETS = ('actual', 'approximate')


def evaluate_dump(dump_path: str, archive_path: str, target: str = 'actual') -> MetricsReport:
    """
    Сопоставление дампа с целями архива и расчет метрик.

    Args:
        dump_path (str): Дамп предсказаний
        archive_path (str): Размеченный архив той же выборки
        target (str): actual - цели-множества, approximate - цели по последнему отсчету

    Raises:
        AlignmentError: Дамп и архив не совпадают по словарю, числу или порядку сегментов
        DataFormatError: В архиве нет целей по последнему отсчету
    """
    if target not in EVAL_TARGETS:
        raise ConfigError(f"Evaluation target must be one of {EVAL_TARGETS}, got {target!r}")
    header, records = read_prediction_dump(dump_path)
    archive = read_segment_archive(archive_path)
    vocab = ActivityVocabulary(tuple(header['vocabulary']))
    if vocab != archive.vocabulary:
        raise AlignmentError(f"Dump vocabulary {vocab.labels} != archive vocabulary "
                             f"{archive.vocabulary.labels}")
    if len(records) != len(archive):
        raise AlignmentError(f"Dump has {len(records)} records, archive has {len(archive)}")
    if not records:
        raise EmptyDatasetError(f"Nothing to evaluate in {dump_path}")
    targets = archive.targets if target == 'actual' else archive.approx_targets
    pairs = []
    for rec, seg, expected in zip(records, archive.segments, targets):
        if rec['offset'] != seg.offset or rec['stream_id'] != seg.stream_id:
            raise AlignmentError(f"Record {rec['index']} ({rec['stream_id']}@{rec['offset']}) "
                                 f"does not match segment {seg.stream_id}@{seg.offset}")
        pairs.append(EvalPair(ActivitySet(frozenset(rec['predicted'])), expected))
    k = max(header['max_cardinality'], max(p.target.cardinality for p in pairs))
    return evaluate(pairs, vocab, k)


@cli.command('eval')
@common_options
@click.option('--mode', type=click.Choice(list(MODEL_MODES)), required=True)
@click.option('--split', type=click.Choice(['train', 'val', 'test']), default='test')
def eval_cmd(cfg: RunConfig, mode: str, split: str):
    """Evaluate a prediction dump against set targets and last-sample targets."""
    _start(cfg)
    dump, archive = _dump_path(cfg, mode, split), os.path.join(_prepared_dir(cfg), split)
    report = evaluate_dump(dump, archive)
    approximate = evaluate_dump(dump, archive, target='approximate')
    base = _report_base(cfg, mode, split)
    record = report.to_record()
    record['approximate'] = approximate.to_record()
    write_json(base + '.json', record)
    text = (report.to_text() + '\n# approximate targets (label of the last sample)\n'
            + approximate.to_text())
    with open(base + '.txt', 'w', encoding='utf-8') as f:
        f.write(text)
    logger.info(f"{mode}/{split}: MR={report.mr:.4f}, MR against last-sample "
                f"targets={approximate.mr:.4f}")
    click.echo(text)


@cli.command()
@common_options
@click.option('--split', type=click.Choice(['train', 'val', 'test']), default='test')
@click.argument('report_files', nargs=-1, type=click.Path(exists=True, dir_okay=False))
def compare(cfg: RunConfig, split: str, report_files: Sequence[str]):
    """Compare saved metric reports (defaults to every trained model mode)."""
    _start(cfg)
    if report_files:
        named = [(os.path.splitext(os.path.basename(p))[0], p) for p in report_files]
    else:
        named = [(mode, _report_base(cfg, mode, split) + '.json') for mode in MODEL_MODES]
        missing = [name for name, p in named if not os.path.isfile(p)]
        if missing:
            logger.warning(f"No {split} reports for: {missing}")
        named = [(name, p) for name, p in named if os.path.isfile(p)]
    reports = [(name, MetricsReport.from_record(read_json(p))) for name, p in named]
    table = compare_runs(reports)
    base = os.path.join(cfg.paths.out, 'reports', f"comparison-{split}")
    write_json(base + '.json', table.to_record())
    with open(base + '.txt', 'w', encoding='utf-8') as f:
        f.write(table.to_text())
    click.echo(table.to_text())


# ============================================================================
# SYNTH
# ============================================================================

@cli.command()
@common_options
@click.option('--output', type=click.Path(dir_okay=False), default=None,
              help='Target CSV (defaults to PATHS_DATA).')
def synth(cfg: RunConfig, output: Optional[str]):
    """Write a synthetic annotated stream in the t,label,ch1..chd format."""
    _start(cfg)
    path = output or cfg.paths.data
    stream = write_stream(cfg.synth_config(), path, null_label=cfg.data.null_label)
    click.echo(f"synthetic stream: {stream.length} samples -> {path}")


if __name__ == '__main__':
    cli()
