# -*- coding: utf-8 -*-
"""
Вывод множества активностей по оценкам сети.

- map_set_inference: точный MAP-вывод
  Y* = argmax_{m', Y} f_m'(x) + m' * log U + sum_{a in Y} log f_a(x)
  (сортировка log f_a по убыванию и верхние m' для каждой мощности)
- threshold_inference: базовый вывод {a : f_a > tau}
- multiclass_inference: argmax мультиклассовой головы (Null - пустое множество)
- calibrate_U: подбор U по сетке на валидационных данных

Автор: Auto-Set HAR Project
Версия: 1.0
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dataio import ActivitySet, ActivityVocabulary, LabeledSegment, stack_segments
from errors import AlignmentError, ConfigError, EmptyDatasetError
from metrics import EvalPair, evaluate
from network import ParameterStore, SetScores, predict_batches
from tensor_autodiff import CLAMP_EPS

logger = logging.getLogger(__name__)

INFERENCE_MODES = ('map_set', 'threshold')
CALIBRATION_METRICS = ('mr', 'f1')

# Сетка U: 0.5, 0.6, ..., 5.0
DEFAULT_U_GRID = tuple(float(u) for u in np.round(np.arange(5, 51) / 10.0, 1))


@dataclass
class InferenceConfig:
    """
    Attributes:
        u (float): Константа нормировки U > 0
        mode (str): map_set или threshold
        threshold (float): Порог tau в (0, 1) для базового режима
    """
    u: float = 2.5
    mode: str = 'map_set'
    threshold: float = 0.5

    def validate(self) -> None:
        problems = []
        if not self.u > 0:
            problems.append(f"U must be positive, got {self.u}")
        if self.mode not in INFERENCE_MODES:
            problems.append(f"mode must be one of {INFERENCE_MODES}, got {self.mode!r}")
        if not 0 < self.threshold < 1:
            problems.append(f"threshold must be in (0, 1), got {self.threshold}")
        if problems:
            raise ConfigError("Invalid inference config: " + "; ".join(problems))


@dataclass
class SetPrediction:
    """
    Результат вывода для одного сегмента.

    cardinality_objectives[m'] - лучшее значение целевой функции при мощности m'
    (только для map_set).
    """
    predicted: ActivitySet
    objective: Optional[float] = None
    cardinality_objectives: Optional[np.ndarray] = None


def clamped_log_scores(element_scores: np.ndarray) -> np.ndarray:
    """log f_a с той же обрезкой [eps, 1-eps], что и при обучении."""
    return np.log(np.clip(element_scores, CLAMP_EPS, 1.0 - CLAMP_EPS))


def set_objective_value(scores: SetScores, members: Sequence[int], u: float) -> float:
    """Значение целевой функции вывода для множества индексов members."""
    log_f = clamped_log_scores(scores.element_scores)
    m = len(members)
    return float(scores.cardinality_logscores[m] + m * np.log(u) + sum(log_f[i] for i in members))


def map_set_inference(scores: SetScores, cfg: InferenceConfig,
                      vocab: ActivityVocabulary) -> SetPrediction:
    """
    Точный MAP-вывод множества.

    Для фиксированной мощности m' оптимум - m' элементов с наибольшими
    log f_a, поэтому достаточно одной устойчивой сортировки. Равенства
    разрешаются в пользу меньшей мощности, затем порядка словаря.
    """
    if scores.n_activities != len(vocab):
        raise AlignmentError(f"{scores.n_activities} element scores for vocabulary of "
                             f"{len(vocab)}")
    log_f = clamped_log_scores(scores.element_scores)
    order = np.argsort(-log_f, kind='stable')
    prefix = np.concatenate([[0.0], np.cumsum(log_f[order])])

    k = min(scores.max_cardinality, len(vocab))
    cardinalities = np.arange(k + 1)
    values = (scores.cardinality_logscores[:k + 1] + cardinalities * np.log(cfg.u)
              + prefix[:k + 1])
    best = int(np.argmax(values))
    members = ActivitySet.from_indices(order[:best].tolist(), vocab)
    return SetPrediction(members, float(values[best]), values)


def threshold_inference(scores: SetScores, tau: float,
                        vocab: ActivityVocabulary) -> ActivitySet:
    """Базовый вывод: активности с оценкой строго больше tau; мощность игнорируется."""
    if not 0 < tau < 1:
        raise ConfigError(f"threshold must be in (0, 1), got {tau}")
    return ActivitySet.from_indices(np.flatnonzero(scores.element_scores > tau).tolist(), vocab)


def infer(scores: SetScores, cfg: InferenceConfig, vocab: ActivityVocabulary) -> SetPrediction:
    if cfg.mode == 'threshold':
        return SetPrediction(threshold_inference(scores, cfg.threshold, vocab))
    return map_set_inference(scores, cfg, vocab)


def _grid_score(predicted: Sequence[ActivitySet], targets: Sequence[ActivitySet],
                vocab: ActivityVocabulary, max_cardinality: int, metric: str) -> float:
    if metric == 'mr':
        return sum(p == t for p, t in zip(predicted, targets)) / len(targets)
    report = evaluate([EvalPair(p, t) for p, t in zip(predicted, targets)], vocab,
                      max_cardinality)
    return report.f_mean or 0.0


def calibrate_U_from_scores(scores: Sequence[SetScores], targets: Sequence[ActivitySet],
                            vocab: ActivityVocabulary,
                            grid: Sequence[float] = DEFAULT_U_GRID,
                            metric: str = 'mr') -> Tuple[float, float]:
    """
    Перебор сетки U с максимизацией метрики на валидации.

    Returns:
        Tuple[float, float]: (U*, значение метрики при U*); при равенстве - меньший U

    Raises:
        EmptyDatasetError: Пустая валидация или сетка
    """
    if not scores:
        raise EmptyDatasetError("U calibration needs a non-empty validation set")
    if len(scores) != len(targets):
        raise AlignmentError(f"{len(scores)} score records for {len(targets)} targets")
    if metric not in CALIBRATION_METRICS:
        raise ConfigError(f"calibration metric must be one of {CALIBRATION_METRICS}")
    candidates = sorted(set(float(u) for u in grid))
    if not candidates or candidates[0] <= 0:
        raise EmptyDatasetError(f"U grid must be non-empty and positive: {grid}")

    k = max(scores[0].max_cardinality, max(t.cardinality for t in targets))
    best_u, best_value = candidates[0], -np.inf
    for u in candidates:
        cfg = InferenceConfig(u=u)
        predicted = [map_set_inference(s, cfg, vocab).predicted for s in scores]
        value = _grid_score(predicted, targets, vocab, k, metric)
        if value > best_value:
            best_u, best_value = u, value
    logger.info(f"Calibrated U={best_u} ({metric}={best_value:.4f}) over {len(candidates)} "
                f"candidates")
    return best_u, float(best_value)


def calibrate_U(params: ParameterStore, segments: Sequence[LabeledSegment],
                grid: Sequence[float] = DEFAULT_U_GRID,
                metric: str = 'mr') -> Tuple[float, float]:
    """Калибровка U для модели params на размеченных валидационных сегментах."""
    if not segments:
        raise EmptyDatasetError("U calibration needs a non-empty validation set")
    vocab = ActivityVocabulary(params.vocabulary)
    scores = predict_batches(stack_segments(segments), params)
    return calibrate_U_from_scores(scores, [s.target for s in segments], vocab, grid, metric)


def predict_sets(scores: Sequence[SetScores], cfg: InferenceConfig,
                 vocab: ActivityVocabulary) -> List[SetPrediction]:
    cfg.validate()
    return [infer(s, cfg, vocab) for s in scores]


def multiclass_inference(class_logscores: np.ndarray,
                         vocab: ActivityVocabulary) -> SetPrediction:
    """
    Мультиклассовый вывод: класс с наибольшей лог-вероятностью.

    Индекс M (Null) дает пустое множество; равенства - в пользу меньшего индекса.
    """
    if class_logscores.shape[-1] != len(vocab) + 1:
        raise AlignmentError(f"{class_logscores.shape[-1]} class scores for vocabulary of "
                             f"{len(vocab)} plus Null")
    best = int(np.argmax(class_logscores))
    members = ActivitySet() if best == len(vocab) else ActivitySet.from_indices([best], vocab)
    return SetPrediction(members, float(class_logscores[best]))


def predict_classes(class_logscores: np.ndarray,
                    vocab: ActivityVocabulary) -> List[SetPrediction]:
    return [multiclass_inference(row, vocab) for row in class_logscores]
