# -*- coding: utf-8 -*-
"""
Модуль обучения сети Auto-Set.

Этот модуль обеспечивает:
- Целевую функцию реконструкции L_auto = ||x - f_dec(f_enc(x))||^2
- Целевую функцию множеств L_set = BCE по всем M элементам + NLL мощности
- Базовую функцию L_bce (только элементный член)
- Мультиклассовую NLL по метке последнего отсчета (Null - отдельный класс)
- Оптимизатор ADAM с весовым затуханием и цикл обучения с ранней остановкой

Потеря мини-батча - среднее потерь сегментов.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from dataio import ActivitySet, ActivityVocabulary, LabeledSegment, Segment, stack_segments
from errors import (CardinalityError, ConfigError, DataFormatError, EmptyDatasetError,
                    ShapeError, TrainingDivergedError)
from network import (GROUP_DECODER, GROUP_ENCODER, GROUP_HEAD, ParameterStore,
                     class_logscores_tensor, decode_tensor, encode_tensor, head_tensors)
from tensor_autodiff import (Tensor, backward, binary_cross_entropy, nll_loss,
                             squared_error)

logger = logging.getLogger(__name__)

# ============================================================================
# КОНСТАНТЫ
# ============================================================================

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

TRAIN_MODES = ('auto', 'set', 'bce', 'multiclass')

# Обучаемые группы параметров по режиму
TRAINABLE_GROUPS = {
    'auto': (GROUP_ENCODER, GROUP_DECODER),
    'set': (GROUP_ENCODER, GROUP_HEAD),
    'bce': (GROUP_ENCODER, GROUP_HEAD),
    'multiclass': (GROUP_ENCODER, GROUP_HEAD),
}


# ============================================================================
# КОНФИГУРАЦИЯ И ОТЧЕТ
# ============================================================================

@dataclass
class TrainConfig:
    """
    Гиперпараметры оптимизации.

    Attributes:
        learning_rate (float): Начальный шаг ADAM (1e-4)
        weight_decay (float): Коэффициент lambda, добавляемый к градиенту (5e-5)
        batch_size (int): Размер мини-батча (64)
        lr_decay (float): Множитель шага после каждой эпохи (0.95)
        decay_enabled (bool): Применять ли затухание шага в этой фазе
        patience (int): Эпох без улучшения до остановки (5)
        max_epochs (int): Максимум эпох
        seed (int): Зерно перемешивания
        mode (str): auto, set, bce или multiclass
    """
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 64
    lr_decay: float = 0.95
    decay_enabled: bool = True
    patience: int = 5
    max_epochs: int = 20
    seed: int = 0
    mode: str = 'set'

    def validate(self) -> None:
        problems = []
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            problems.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.lr_decay <= 1:
            problems.append(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.patience < 1:
            problems.append(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.mode not in TRAIN_MODES:
            problems.append(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if problems:
            raise ConfigError("Invalid training config: " + "; ".join(problems))


@dataclass
class TrainReport:
    """
    Отчет фазы обучения: значения целевых функций по эпохам и лучшая эпоха.

    wall_clock_seconds попадает только в текстовый лог.
    """
    phase: str
    mode: str
    train_objectives: List[float] = field(default_factory=list)
    val_objectives: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    wall_clock_seconds: float = 0.0
    checkpoint: Optional[str] = None

    @property
    def epochs_run(self) -> int:
        return len(self.val_objectives)

    @property
    def best_val_objective(self) -> float:
        if self.best_epoch == 0:
            return float('nan')
        return self.val_objectives[self.best_epoch - 1]

    def to_log_lines(self) -> List[str]:
        lines = []
        for i, (tr, va, lr) in enumerate(zip(self.train_objectives, self.val_objectives,
                                             self.learning_rates), start=1):
            lines.append(f"phase={self.phase} mode={self.mode} epoch={i} "
                         f"train_objective={tr!r} val_objective={va!r} lr={lr!r}")
        lines.append(f"phase={self.phase} mode={self.mode} best_epoch={self.best_epoch} "
                     f"best_val_objective={self.best_val_objective!r} "
                     f"epochs_run={self.epochs_run} stopped_early={str(self.stopped_early).lower()}")
        lines.append(f"phase={self.phase} wall_clock_seconds={self.wall_clock_seconds:.3f} "
                     f"checkpoint={self.checkpoint or '-'}")
        return lines

    def to_record(self) -> Dict:
        return {
            'phase': self.phase,
            'mode': self.mode,
            'train_objectives': self.train_objectives,
            'val_objectives': self.val_objectives,
            'learning_rates': self.learning_rates,
            'best_epoch': self.best_epoch,
            'best_val_objective': self.best_val_objective,
            'epochs_run': self.epochs_run,
            'stopped_early': self.stopped_early,
            'checkpoint': self.checkpoint,
        }


class EarlyStopping:
    """
    Остановка после patience эпох без строгого улучшения лучшего значения.

    Номера эпох начинаются с 1.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_value = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        """Учитывает значение очередной эпохи; True, если оно стало лучшим."""
        self.epoch += 1
        if value < self.best_value:
            self.best_value, self.best_epoch, self.bad_epochs = value, self.epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# ============================================================================
# ДАННЫЕ ДЛЯ ОБУЧЕНИЯ
# ============================================================================

@dataclass
class SetTargets:
    """Индикаторы [N, M] и мощности [N] целевых множеств."""
    indicators: np.ndarray
    cardinalities: np.ndarray

    def take(self, index: Union[slice, np.ndarray]) -> "SetTargets":
        return SetTargets(self.indicators[index], self.cardinalities[index])


def encode_set_targets(targets: Sequence[ActivitySet], vocab: ActivityVocabulary,
                       max_cardinality: int) -> SetTargets:
    """
    Raises:
        CardinalityError: Мощность цели больше K
    """
    for target in targets:
        if target.cardinality > max_cardinality:
            raise CardinalityError(f"Target set {target.describe(vocab)} has cardinality "
                                   f"{target.cardinality} > K={max_cardinality}")
    indicators = np.stack([t.indicator(vocab) for t in targets]) if targets else \
        np.zeros((0, len(vocab)))
    return SetTargets(indicators, indicators.sum(axis=1).astype(np.int64))


def encode_class_targets(targets: Sequence[ActivitySet],
                         vocab: ActivityVocabulary) -> np.ndarray:
    """
    Индексы классов [N]: индекс активности в словаре, пустое множество - Null (M).

    Raises:
        CardinalityError: Цель содержит больше одной активности
    """
    indices = np.empty(len(targets), dtype=np.int64)
    for i, target in enumerate(targets):
        if target.cardinality > 1:
            raise CardinalityError(f"Multi-class target {target.describe(vocab)} has "
                                   f"more than one activity")
        indices[i] = vocab.index(next(iter(target.members))) if target.cardinality \
            else len(vocab)
    return indices


@dataclass
class TrainingData:
    """Сегменты [N, d, w] и их цели: множества (set/bce) или индексы классов (multiclass)."""
    segments: np.ndarray
    targets: Optional[SetTargets] = None
    class_indices: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.segments.shape[0]

    @classmethod
    def unlabeled(cls, segments: Sequence[Segment]) -> "TrainingData":
        return cls(stack_segments(segments))

    @classmethod
    def labeled(cls, segments: Sequence[LabeledSegment], vocab: ActivityVocabulary,
                max_cardinality: int) -> "TrainingData":
        return cls(stack_segments(segments),
                   encode_set_targets([s.target for s in segments], vocab, max_cardinality))

    @classmethod
    def last_sample(cls, segments: Sequence[LabeledSegment],
                    vocab: ActivityVocabulary) -> "TrainingData":
        """
        Raises:
            DataFormatError: У сегмента нет цели по последнему отсчету
        """
        if any(s.approx_target is None for s in segments):
            raise DataFormatError("Segments carry no last-sample targets; re-run prepare")
        return cls(stack_segments(segments),
                   class_indices=encode_class_targets([s.approx_target for s in segments],
                                                      vocab))

    def take(self, index: Union[slice, np.ndarray]) -> "TrainingData":
        return TrainingData(self.segments[index],
                            None if self.targets is None else self.targets.take(index),
                            None if self.class_indices is None else self.class_indices[index])


# ============================================================================
# ЦЕЛЕВЫЕ ФУНКЦИИ
# ============================================================================

def _vocabulary(params: ParameterStore) -> ActivityVocabulary:
    if not params.vocabulary:
        raise ConfigError("Parameter store carries no activity vocabulary")
    return ActivityVocabulary(params.vocabulary)


def _as_targets(target: Union[ActivitySet, Sequence[ActivitySet], SetTargets],
                params: ParameterStore) -> SetTargets:
    if isinstance(target, SetTargets):
        if np.any(target.cardinalities > params.arch.max_cardinality):
            raise CardinalityError(f"Target cardinality exceeds "
                                   f"K={params.arch.max_cardinality}")
        return target
    targets = [target] if isinstance(target, ActivitySet) else list(target)
    return encode_set_targets(targets, _vocabulary(params), params.arch.max_cardinality)


def set_objective(element_scores: Tensor, cardinality_logscores: Tensor,
                  targets: SetTargets, with_cardinality: bool = True) -> Tensor:
    """
    BCE по всем M элементам плюс (при with_cardinality) NLL истинной мощности.

    Для батча ([B, M]) результат - среднее по сегментам.
    """
    batched = element_scores.ndim == 2
    indicators = targets.indicators if batched else targets.indicators.reshape(-1)
    if element_scores.shape != indicators.shape:
        raise ShapeError(f"element scores {element_scores.shape} != targets {indicators.shape}")
    loss = binary_cross_entropy(element_scores, indicators, batched=batched)
    if with_cardinality:
        index = targets.cardinalities if batched else int(targets.cardinalities.reshape(-1)[0])
        loss = loss + nll_loss(cardinality_logscores, index, batched=batched)
    return loss


def loss_auto(x: np.ndarray, params: ParameterStore) -> Tensor:
    """L_auto: сумма квадратов ошибки реконструкции (среднее по батчу)."""
    reconstruction = decode_tensor(encode_tensor(x, params), params)
    return squared_error(reconstruction, np.asarray(x), batched=np.ndim(x) == 3)


def loss_set(x: np.ndarray, target: Union[ActivitySet, Sequence[ActivitySet], SetTargets],
             params: ParameterStore) -> Tensor:
    """
    L_set = sum_a bce(a) + nll(m).

    Raises:
        CardinalityError: |target| > K
    """
    targets = _as_targets(target, params)
    probs, logprobs = head_tensors(encode_tensor(x, params), params)
    return set_objective(probs, logprobs, targets, with_cardinality=True)


def loss_bce(x: np.ndarray, target: Union[ActivitySet, Sequence[ActivitySet], SetTargets],
             params: ParameterStore) -> Tensor:
    """Элементный член L_set без NLL мощности."""
    targets = _as_targets(target, params)
    probs, logprobs = head_tensors(encode_tensor(x, params), params)
    return set_objective(probs, logprobs, targets, with_cardinality=False)


def loss_multiclass(x: np.ndarray,
                    target: Union[ActivitySet, Sequence[ActivitySet], np.ndarray],
                    params: ParameterStore) -> Tensor:
    """NLL класса последнего отсчета (Null - класс с индексом M)."""
    batched = np.ndim(x) == 3
    if isinstance(target, np.ndarray):
        indices = target
    else:
        targets = [target] if isinstance(target, ActivitySet) else list(target)
        indices = encode_class_targets(targets, _vocabulary(params))
    logprobs = class_logscores_tensor(encode_tensor(x, params), params)
    return nll_loss(logprobs, indices if batched else int(indices.reshape(-1)[0]),
                    batched=batched)


LossFn = Callable[[TrainingData, ParameterStore], Tensor]

LOSSES: Dict[str, LossFn] = {
    'auto': lambda batch, params: loss_auto(batch.segments, params),
    'set': lambda batch, params: loss_set(batch.segments, batch.targets, params),
    'bce': lambda batch, params: loss_bce(batch.segments, batch.targets, params),
    'multiclass': lambda batch, params: loss_multiclass(batch.segments, batch.class_indices,
                                                        params),
}

# Голова, которую требует режим
MODE_HEADS = {'set': 'set', 'bce': 'set', 'multiclass': 'multiclass'}


# ============================================================================
# ОПТИМИЗАТОР
# ============================================================================

def adam_step(params: ParameterStore, grads: Dict[str, np.ndarray], cfg: TrainConfig,
              learning_rate: Optional[float] = None) -> ParameterStore:
    """
    Один шаг ADAM (beta1=0.9, beta2=0.999, eps=1e-8) с lambda*theta в градиенте.

    Обновляются только параметры из grads; счетчик шагов растет на 1.

    Raises:
        ShapeError: Форма градиента не совпадает с параметром
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    for name, grad in grads.items():
        if grad.shape != params.tensors[name].shape:
            raise ShapeError(f"Gradient for {name} has shape {grad.shape}, "
                             f"parameter {params.tensors[name].shape}")

    params.step += 1
    t = params.step
    correction1 = 1.0 - ADAM_BETA1 ** t
    correction2 = 1.0 - ADAM_BETA2 ** t
    for name, grad in grads.items():
        theta = params.tensors[name].data
        g = grad + cfg.weight_decay * theta
        params.m[name] = ADAM_BETA1 * params.m[name] + (1.0 - ADAM_BETA1) * g
        params.v[name] = ADAM_BETA2 * params.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = params.m[name] / correction1
        v_hat = params.v[name] / correction2
        theta -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params


def warm_start_encoder(params: ParameterStore, pretrained: ParameterStore) -> ParameterStore:
    """Копирует theta_enc предобученного автокодировщика (побитово)."""
    params.load_group_from(pretrained, GROUP_ENCODER)
    logger.info("Warm-started encoder from pretrained parameters")
    return params


# ============================================================================
# ЦИКЛ ОБУЧЕНИЯ
# ============================================================================

def evaluate_objective(data: TrainingData, params: ParameterStore, mode: str,
                       batch_size: int) -> float:
    """Среднее значение целевой функции режима по всем сегментам."""
    if len(data) == 0:
        raise EmptyDatasetError("Cannot evaluate objective on an empty dataset")
    total = 0.0
    for start in range(0, len(data), batch_size):
        batch = data.take(slice(start, start + batch_size))
        total += LOSSES[mode](batch, params).item() * len(batch)
    return total / len(data)


def train(train_data: TrainingData, val_data: Optional[TrainingData], cfg: TrainConfig,
          params: ParameterStore, phase: Optional[str] = None,
          monitor=None) -> TrainReport:
    """
    Обучение params на train_data с ранней остановкой по val_data.

    Мини-батчи перемешиваются генератором default_rng(seed) каждую эпоху.
    После завершения в params восстанавливаются веса лучшей эпохи.

    Args:
        train_data (TrainingData): U (mode=auto) или S (mode=set/bce/multiclass)
        val_data (TrainingData): Валидационные сегменты; None - валидация по train_data
        cfg (TrainConfig): Гиперпараметры
        params (ParameterStore): Параметры (изменяются на месте)
        phase (str): Имя фазы для отчета
        monitor: TrainingMonitor или None

    Returns:
        TrainReport: Отчет фазы

    Raises:
        EmptyDatasetError: Пустой обучающий набор
        TrainingDivergedError: Все значения на валидации не конечны
    """
    cfg.validate()
    mode = cfg.mode
    if len(train_data) == 0:
        raise EmptyDatasetError(f"No training segments for mode={mode}")
    labels = train_data.class_indices if mode == 'multiclass' else train_data.targets
    if mode != 'auto' and labels is None:
        raise EmptyDatasetError(f"Mode {mode} needs labeled segments")
    if mode in MODE_HEADS and params.arch.head != MODE_HEADS[mode]:
        raise ConfigError(f"Mode {mode} needs a {MODE_HEADS[mode]} head, "
                          f"parameter store has {params.arch.head}")
    if mode == 'auto' and not params.has_decoder:
        raise ConfigError("Mode auto needs a parameter store with decoder parameters")
    if val_data is None or len(val_data) == 0:
        logger.warning(f"No validation segments for mode={mode}; "
                       f"early stopping uses the training objective")
        val_data = train_data

    phase = phase or mode
    report = TrainReport(phase=phase, mode=mode)
    trainable = params.subset(TRAINABLE_GROUPS[mode])
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    best_snapshot = params.snapshot()
    lr = cfg.learning_rate
    started = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_data))
        epoch_total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = train_data.take(order[start:start + cfg.batch_size])
            loss = LOSSES[mode](batch, params)
            grads = backward(loss, trainable)
            adam_step(params, grads, cfg, learning_rate=lr)
            epoch_total += loss.item() * len(batch)

        train_objective = epoch_total / len(train_data)
        val_objective = evaluate_objective(val_data, params, mode, cfg.batch_size)
        report.train_objectives.append(train_objective)
        report.val_objectives.append(val_objective)
        report.learning_rates.append(lr)
        if not np.isfinite(val_objective):
            logger.error(f"[{phase}] epoch {epoch}: non-finite validation objective")

        if stopper.update(val_objective):
            best_snapshot = params.snapshot()
        logger.info(f"[{phase}] epoch {epoch}: train={train_objective:.6f} "
                    f"val={val_objective:.6f} lr={lr:.3e} best_epoch={stopper.best_epoch}")
        if monitor is not None:
            monitor.observe_epoch(phase, epoch, train_objective, val_objective, lr)

        if stopper.should_stop:
            report.stopped_early = True
            logger.info(f"[{phase}] early stop after epoch {epoch}: no improvement "
                        f"for {cfg.patience} epochs")
            break
        if cfg.decay_enabled:
            lr *= cfg.lr_decay

    params.restore(best_snapshot)
    if stopper.best_epoch == 0:
        raise TrainingDivergedError(
            f"[{phase}] no finite validation objective in {report.epochs_run} epochs; "
            f"initial weights restored")
    report.best_epoch = stopper.best_epoch
    report.wall_clock_seconds = time.perf_counter() - started
    return report
