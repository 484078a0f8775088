# -*- coding: utf-8 -*-
"""
Метрики оценки предсказанных множеств активностей.

- Точность/полнота/F1 по каждой метке и их макро-средние
- Доля точных совпадений MR и MR_c по мощности целевого множества
- Сравнительная таблица нескольких моделей

Соглашение о нулевом знаменателе: P (или R) равна 1, если метка не
встречается ни в предсказаниях, ни в целях, иначе 0.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from dataio import ActivitySet, ActivityVocabulary
from errors import AlignmentError, CardinalityError, EmptyDatasetError

logger = logging.getLogger(__name__)

ZERO_DENOMINATOR_CONVENTION = (
    "precision (recall) with a zero denominator is 1 when the label appears in neither "
    "predictions nor targets, otherwise 0; zero-support labels are excluded from macro means"
)


@dataclass(frozen=True)
class EvalPair:
    """Предсказанное и целевое множества одного сегмента."""
    predicted: ActivitySet
    target: ActivitySet


@dataclass
class LabelMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @property
    def support(self) -> int:
        return self.tp + self.fn


@dataclass
class MetricsReport:
    """
    Отчет об оценке.

    mr_by_cardinality[c] равно None, если целей мощности c нет.
    """
    vocabulary: Tuple[str, ...]
    per_label: List[LabelMetrics]
    p_mean: Optional[float]
    r_mean: Optional[float]
    f_mean: Optional[float]
    mr: float
    matches_by_cardinality: List[int]
    totals_by_cardinality: List[int]
    excluded_labels: List[str] = field(default_factory=list)
    convention: str = ZERO_DENOMINATOR_CONVENTION

    @property
    def max_cardinality(self) -> int:
        return len(self.totals_by_cardinality) - 1

    @property
    def n_pairs(self) -> int:
        return sum(self.totals_by_cardinality)

    @property
    def mr_by_cardinality(self) -> List[Optional[float]]:
        return [m / t if t else None
                for m, t in zip(self.matches_by_cardinality, self.totals_by_cardinality)]

    def label(self, name: str) -> LabelMetrics:
        for row in self.per_label:
            if row.label == name:
                return row
        raise KeyError(name)

    def to_record(self) -> Dict:
        return {
            'vocabulary': list(self.vocabulary),
            'per_label': [{'label': r.label, 'precision': r.precision, 'recall': r.recall,
                           'f1': r.f1, 'tp': r.tp, 'fp': r.fp, 'fn': r.fn}
                          for r in self.per_label],
            'p_mean': self.p_mean,
            'r_mean': self.r_mean,
            'f_mean': self.f_mean,
            'mr': self.mr,
            'mr_by_cardinality': self.mr_by_cardinality,
            'matches_by_cardinality': self.matches_by_cardinality,
            'totals_by_cardinality': self.totals_by_cardinality,
            'excluded_labels': self.excluded_labels,
            'convention': self.convention,
        }

    @classmethod
    def from_record(cls, record: Dict) -> "MetricsReport":
        return cls(
            vocabulary=tuple(record['vocabulary']),
            per_label=[LabelMetrics(**row) for row in record['per_label']],
            p_mean=record['p_mean'],
            r_mean=record['r_mean'],
            f_mean=record['f_mean'],
            mr=record['mr'],
            matches_by_cardinality=list(record['matches_by_cardinality']),
            totals_by_cardinality=list(record['totals_by_cardinality']),
            excluded_labels=list(record.get('excluded_labels', [])),
            convention=record.get('convention', ZERO_DENOMINATOR_CONVENTION),
        )

    def to_text(self) -> str:
        """Текстовый отчет: таблица по меткам, средние и MR по мощностям."""
        table = pd.DataFrame(
            [[r.label, _fmt(r.precision), _fmt(r.recall), _fmt(r.f1), r.tp, r.fp, r.fn]
             for r in self.per_label],
            columns=['label', 'P', 'R', 'F1', 'TP', 'FP', 'FN'])
        lines = [table.to_string(index=False), '']
        lines.append(f"P_mean={_fmt(self.p_mean)} R_mean={_fmt(self.r_mean)} "
                     f"F_mean={_fmt(self.f_mean)}")
        lines.append(f"MR={_fmt(self.mr)} pairs={self.n_pairs}")
        for c, (value, total) in enumerate(zip(self.mr_by_cardinality,
                                               self.totals_by_cardinality)):
            lines.append(f"MR_{c}={_fmt(value)} support={total}")
        if self.excluded_labels:
            lines.append(f"excluded_from_means={','.join(self.excluded_labels)}")
        lines.append(f"convention: {self.convention}")
        return '\n'.join(lines) + '\n'


def _fmt(value: Optional[float]) -> str:
    return '-' if value is None else f"{value:.4f}"


def _ratio(numerator: int, denominator: int, label_seen: bool) -> float:
    if denominator == 0:
        return 0.0 if label_seen else 1.0
    return numerator / denominator


def evaluate(pairs: Sequence[EvalPair], vocab: ActivityVocabulary,
             max_cardinality: int) -> MetricsReport:
    """
    Оценка пар (предсказание, цель).

    Совпадение засчитывается только при полном равенстве множеств; MR_c
    разбивает пары по мощности ЦЕЛЕВОГО множества.

    Raises:
        EmptyDatasetError: Нет пар
        CardinalityError: Мощность цели больше K
        UnknownActivityError: Метка вне словаря
    """
    if not pairs:
        raise EmptyDatasetError("Cannot evaluate an empty list of pairs")

    tp = {label: 0 for label in vocab.labels}
    fp = dict(tp)
    fn = dict(tp)
    matches = [0] * (max_cardinality + 1)
    totals = [0] * (max_cardinality + 1)

    for pair in pairs:
        predicted, target = pair.predicted.members, pair.target.members
        for label in predicted | target:
            vocab.index(label)
        c = len(target)
        if c > max_cardinality:
            raise CardinalityError(f"Target cardinality {c} exceeds K={max_cardinality}")
        totals[c] += 1
        matches[c] += int(predicted == target)
        for label in predicted & target:
            tp[label] += 1
        for label in predicted - target:
            fp[label] += 1
        for label in target - predicted:
            fn[label] += 1

    per_label = []
    for label in vocab.labels:
        seen_in_targets = tp[label] + fn[label] > 0
        seen_in_predictions = tp[label] + fp[label] > 0
        precision = _ratio(tp[label], tp[label] + fp[label], seen_in_targets)
        recall = _ratio(tp[label], tp[label] + fn[label], seen_in_predictions)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        per_label.append(LabelMetrics(label, precision, recall, f1,
                                      tp[label], fp[label], fn[label]))

    supported = [r for r in per_label if r.support > 0]
    excluded = [r.label for r in per_label if r.support == 0]
    if excluded:
        logger.warning(f"Labels without target support excluded from macro means: {excluded}")

    def mean(values: List[float]) -> Optional[float]:
        return sum(values) / len(values) if values else None

    return MetricsReport(
        vocabulary=vocab.labels,
        per_label=per_label,
        p_mean=mean([r.precision for r in supported]),
        r_mean=mean([r.recall for r in supported]),
        f_mean=mean([r.f1 for r in supported]),
        mr=sum(matches) / len(pairs),
        matches_by_cardinality=matches,
        totals_by_cardinality=totals,
        excluded_labels=excluded,
    )


# ============================================================================
# СРАВНЕНИЕ МОДЕЛЕЙ
# ============================================================================

@dataclass
class ComparisonTable:
    """Строки моделей в порядке входа и множество лучших моделей по каждому столбцу."""
    columns: List[str]
    rows: List[Tuple[str, List[Optional[float]]]]
    best: Dict[str, List[str]]

    def to_text(self) -> str:
        frame = pd.DataFrame(
            [[name] + [_fmt(v) + ('*' if name in self.best[col] else '')
                       for col, v in zip(self.columns, values)]
             for name, values in self.rows],
            columns=['model'] + self.columns)
        return frame.to_string(index=False) + '\n* best per column\n'

    def to_record(self) -> Dict:
        return {'columns': self.columns,
                'rows': [{'model': name, 'values': values} for name, values in self.rows],
                'best': self.best}


def compare_runs(reports: Union[Dict[str, MetricsReport],
                                Sequence[Tuple[str, MetricsReport]]]) -> ComparisonTable:
    """
    Таблица моделей x метрик (P_mean, R_mean, F_mean, MR, MR_0..MR_K).

    Raises:
        EmptyDatasetError: Нет отчетов
        AlignmentError: Отчеты построены на разных словарях
    """
    items = list(reports.items()) if isinstance(reports, dict) else list(reports)
    if not items:
        raise EmptyDatasetError("No reports to compare")
    vocabularies = {report.vocabulary for _, report in items}
    if len(vocabularies) > 1:
        raise AlignmentError(f"Reports use different vocabularies: {sorted(vocabularies)}")

    k = max(report.max_cardinality for _, report in items)
    columns = ['P_mean', 'R_mean', 'F_mean', 'MR'] + [f"MR_{c}" for c in range(k + 1)]
    rows = []
    for name, report in items:
        by_card = report.mr_by_cardinality + [None] * (k - report.max_cardinality)
        rows.append((name, [report.p_mean, report.r_mean, report.f_mean, report.mr] + by_card))

    best: Dict[str, List[str]] = {}
    for j, col in enumerate(columns):
        present = [row[j] for _, row in rows if row[j] is not None]
        top = max(present) if present else None
        best[col] = [name for name, row in rows if top is not None and row[j] == top]
    return ComparisonTable(columns, rows, best)
