# -*- coding: utf-8 -*-
"""Тесты метрик множеств и сравнения моделей."""

import logging

import pytest

from dataio import ActivitySet, ActivityVocabulary
from errors import AlignmentError, CardinalityError, EmptyDatasetError, UnknownActivityError
from metrics import EvalPair, MetricsReport, compare_runs, evaluate

AB = ActivityVocabulary(('a', 'b'))


def pair(predicted, target):
    return EvalPair(ActivitySet.of(*predicted), ActivitySet.of(*target))


@pytest.fixture
def three_pairs():
    return [pair('a', 'a'), pair('a', 'b'), pair('ab', 'ab')]


def test_three_pair_fixture(three_pairs):
    report = evaluate(three_pairs, AB, max_cardinality=2)
    assert report.mr == pytest.approx(2 / 3)
    assert report.mr_by_cardinality == [None, 0.5, 1.0]
    a = report.label('a')
    assert (a.tp, a.fp, a.fn) == (2, 1, 0)
    assert a.precision == pytest.approx(2 / 3)
    assert a.recall == 1.0
    assert a.f1 == pytest.approx(0.8)
    b = report.label('b')
    assert (b.precision, b.recall) == (1.0, 0.5)


def test_partial_credit_example():
    vocab = ActivityVocabulary(('stand', 'walk'))
    report = evaluate([EvalPair(ActivitySet.of('walk'), ActivitySet.of('walk', 'stand'))],
                      vocab, max_cardinality=2)
    assert report.mr == 0.0
    assert report.label('walk').tp == 1
    assert report.label('stand').fn == 1
    assert report.label('stand').precision == 0.0
    assert report.label('walk').f1 == 1.0


def test_perfect_predictions():
    targets = [ActivitySet.of('a'), ActivitySet.of('a', 'b'), ActivitySet()]
    report = evaluate([EvalPair(t, t) for t in targets], AB, max_cardinality=2)
    assert report.mr == 1.0
    assert all(r.f1 == 1.0 for r in report.per_label)
    assert (report.p_mean, report.r_mean, report.f_mean) == (1.0, 1.0, 1.0)
    assert report.mr_by_cardinality == [1.0, 1.0, 1.0]


def test_zero_support_label_is_excluded(caplog):
    vocab = ActivityVocabulary(('a', 'b', 'c'))
    with caplog.at_level(logging.WARNING):
        report = evaluate([pair('a', 'a'), pair('b', 'a')], vocab, max_cardinality=1)
    assert report.excluded_labels == ['b', 'c']
    c = report.label('c')
    assert (c.precision, c.recall) == (1.0, 1.0)
    assert report.label('b').precision == 0.0
    assert report.f_mean == pytest.approx(report.label('a').f1)
    assert 'excluded' in caplog.text


def test_evaluate_errors():
    with pytest.raises(EmptyDatasetError):
        evaluate([], AB, 2)
    with pytest.raises(CardinalityError):
        evaluate([pair('ab', 'ab')], AB, 1)
    with pytest.raises(UnknownActivityError):
        evaluate([pair('z', 'a')], AB, 1)


def test_report_record_roundtrip(three_pairs):
    report = evaluate(three_pairs, AB, max_cardinality=2)
    restored = MetricsReport.from_record(report.to_record())
    assert restored.to_record() == report.to_record()
    text = report.to_text()
    assert 'MR_0=-' in text and 'MR=0.6667' in text


def summary(mr_values):
    """Отчет с заданной долей совпадений на 4 парах."""
    pairs = [pair('a', 'a')] * mr_values + [pair('b', 'a')] * (4 - mr_values)
    return evaluate(pairs, AB, max_cardinality=1)


def test_compare_single_report():
    table = compare_runs({'deep-bce': summary(2)})
    assert [name for name, _ in table.rows] == ['deep-bce']
    assert table.columns == ['P_mean', 'R_mean', 'F_mean', 'MR', 'MR_0', 'MR_1']
    assert table.best['MR'] == ['deep-bce']


def test_compare_marks_best_and_keeps_order():
    table = compare_runs([('deep-bce', summary(1)), ('auto-set', summary(3)),
                          ('deep-set', summary(3))])
    assert [name for name, _ in table.rows] == ['deep-bce', 'auto-set', 'deep-set']
    assert table.best['MR'] == ['auto-set', 'deep-set']
    assert table.best['MR_0'] == []
    text = table.to_text()
    assert '0.7500*' in text and '0.2500*' not in text
    assert table.to_record()['rows'][0]['model'] == 'deep-bce'


def test_compare_rejects_mixed_vocabularies():
    other = evaluate([pair('a', 'a')], ActivityVocabulary(('a', 'c')), 1)
    with pytest.raises(AlignmentError):
        compare_runs({'x': summary(1), 'y': other})
    with pytest.raises(EmptyDatasetError):
        compare_runs({})
