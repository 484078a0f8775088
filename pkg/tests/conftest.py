# -*- coding: utf-8 -*-
"""Общие фикстуры тестов Auto-Set."""

import logging
import logging.handlers

import numpy as np
import pytest

from dataio import ActivitySet, ActivityVocabulary
from network import ArchitectureConfig, ParameterStore
from tensor_autodiff import ComputeGraph, ReLU, numerical_gradient, relative_error


@pytest.fixture(autouse=True)
def isolate_root_logger():
    """Закрывает обработчики, добавленные setup_logging во время теста."""
    root = logging.getLogger()
    level = root.level
    yield
    for handler in list(root.handlers):
        if type(handler) in (logging.StreamHandler, logging.handlers.TimedRotatingFileHandler):
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


@pytest.fixture
def vocab():
    return ActivityVocabulary(('a', 'b', 'c'))


@pytest.fixture
def small_arch():
    # d=2, w=40, 2 свертки по 4 фильтра: 40 -> 18 -> 7
    return ArchitectureConfig(n_channels=2, window=40, conv_filters=(4, 4), kernel=5,
                              stride=2, dense_widths=(16, 16), n_activities=3,
                              max_cardinality=2)


@pytest.fixture
def small_params(small_arch, vocab):
    return ParameterStore.initialize(small_arch, seed=7, include_decoder=True,
                                     vocabulary=vocab.labels)


@pytest.fixture
def segments_batch():
    return np.random.default_rng(3).uniform(0.0, 1.0, size=(2, 2, 40))


@pytest.fixture
def batch_targets():
    return [ActivitySet.of('a'), ActivitySet.of('b', 'c')]


def _relu_masks(loss):
    return [node.creator.mask.copy() for node in ComputeGraph.from_output(loss).nodes
            if isinstance(node.creator, ReLU)]


def check_gradients(loss_fn, params, analytic, names, points=20, eps=1e-4, seed=0):
    """
    Сравнение аналитических градиентов с центральными разностями.

    Проверяется до points случайных элементов каждого тензора; элементы, для
    которых шаг eps меняет маску ReLU (точка излома), пропускаются.
    Возвращает словарь имя -> относительная ошибка.
    """
    rng = np.random.default_rng(seed)
    base_masks = _relu_masks(loss_fn())
    errors = {}
    for name in names:
        data = params.tensors[name].data
        flat = data.reshape(-1)
        chosen = rng.choice(flat.size, size=min(points, flat.size), replace=False)
        numeric, exact = [], []
        for i in chosen:
            saved = flat[i]
            flat[i] = saved + eps
            loss_plus = loss_fn()
            masks_plus = _relu_masks(loss_plus)
            flat[i] = saved - eps
            loss_minus = loss_fn()
            masks_minus = _relu_masks(loss_minus)
            flat[i] = saved
            crossed = any(not np.array_equal(a, b) or not np.array_equal(a, c)
                          for a, b, c in zip(base_masks, masks_plus, masks_minus))
            if crossed:
                continue
            numeric.append((loss_plus.item() - loss_minus.item()) / (2 * eps))
            exact.append(analytic[name].reshape(-1)[i])
        if numeric:
            errors[name] = relative_error(np.array(exact), np.array(numeric))
    return errors


@pytest.fixture
def gradient_checker():
    return check_gradients


@pytest.fixture
def numeric_grad():
    return numerical_gradient
