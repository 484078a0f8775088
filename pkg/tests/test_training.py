# -*- coding: utf-8 -*-
"""Тесты целевых функций, ADAM и цикла обучения."""

from dataclasses import replace

import numpy as np
import pytest

from dataio import ActivitySet, LabeledSegment
from errors import (CardinalityError, ConfigError, DataFormatError, EmptyDatasetError,
                    ShapeError, TrainingDivergedError)
from inference import predict_classes
from network import (GROUP_DECODER, GROUP_ENCODER, GROUP_HEAD, ParameterStore,
                     predict_class_logscores)
from tensor_autodiff import Tensor, backward, squared_error
from training import (EarlyStopping, SetTargets, TrainConfig, TrainingData, adam_step,
                      encode_class_targets, encode_set_targets, evaluate_objective, loss_bce,
                      loss_multiclass, loss_set, set_objective, train, warm_start_encoder)


def uniform_logscores(n):
    return Tensor(np.log(np.full(n, 1.0 / n)))


# ============================================================================
# ЦЕЛЕВЫЕ ФУНКЦИИ
# ============================================================================

def test_reconstruction_hand_arithmetic():
    assert squared_error(Tensor(np.zeros((1, 4))), np.full((1, 4), 0.5)).item() == \
        pytest.approx(1.0)
    x = np.random.default_rng(0).uniform(size=(2, 6))
    assert squared_error(Tensor(x), x).item() == 0.0


def test_set_objective_hand_arithmetic():
    targets = SetTargets(np.array([[1.0, 0.0]]), np.array([1]))
    total = set_objective(Tensor([0.5, 0.5]), uniform_logscores(3), targets).item()
    assert total == pytest.approx(2 * np.log(2) + np.log(3), abs=1e-12)
    assert total == pytest.approx(2.4849, abs=1e-4)
    elementwise = set_objective(Tensor([0.5, 0.5]), uniform_logscores(3), targets,
                                with_cardinality=False).item()
    assert total - elementwise == pytest.approx(np.log(3), abs=1e-12)


def test_set_objective_perfect_prediction_is_near_zero():
    targets = SetTargets(np.array([[1.0, 0.0, 1.0]]), np.array([2]))
    logscores = Tensor(np.array([-1e9, -1e9, 0.0, -1e9]))
    assert set_objective(Tensor([1.0, 0.0, 1.0]), logscores, targets).item() < 1e-6


def test_set_objective_is_permutation_symmetric():
    rng = np.random.default_rng(1)
    scores = rng.uniform(0.05, 0.95, size=5)
    indicators = np.array([1.0, 0.0, 0.0, 1.0, 0.0])
    perm = rng.permutation(5)
    logscores = uniform_logscores(4)
    original = set_objective(Tensor(scores), logscores,
                             SetTargets(indicators[None], np.array([2])))
    permuted = set_objective(Tensor(scores[perm]), logscores,
                             SetTargets(indicators[perm][None], np.array([2])))
    assert original.item() == pytest.approx(permuted.item(), abs=1e-12)


def test_batch_objective_is_mean_of_segments(small_params, segments_batch, batch_targets):
    batch = loss_set(segments_batch, batch_targets, small_params).item()
    singles = [loss_set(x, t, small_params).item()
               for x, t in zip(segments_batch, batch_targets)]
    assert batch == pytest.approx(np.mean(singles), abs=1e-12)


def test_cardinality_above_k_is_rejected(small_params, segments_batch, vocab):
    with pytest.raises(CardinalityError):
        loss_set(segments_batch[0], ActivitySet.of('a', 'b', 'c'), small_params)
    with pytest.raises(CardinalityError):
        encode_set_targets([ActivitySet.of('a', 'b', 'c')], vocab, 2)


@pytest.mark.parametrize('loss_fn', [loss_set, loss_bce])
def test_supervised_gradients(loss_fn, small_params, segments_batch, batch_targets,
                              gradient_checker):
    def loss():
        return loss_fn(segments_batch, batch_targets, small_params)

    groups = [GROUP_ENCODER, GROUP_HEAD]
    names = small_params.names(groups)
    analytic = backward(loss(), small_params.subset(groups))
    errors = gradient_checker(loss, small_params, analytic, names)
    assert set(errors) == set(names)
    assert all(e < 1e-4 for e in errors.values()), errors


def test_decoder_gets_no_gradient_from_set_loss(small_params, segments_batch, batch_targets):
    grads = backward(loss_set(segments_batch, batch_targets, small_params),
                     small_params.subset([GROUP_DECODER]))
    assert all(not np.any(g) for g in grads.values())


# ============================================================================
# ADAM
# ============================================================================

def test_adam_zero_gradient_keeps_parameters(small_params):
    before = small_params.arrays()
    grads = {name: np.zeros_like(data) for name, data in before.items()}
    adam_step(small_params, grads, TrainConfig(weight_decay=0.0))
    for name, data in before.items():
        assert np.array_equal(small_params.tensors[name].data, data)
    assert small_params.step == 1


def test_adam_first_step_is_signed_learning_rate(small_params):
    name = 'head.out.weight'
    before = small_params.tensors[name].data.copy()
    rng = np.random.default_rng(4)
    g = rng.choice([-1.0, 1.0], size=before.shape) * rng.uniform(0.5, 2.0, size=before.shape)
    cfg = TrainConfig(learning_rate=1e-3, weight_decay=0.0)
    adam_step(small_params, {name: g}, cfg)
    after = small_params.tensors[name].data
    np.testing.assert_allclose(after - before, -1e-3 * np.sign(g), atol=1e-9)

    # Ручной расчет для одного элемента
    g0 = g.flat[0]
    m_hat = (0.1 * g0) / (1 - 0.9)
    v_hat = (0.001 * g0 * g0) / (1 - 0.999)
    assert after.flat[0] == pytest.approx(before.flat[0] - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8),
                                          abs=1e-15)


def test_adam_weight_decay_shrinks_weights(small_params):
    name = 'enc.conv1.weight'
    before = small_params.tensors[name].data.copy()
    adam_step(small_params, {name: np.zeros_like(before)},
              TrainConfig(learning_rate=1e-5, weight_decay=0.1))
    assert np.all(np.abs(small_params.tensors[name].data) < np.abs(before))


def test_adam_is_deterministic(small_arch):
    stores = [ParameterStore.initialize(small_arch, seed=2) for _ in range(2)]
    rng = np.random.default_rng(9)
    grads = {name: rng.normal(size=t.shape) for name, t in stores[0].tensors.items()}
    for store in stores:
        for _ in range(3):
            adam_step(store, grads, TrainConfig())
    for name in grads:
        assert stores[0].tensors[name].data.tobytes() == stores[1].tensors[name].data.tobytes()


def test_adam_rejects_gradient_shape(small_params):
    with pytest.raises(ShapeError):
        adam_step(small_params, {'head.out.bias': np.zeros(2)}, TrainConfig())


# ============================================================================
# РАННЯЯ ОСТАНОВКА И ТЕПЛЫЙ СТАРТ
# ============================================================================

def test_early_stopping_on_flat_series():
    stopper = EarlyStopping(patience=5)
    stopped_at = None
    for epoch, value in enumerate([3.0] * 6, start=1):
        stopper.update(value)
        if stopper.should_stop:
            stopped_at = epoch
            break
    assert stopped_at == 6
    assert stopper.best_epoch == 1


def test_early_stopping_needs_strict_improvement():
    stopper = EarlyStopping(patience=2)
    assert stopper.update(2.0)
    assert not stopper.update(2.0)
    assert stopper.update(1.5)
    assert stopper.best_epoch == 3 and not stopper.should_stop


def test_warm_start_copies_encoder_bit_exactly(small_arch):
    pretrained = ParameterStore.initialize(small_arch, seed=1, include_decoder=True)
    pretrained.tensors['enc.conv1.weight'].data[...] += 0.123
    fresh = ParameterStore.initialize(small_arch, seed=2, include_decoder=False)
    head_before = fresh.tensors['head.out.weight'].data.copy()
    warm_start_encoder(fresh, pretrained)
    for name in fresh.names([GROUP_ENCODER]):
        assert fresh.tensors[name].data.tobytes() == pretrained.tensors[name].data.tobytes()
    assert np.array_equal(fresh.tensors['head.out.weight'].data, head_before)


# ============================================================================
# ЦИКЛ ОБУЧЕНИЯ
# ============================================================================

def smooth_segments(n, seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2 * np.pi, 40)
    phases = rng.uniform(0, 2 * np.pi, size=(n, 2, 1))
    return 0.5 + 0.4 * np.sin(t[None, None, :] + phases)


def test_autoencoder_training_improves(small_params):
    data = TrainingData(smooth_segments(24, 0))
    val = TrainingData(smooth_segments(8, 1))
    cfg = TrainConfig(learning_rate=3e-3, batch_size=8, max_epochs=5, mode='auto', seed=0)
    report = train(data, val, cfg, small_params, phase='pretrain')
    assert report.epochs_run == 5
    assert report.best_val_objective < report.val_objectives[0]
    assert report.learning_rates[1] == pytest.approx(3e-3 * 0.95)
    assert evaluate_objective(val, small_params, 'auto', 8) == \
        pytest.approx(report.best_val_objective, rel=1e-12)


def test_training_without_decay_keeps_learning_rate(small_params):
    data = TrainingData(smooth_segments(8, 2))
    cfg = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=3, mode='auto',
                      decay_enabled=False)
    report = train(data, None, cfg, small_params)
    assert report.learning_rates == [1e-3] * 3
    assert report.phase == 'auto'


def test_supervised_training_overfits_small_batch(small_params, vocab):
    rng = np.random.default_rng(5)
    segments = rng.uniform(size=(8, 2, 40))
    targets = [ActivitySet.of('a'), ActivitySet.of('b'), ActivitySet.of('c'),
               ActivitySet.of('a', 'b'), ActivitySet(), ActivitySet.of('b', 'c'),
               ActivitySet.of('a'), ActivitySet.of('a', 'c')]
    data = TrainingData(segments, encode_set_targets(targets, vocab, 2))
    cfg = TrainConfig(learning_rate=1e-2, weight_decay=0.0, batch_size=8, max_epochs=300,
                      patience=300, decay_enabled=False, mode='set')
    report = train(data, data, cfg, small_params)
    assert report.best_val_objective < 0.05
    assert loss_set(segments, targets, small_params).item() < 0.05


def test_training_report_lines(small_params):
    data = TrainingData(smooth_segments(4, 3))
    report = train(data, data, TrainConfig(max_epochs=2, mode='auto', batch_size=4),
                   small_params, phase='pretrain')
    lines = report.to_log_lines()
    assert lines[0].startswith('phase=pretrain mode=auto epoch=1 ')
    assert any('best_epoch=' in line for line in lines)
    assert 'wall_clock_seconds' in lines[-1]
    assert 'wall_clock_seconds' not in report.to_record()


def test_training_errors(small_arch, small_params):
    with pytest.raises(EmptyDatasetError):
        train(TrainingData(np.zeros((0, 2, 40))), None, TrainConfig(mode='auto'), small_params)
    with pytest.raises(EmptyDatasetError):
        train(TrainingData(np.zeros((2, 2, 40))), None, TrainConfig(mode='set'), small_params)
    no_decoder = ParameterStore.initialize(small_arch, seed=0, include_decoder=False)
    with pytest.raises(ConfigError):
        train(TrainingData(np.zeros((2, 2, 40))), None, TrainConfig(mode='auto'), no_decoder)
    with pytest.raises(ConfigError):
        TrainConfig(mode='unknown').validate()


def test_training_without_finite_validation_raises(small_params):
    # Последний слой декодировщика без ReLU: NaN доходит до целевой функции
    small_params.tensors['dec.deconv2.bias'].data[0] = np.nan
    initial = small_params.snapshot()
    data = TrainingData(smooth_segments(4, 4))
    cfg = TrainConfig(max_epochs=2, batch_size=4, mode='auto')
    with pytest.raises(TrainingDivergedError, match="no finite validation objective"):
        train(data, data, cfg, small_params)
    for name, array in initial.items():
        assert np.array_equal(small_params.tensors[name].data, array, equal_nan=True), name


# ============================================================================
# МУЛЬТИКЛАССОВЫЙ РЕЖИМ
# ============================================================================

@pytest.fixture
def class_params(small_arch, vocab):
    return ParameterStore.initialize(replace(small_arch, head='multiclass'), seed=7,
                                     include_decoder=False, vocabulary=vocab.labels)


def test_class_targets_put_null_last(vocab):
    targets = [ActivitySet.of('b'), ActivitySet(), ActivitySet.of('a')]
    assert encode_class_targets(targets, vocab).tolist() == [1, 3, 0]
    with pytest.raises(CardinalityError):
        encode_class_targets([ActivitySet.of('a', 'b')], vocab)


def test_last_sample_training_data(vocab):
    segments = [LabeledSegment(np.zeros((2, 40)), 0, 's', ActivitySet.of('a'),
                               ActivitySet.of('a')),
                LabeledSegment(np.zeros((2, 40)), 20, 's', ActivitySet.of('a', 'b'),
                               ActivitySet())]
    data = TrainingData.last_sample(segments, vocab)
    assert data.targets is None
    assert data.class_indices.tolist() == [0, 3]
    assert data.take(np.array([1])).class_indices.tolist() == [3]
    segments[1].approx_target = None
    with pytest.raises(DataFormatError, match="last-sample"):
        TrainingData.last_sample(segments, vocab)


def test_multiclass_loss_is_nll_of_target_class(class_params, segments_batch):
    logscores = predict_class_logscores(segments_batch, class_params)
    loss = loss_multiclass(segments_batch, [ActivitySet.of('c'), ActivitySet()], class_params)
    assert loss.item() == pytest.approx(-(logscores[0, 2] + logscores[1, 3]) / 2, rel=1e-12)
    single = loss_multiclass(segments_batch[0], ActivitySet.of('c'), class_params)
    assert single.item() == pytest.approx(-logscores[0, 2], rel=1e-12)


def test_multiclass_gradients(class_params, segments_batch, gradient_checker):
    targets = [ActivitySet.of('a'), ActivitySet()]

    def loss():
        return loss_multiclass(segments_batch, targets, class_params)

    groups = [GROUP_ENCODER, GROUP_HEAD]
    names = class_params.names(groups)
    analytic = backward(loss(), class_params.subset(groups))
    errors = gradient_checker(loss, class_params, analytic, names)
    assert set(errors) == set(names)
    assert all(e < 1e-4 for e in errors.values()), errors


def test_multiclass_training_overfits_small_batch(class_params, vocab):
    segments = np.random.default_rng(5).uniform(size=(8, 2, 40))
    targets = [ActivitySet.of('a'), ActivitySet.of('b'), ActivitySet.of('c'), ActivitySet(),
               ActivitySet.of('b'), ActivitySet.of('a'), ActivitySet(), ActivitySet.of('c')]
    data = TrainingData(segments, class_indices=encode_class_targets(targets, vocab))
    cfg = TrainConfig(learning_rate=1e-2, weight_decay=0.0, batch_size=8, max_epochs=300,
                      patience=300, decay_enabled=False, mode='multiclass')
    report = train(data, data, cfg, class_params)
    assert report.best_val_objective < 0.05
    logscores = predict_class_logscores(segments, class_params)
    assert [p.predicted for p in predict_classes(logscores, vocab)] == targets


def test_mode_needs_matching_head(small_params, class_params, vocab):
    segments = np.zeros((2, 2, 40))
    targets = [ActivitySet.of('a'), ActivitySet()]
    data = TrainingData(segments, encode_set_targets(targets, vocab, 2),
                        encode_class_targets(targets, vocab))
    with pytest.raises(ConfigError, match="multiclass head"):
        train(data, None, TrainConfig(mode='multiclass'), small_params)
    with pytest.raises(ConfigError, match="set head"):
        train(data, None, TrainConfig(mode='set'), class_params)
    with pytest.raises(EmptyDatasetError):
        train(TrainingData(segments), None, TrainConfig(mode='multiclass'), class_params)
