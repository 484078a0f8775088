# -*- coding: utf-8 -*-
"""
Минимальный движок плотных тензоров с обратным автоматическим дифференцированием.

Модуль предоставляет все примитивы, которые нужны сети Auto-Set:
- временная свертка conv1d_temporal (valid, без паддинга) и транспонированная
  свертка deconv1d_temporal с обрезкой/дополнением справа до целевой длины
- полносвязный слой dense
- активации relu, sigmoid, log_softmax
- функции потерь: сумма квадратов ошибки, бинарная кросс-энтропия, NLL
- backward() - обратный проход по вычислительному графу

Все операции принимают необязательную ведущую ось батча: тензор [c, t]
обрабатывается как батч размера 1. Данные хранятся в float64.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ShapeError

logger = logging.getLogger(__name__)

# Тип данных всех тензоров
DTYPE = np.float64

# Граница обрезки вероятностей внутри bce/nll
CLAMP_EPS = 1e-7

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


# ============================================================================
# БАЗОВЫЙ КЛАСС ДИФФЕРЕНЦИРУЕМОЙ ОПЕРАЦИИ
# ============================================================================

class Function:
    """
    Базовый класс дифференцируемой операции.

    Подкласс реализует forward() над numpy-массивами и backward(), который
    по градиенту выхода возвращает кортеж градиентов по каждому входу
    (None для входов без градиента).
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        """
        Создает экземпляр операции, выполняет прямой проход и оборачивает
        результат в Tensor, который ссылается на операцию (для backward).
        """
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad,
                      creator=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Суммирует градиент по осям, размноженным при broadcasting."""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(to_shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


# ============================================================================
# ТЕНЗОР
# ============================================================================

class Tensor:
    """
    Плотный тензор float64 с поддержкой автоматического дифференцирования.

    Attributes:
        data (np.ndarray): Непрерывный массив значений (row-major)
        requires_grad (bool): Участвует ли тензор в вычислении градиентов
        creator (Function): Операция, создавшая тензор (None для листьев)
        grad (np.ndarray): Градиент после последнего backward() (для листьев)
        name (str): Необязательное имя (имена параметров сети)
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 creator: Optional[Function] = None, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE, order='C')
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return Add.apply(self, _as_tensor(other))

    def __radd__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return Add.apply(_as_tensor(other), self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ============================================================================
# ВЫЧИСЛИТЕЛЬНЫЙ ГРАФ И ОБРАТНЫЙ ПРОХОД
# ============================================================================

@dataclass
class ComputeGraph:
    """
    Узлы графа в топологическом порядке: входы каждого узла стоят раньше него.
    """
    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputeGraph":
        # Итеративный обход в глубину (post-order), без рекурсии
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, children_done = stack.pop()
            if id(node) in visited:
                continue
            if children_done:
                visited.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(nodes=order)


def backward(loss: Tensor,
             params: Optional[Mapping[str, Tensor]] = None) -> Dict[str, np.ndarray]:
    """
    Обратный проход от скалярной потери.

    Листовые тензоры с requires_grad получают поле .grad. Если передан
    словарь параметров, возвращаются градиенты по каждому имени; параметр,
    не связанный с потерей, получает точный ноль той же формы.

    Args:
        loss (Tensor): Скаляр (форма ())
        params (Mapping[str, Tensor]): Именованные параметры

    Returns:
        Dict[str, np.ndarray]: Градиенты по именам параметров

    Raises:
        ShapeError: Если потеря не скалярная
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
    graph = ComputeGraph.from_output(loss) if loss.requires_grad else ComputeGraph([loss])

    for node in reversed(graph.nodes):
        node_grad = grads.get(id(node))
        if node_grad is None or node.creator is None:
            continue
        input_grads = node.creator.backward(node_grad)
        for inp, inp_grad in zip(node.creator.tensors, input_grads):
            if inp_grad is None or not inp.requires_grad:
                continue
            if id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + inp_grad
            else:
                grads[id(inp)] = np.array(inp_grad, dtype=DTYPE, copy=True)

    for node in graph.nodes:
        if node.creator is None and node.requires_grad:
            node.grad = grads.get(id(node), np.zeros_like(node.data))

    if params is None:
        return {}
    return {name: grads.get(id(tensor), np.zeros_like(tensor.data))
            for name, tensor in params.items()}


# ============================================================================
# ЭЛЕМЕНТАРНЫЕ ОПЕРАЦИИ
# ============================================================================

class Add(Function):
    def forward(self, a, b):
        self.a_shape, self.b_shape = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return (self.unbroadcast(grad, self.a_shape),
                self.unbroadcast(grad, self.b_shape))


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=DTYPE)

    def backward(self, grad):
        return (np.full(self.shape, float(grad), dtype=DTYPE),)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class SliceLast(Function):
    def forward(self, x, start, stop):
        self.in_shape, self.start, self.stop = x.shape, start, stop
        return x[..., start:stop].copy()

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=DTYPE)
        full[..., self.start:self.stop] = grad
        return (full,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        # Устойчивая форма: exp только от неположительных аргументов
        e = np.exp(-np.abs(x))
        self.out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class LogSoftmax(Function):
    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        self.out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        return self.out

    def backward(self, grad):
        return (grad - np.exp(self.out) * grad.sum(axis=-1, keepdims=True),)


# ============================================================================
# СЛОИ: DENSE, CONV1D, DECONV1D
# ============================================================================

class Dense(Function):
    def forward(self, x, w, b):
        if w.ndim != 2 or x.shape[-1] != w.shape[1]:
            raise ShapeError(f"dense: input width {x.shape[-1]} != weight columns "
                             f"{w.shape[1] if w.ndim == 2 else w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"dense: bias length {b.shape} != weight rows {w.shape[0]}")
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, grad):
        if self.x.ndim == 1:
            return grad @ self.w, np.outer(grad, self.x), grad
        return grad @ self.w, grad.T @ self.x, grad.sum(axis=0)


def _check_conv_args(op: str, x: np.ndarray, channel_axis_size: int, w: np.ndarray,
                     b: np.ndarray, out_channels: int, stride: int) -> None:
    if x.ndim not in (2, 3):
        raise ShapeError(f"{op}: input must be [c, t] or [batch, c, t], got {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"{op}: weights must be 3-D, got {w.shape}")
    if x.shape[-2] != channel_axis_size:
        raise ShapeError(f"{op}: input channels {x.shape[-2]} != weight channels "
                         f"{channel_axis_size}")
    if b.shape != (out_channels,):
        raise ShapeError(f"{op}: bias length {b.shape} != output channels {out_channels}")
    if stride < 1:
        raise ShapeError(f"{op}: stride must be positive, got {stride}")


class Conv1d(Function):
    """Valid-свертка по времени: [B, c_in, t] x [c_out, c_in, k] -> [B, c_out, t_out]."""

    def forward(self, x, w, b, stride):
        c_out, c_in, k = w.shape if w.ndim == 3 else (0, 0, 0)
        _check_conv_args("conv1d_temporal", x, c_in, w, b, c_out, stride)
        if x.shape[-1] < k:
            raise ShapeError(f"conv1d_temporal: temporal length {x.shape[-1]} < kernel width {k}")

        self.unbatched = x.ndim == 2
        x3 = x[None] if self.unbatched else x
        batch, _, t = x3.shape
        t_out = (t - k) // stride + 1

        # Окна [B, c_in, t_out, k] -> матрица [B, t_out, c_in*k]
        windows = sliding_window_view(x3, k, axis=2)[:, :, ::stride, :]
        self.cols = windows.transpose(0, 2, 1, 3).reshape(batch, t_out, c_in * k)
        self.w2 = w.reshape(c_out, c_in * k)
        self.in_shape, self.w_shape, self.stride, self.t_out = x3.shape, w.shape, stride, t_out

        out = (self.cols @ self.w2.T).transpose(0, 2, 1) + b[None, :, None]
        return out[0] if self.unbatched else out

    def backward(self, grad):
        g3 = grad[None] if self.unbatched else grad
        batch, c_in, t = self.in_shape
        c_out, _, k = self.w_shape
        gt = g3.transpose(0, 2, 1)  # [B, t_out, c_out]

        dw = (gt.reshape(-1, c_out).T @ self.cols.reshape(-1, c_in * k)).reshape(self.w_shape)
        db = g3.sum(axis=(0, 2))

        dcols = (gt @ self.w2).reshape(batch, self.t_out, c_in, k)
        dx = np.zeros(self.in_shape, dtype=DTYPE)
        span = self.stride * (self.t_out - 1) + 1
        for kappa in range(k):
            dx[:, :, kappa:kappa + span:self.stride] += dcols[:, :, :, kappa].transpose(0, 2, 1)
        return (dx[0] if self.unbatched else dx), dw, db


def deconv_reachable_length(t: int, kernel: int, stride: int) -> int:
    """Наибольшая целевая длина, достижимая из t отсчетов: stride*t + k - 1."""
    return stride * t + kernel - 1


class Deconv1d(Function):
    """
    Транспонированная свертка: [B, c_in, t] x [c_in, c_out, k] -> [B, c_out, target].

    Полная длина stride*(t-1)+k обрезается справа или дополняется нулями
    до target_length; смещение добавляется ко всем позициям.
    """

    def forward(self, y, w, b, stride, target_length=None):
        c_in, c_out, k = w.shape if w.ndim == 3 else (0, 0, 0)
        _check_conv_args("deconv1d_temporal", y, c_in, w, b, c_out, stride)

        self.unbatched = y.ndim == 2
        y3 = y[None] if self.unbatched else y
        batch, _, t = y3.shape
        full_length = stride * (t - 1) + k
        target = full_length if target_length is None else int(target_length)
        if target < 1 or target > deconv_reachable_length(t, k, stride):
            raise ShapeError(f"deconv1d_temporal: target length {target} unreachable from "
                             f"t={t}, k={k}, stride={stride} "
                             f"(max {deconv_reachable_length(t, k, stride)})")

        self.y_rows = y3.transpose(0, 2, 1).reshape(-1, c_in)  # [B*t, c_in]
        self.w2 = w.reshape(c_in, c_out * k)
        contrib = (self.y_rows @ self.w2).reshape(batch, t, c_out, k)

        full = np.zeros((batch, c_out, full_length), dtype=DTYPE)
        span = stride * (t - 1) + 1
        for kappa in range(k):
            full[:, :, kappa:kappa + span:stride] += contrib[:, :, :, kappa].transpose(0, 2, 1)

        if target <= full_length:
            out = full[:, :, :target]
        else:
            out = np.concatenate(
                [full, np.zeros((batch, c_out, target - full_length), dtype=DTYPE)], axis=2)

        self.in_shape, self.w_shape, self.stride = y3.shape, w.shape, stride
        self.full_length, self.target = full_length, target
        out = out + b[None, :, None]
        return out[0] if self.unbatched else out

    def backward(self, grad):
        g3 = grad[None] if self.unbatched else grad
        batch, c_in, t = self.in_shape
        _, c_out, k = self.w_shape

        db = g3.sum(axis=(0, 2))
        # Возвращаем градиент к полной длине: обрезанное -> нули, дополненное -> отбрасываем
        if self.target < self.full_length:
            g_full = np.zeros((batch, c_out, self.full_length), dtype=DTYPE)
            g_full[:, :, :self.target] = g3
        else:
            g_full = g3[:, :, :self.full_length]

        windows = sliding_window_view(g_full, k, axis=2)[:, :, ::self.stride, :]
        gcols = windows.transpose(0, 2, 1, 3).reshape(batch * t, c_out * k)

        dy = (gcols @ self.w2.T).reshape(batch, t, c_in).transpose(0, 2, 1)
        dw = (self.y_rows.T @ gcols).reshape(self.w_shape)
        return (dy[0] if self.unbatched else np.ascontiguousarray(dy)), dw, db


# ============================================================================
# ФУНКЦИИ ПОТЕРЬ
# ============================================================================

def _batch_size(x: np.ndarray, batched: bool) -> int:
    return x.shape[0] if batched else 1


class SquaredError(Function):
    """Сумма квадратов разностей, деленная на размер батча."""

    def forward(self, pred, target, batched=False):
        if pred.shape != target.shape:
            raise ShapeError(f"squared error: prediction {pred.shape} != target {target.shape}")
        self.diff = pred - target
        self.scale = 1.0 / _batch_size(pred, batched)
        return np.asarray((self.diff ** 2).sum() * self.scale, dtype=DTYPE)

    def backward(self, grad):
        g = 2.0 * self.diff * self.scale * float(grad)
        return g, -g


class BinaryCrossEntropy(Function):
    """Бинарная кросс-энтропия по всем меткам с обрезкой вероятностей в [eps, 1-eps]."""

    def forward(self, probs, targets, eps=CLAMP_EPS, batched=False):
        if probs.shape != targets.shape:
            raise ShapeError(f"bce: scores {probs.shape} != targets {targets.shape}")
        self.clipped = np.clip(probs, eps, 1.0 - eps)
        self.inside = (probs >= eps) & (probs <= 1.0 - eps)
        self.targets = targets
        self.scale = 1.0 / _batch_size(probs, batched)
        loss = -(targets * np.log(self.clipped) + (1.0 - targets) * np.log1p(-self.clipped))
        return np.asarray(loss.sum() * self.scale, dtype=DTYPE)

    def backward(self, grad):
        y, p = self.targets, self.clipped
        g = (-(y / p) + (1.0 - y) / (1.0 - p)) * self.inside * self.scale * float(grad)
        return g, None


class NegativeLogLikelihood(Function):
    """NLL истинного класса по лог-вероятностям; log p обрезается снизу на log(eps)."""

    def forward(self, logprobs, index, eps=CLAMP_EPS, batched=False):
        lp2 = logprobs if batched else logprobs[None]
        idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
        if idx.shape[0] != lp2.shape[0]:
            raise ShapeError(f"nll: {idx.shape[0]} indices for batch of {lp2.shape[0]}")
        if np.any(idx < 0) or np.any(idx >= lp2.shape[-1]):
            raise ShapeError(f"nll: class index out of range 0..{lp2.shape[-1] - 1}")
        picked = lp2[np.arange(lp2.shape[0]), idx]
        floor = np.log(eps)
        self.active = picked > floor
        self.idx, self.shape, self.batched = idx, lp2.shape, batched
        self.scale = 1.0 / lp2.shape[0]
        return np.asarray(-np.maximum(picked, floor).sum() * self.scale, dtype=DTYPE)

    def backward(self, grad):
        g = np.zeros(self.shape, dtype=DTYPE)
        g[np.arange(self.shape[0]), self.idx] = -self.scale * float(grad) * self.active
        return (g if self.batched else g[0]),


# ============================================================================
# ФУНКЦИОНАЛЬНЫЙ ИНТЕРФЕЙС
# ============================================================================

def conv1d_temporal(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """
    Valid-свертка вдоль временной оси.

    output[o][j] = bias[o] + sum_{i,kappa} input[i][j*stride + kappa] * weights[o][i][kappa],
    t_out = floor((t - k) / stride) + 1.
    """
    return Conv1d.apply(_as_tensor(x), weights, bias, stride=stride)


def deconv1d_temporal(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1,
                      target_length: Optional[int] = None) -> Tensor:
    """
    Сопряженная к conv1d_temporal операция по входу, приведенная к target_length.

    При target_length=None обрезка отключена (полная длина stride*(t-1)+k).
    """
    return Deconv1d.apply(_as_tensor(x), weights, bias, stride=stride,
                          target_length=target_length)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Аффинное преобразование W @ x + b (x: [n] или [B, n])."""
    return Dense.apply(_as_tensor(x), weights, bias)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(_as_tensor(x))


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(_as_tensor(x))


def log_softmax(x: Tensor) -> Tensor:
    """Логарифм softmax по последней оси (со стабилизацией вычитанием максимума)."""
    return LogSoftmax.apply(_as_tensor(x))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(_as_tensor(x), shape=tuple(shape))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    return SliceLast.apply(_as_tensor(x), start=start, stop=stop)


def tensor_sum(x: Tensor) -> Tensor:
    return SumAll.apply(_as_tensor(x))


def squared_error(pred: Tensor, target: Union[Tensor, np.ndarray],
                  batched: bool = False) -> Tensor:
    return SquaredError.apply(pred, _as_tensor(target), batched=batched)


def binary_cross_entropy(probs: Tensor, targets: Union[Tensor, np.ndarray],
                         batched: bool = False, eps: float = CLAMP_EPS) -> Tensor:
    return BinaryCrossEntropy.apply(probs, _as_tensor(targets), eps=eps, batched=batched)


def nll_loss(logprobs: Tensor, index, batched: bool = False,
             eps: float = CLAMP_EPS) -> Tensor:
    return NegativeLogLikelihood.apply(logprobs, index=index, eps=eps, batched=batched)


# ============================================================================
# ЧИСЛЕННАЯ ПРОВЕРКА ГРАДИЕНТОВ
# ============================================================================

def numerical_gradient(fn: Callable[[], float], array: np.ndarray,
                       eps: float = 1e-4) -> np.ndarray:
    """
    Центральные конечные разности fn() по каждому элементу array.

    array изменяется на месте и восстанавливается после каждого шага.
    """
    grad = np.zeros_like(array, dtype=DTYPE)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        plus = fn()
        flat[i] = saved - eps
        minus = fn()
        flat[i] = saved
        gflat[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)."""
    num = np.linalg.norm(analytic - numeric)
    return float(num / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor))
