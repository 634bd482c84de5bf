"""
最小全连接网络

三层感知机 (输入 → 256 → 256 → 5，ReLU)，手写反向传播与 Adam 优化器，
以及带版本头的二进制权重格式。

权重数据块布局 (小端):
    magic      4字节 b"MLPW"
    version    u32
    input_dim  u32
    n_layers   u32
    每层       u32 rows, u32 cols
    每层       rows*cols 个 float64 (行优先的 W)，随后 cols 个 float64 (b)
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import WeightFormatError
from .models import N_ACTIONS

logger = logging.getLogger(__name__)

WEIGHT_MAGIC = b"MLPW"
WEIGHT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_SHAPE = struct.Struct("<II")

ParameterGradients = List[np.ndarray]


class Mlp:
    """
    ReLU 全连接网络

    参数按 [W0, b0, W1, b1, ...] 的顺序组织，W 的形状为 (输入, 输出)。
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("权重与偏置的层数必须一致且非空")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"第{i}层形状不合法: W{w.shape}, b{b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"第{i}层输入维度与上一层输出不匹配")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"第{i}层包含非有限参数")

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (256, 256),
        n_outputs: int = N_ACTIONS,
    ) -> "Mlp":
        """
        Glorot 均匀初始化，偏置为零

        Args:
            input_dim: 输入维度 (10 或 11)
            rng: 随机数生成器
            hidden: 隐藏层宽度
            n_outputs: 输出维度

        Returns:
            新网络
        """
        sizes = [input_dim, *hidden, n_outputs]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def n_outputs(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _as_batch(self, obs: np.ndarray) -> Tuple[np.ndarray, bool]:
        x = np.asarray(obs, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[np.newaxis, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"观测维度{x.shape}与网络输入维度{self.input_dim}不匹配")
        return x, single

    def _forward_cache(self, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        activations = [x]
        pre_activations = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            pre_activations.append(z)
            activations.append(z if i == self.n_layers - 1 else np.maximum(z, 0.0))
        return activations, pre_activations

    def forward(self, obs: np.ndarray) -> np.ndarray:
        """
        前向计算 Q 值

        Args:
            obs: 单个观测 (1维) 或一批观测 (2维)

        Returns:
            与输入批次形状对应的 Q 值
        """
        x, single = self._as_batch(obs)
        activations, _ = self._forward_cache(x)
        out = activations[-1]
        return out[0] if single else out

    __call__ = forward

    def pre_activations(self, obs: np.ndarray) -> List[np.ndarray]:
        x, _ = self._as_batch(obs)
        return self._forward_cache(x)[1]

    def backward(self, obs: np.ndarray, upstream: np.ndarray) -> ParameterGradients:
        """
        计算 ⟨upstream, forward(obs)⟩ 对每个参数的梯度，批次维度求和

        Args:
            obs: 单个或一批观测
            upstream: 与 forward 输出同形状的上游梯度

        Returns:
            与 parameters() 顺序一致的梯度列表
        """
        x, single = self._as_batch(obs)
        grad = np.asarray(upstream, dtype=np.float64)
        if single:
            grad = grad[np.newaxis, :]
        if grad.shape != (x.shape[0], self.n_outputs):
            raise ValueError(f"上游梯度形状{grad.shape}与输出形状不匹配")

        activations, pre_activations = self._forward_cache(x)
        grads: List[Optional[np.ndarray]] = [None] * (2 * self.n_layers)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                grad = grad * (pre_activations[i] > 0.0)
            grads[2 * i] = activations[i].T @ grad
            grads[2 * i + 1] = grad.sum(axis=0)
            if i > 0:
                grad = grad @ self.weights[i].T
        return grads  # type: ignore[return-value]

    def soft_update_from(self, source: "Mlp", tau: float) -> None:
        """指数滑动平均: θ ← τ·θ_source + (1−τ)·θ"""
        for target_param, source_param in zip(self.parameters(), source.parameters()):
            target_param *= 1.0 - tau
            target_param += tau * source_param

    def same_shape(self, other: "Mlp") -> bool:
        return [p.shape for p in self.parameters()] == [p.shape for p in other.parameters()]


@dataclass
class AdamState:
    """
    Adam 优化器状态

    Attributes:
        lr: 学习率
        beta1: 一阶矩衰减
        beta2: 二阶矩衰减
        eps: 数值稳定项
        step: 已执行步数
        m: 一阶矩
        v: 二阶矩
    """

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Mlp, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(p) for p in net.parameters()]
        state.v = [np.zeros_like(p) for p in net.parameters()]
        return state


def adam_step(net: Mlp, grads: ParameterGradients, state: AdamState) -> Tuple[Mlp, AdamState]:
    """
    带偏差修正的 Adam 更新 (原地修改网络与状态)

    Returns:
        (网络, 状态)
    """
    params = net.parameters()
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ValueError(f"梯度数量({len(grads)})与参数数量({len(params)})不一致")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param, grad, m, v in zip(params, grads, state.m, state.v):
        if grad.shape != param.shape:
            raise ValueError(f"梯度形状{grad.shape}与参数形状{param.shape}不一致")
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return net, state


def save_weights(net: Mlp) -> bytes:
    """把网络序列化为带版本头的二进制数据块"""
    chunks = [_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, net.input_dim, net.n_layers)]
    for w in net.weights:
        chunks.append(_SHAPE.pack(*w.shape))
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def load_weights(blob: bytes, expected_input_dim: Optional[int] = None) -> Mlp:
    """
    从二进制数据块恢复网络

    Args:
        blob: save_weights 生成的数据
        expected_input_dim: 期望的输入维度，不一致时报错

    Raises:
        WeightFormatError: 魔数、版本、形状或长度不合法
    """
    if len(blob) < _HEADER.size:
        raise WeightFormatError("权重数据过短，缺少头部")
    magic, version, input_dim, n_layers = _HEADER.unpack_from(blob, 0)
    if magic != WEIGHT_MAGIC:
        raise WeightFormatError(f"权重魔数不正确: {magic!r}")
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"不支持的权重版本: {version}")
    if n_layers < 1:
        raise WeightFormatError("权重层数必须为正")
    if expected_input_dim is not None and input_dim != expected_input_dim:
        raise WeightFormatError(f"输入维度不匹配: 期望{expected_input_dim}，实际{input_dim}")

    offset = _HEADER.size
    if len(blob) < offset + n_layers * _SHAPE.size:
        raise WeightFormatError("权重数据过短，缺少形状表")
    shapes = []
    for _ in range(n_layers):
        shapes.append(_SHAPE.unpack_from(blob, offset))
        offset += _SHAPE.size
    if shapes[0][0] != input_dim:
        raise WeightFormatError("形状表与输入维度不一致")

    expected_size = offset + sum((r * c + c) * 8 for r, c in shapes)
    if len(blob) != expected_size:
        raise WeightFormatError(f"权重数据长度不正确: 期望{expected_size}字节，实际{len(blob)}字节")

    weights, biases = [], []
    for rows, cols in shapes:
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
        offset += rows * cols * 8
        b = np.frombuffer(blob, dtype="<f8", count=cols, offset=offset)
        offset += cols * 8
        weights.append(w.reshape(rows, cols).astype(np.float64))
        biases.append(b.astype(np.float64))
    try:
        return Mlp(weights, biases)
    except ValueError as e:
        raise WeightFormatError(f"权重内容不合法: {e}")


def gradient_check(
    net: Mlp, obs: np.ndarray, upstream: np.ndarray, h: float = 1e-5
) -> float:
    """
    用中心差分检验反向传播

    Returns:
        所有参数上的最大相对误差 |a−n| / max(1e-6, |a|+|n|)
    """
    analytic = net.backward(obs, upstream)
    upstream = np.asarray(upstream, dtype=np.float64)

    def objective() -> float:
        return float(np.sum(net.forward(obs) * upstream))

    worst = 0.0
    for param, grad in zip(net.parameters(), analytic):
        flat = param.reshape(-1)
        grad_flat = grad.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            plus = objective()
            flat[j] = original - h
            minus = objective()
            flat[j] = original
            numeric = (plus - minus) / (2.0 * h)
            error = abs(grad_flat[j] - numeric) / max(1e-6, abs(grad_flat[j]) + abs(numeric))
            worst = max(worst, error)
    return worst
