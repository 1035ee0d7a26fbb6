"""Small encoder-decoder translation network with hand-written backward.

Architecture (depth D, base features F): per encoder level two 3x3
convolutions with ReLU, 2x2 average-pool down; a two-conv bottleneck;
per decoder level nearest-neighbor upsample, concatenation with the
encoder skip, two 3x3 conv+ReLU; then a final 1x1 convolution with no
output activation (targets are unclipped, so the head must be unbounded).
Channel widths double per level.  No normalization layers: training runs
one slice per step, which makes batch statistics meaningless.

Parameters live in one flat float64 vector plus a shape manifest; the
forward pass records a tape (conv inputs as im2col matrices, ReLU masks,
pool/upsample/concat markers) that the backward pass walks in reverse.
Skip connections are handled with a pending-gradient stack: the split at
each concat is pushed and popped at the matching pool, which pairs LIFO.

Convolutions zero-pad to keep spatial size; input height and width must
be divisible by 2**depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractError, NumericalError
from .image import STREAM_NET_INIT, rng_for
from .optim import ParamVector


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs; defaults are the desk-scale size."""

    base_features: int = 8
    depth: int = 2
    kernel_size: int = 3
    activation: str = "relu"
    final_activation: str = "none"

    def __post_init__(self) -> None:
        if self.base_features < 4:
            raise ConfigurationError(f"base_features must be >= 4, got {self.base_features}")
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        if self.kernel_size != 3:
            raise ConfigurationError(f"kernel_size must be 3, got {self.kernel_size}")
        if self.activation != "relu":
            raise ConfigurationError(f"activation must be 'relu', got {self.activation!r}")
        if self.final_activation != "none":
            raise ConfigurationError(
                f"final_activation must be 'none', got {self.final_activation!r}"
            )


def build_manifest(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (tensor name, shape) list; the flat vector follows this order."""
    feats = [cfg.base_features * 2**i for i in range(cfg.depth + 1)]
    entries: list[tuple[str, tuple[int, ...]]] = []

    def conv(name: str, f_out: int, f_in: int, k: int) -> None:
        entries.append((f"{name}.w", (f_out, f_in, k, k)))
        entries.append((f"{name}.b", (f_out,)))

    in_ch = 1
    for i in range(cfg.depth):
        conv(f"enc{i}.conv1", feats[i], in_ch, 3)
        conv(f"enc{i}.conv2", feats[i], feats[i], 3)
        in_ch = feats[i]
    conv("bot.conv1", feats[-1], in_ch, 3)
    conv("bot.conv2", feats[-1], feats[-1], 3)
    for i in reversed(range(cfg.depth)):
        conv(f"dec{i}.conv1", feats[i], feats[i] + feats[i + 1], 3)
        conv(f"dec{i}.conv2", feats[i], feats[i], 3)
    conv("final", 1, feats[0], 1)
    return entries


@dataclass
class DomainNetParams:
    """Flat parameter vector plus its shape manifest."""

    config: NetConfig
    flat: np.ndarray
    manifest: list[tuple[str, tuple[int, ...]]]
    _names: tuple[str, ...] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        expected = sum(int(np.prod(shape)) for _, shape in self.manifest)
        self.flat = np.asarray(self.flat, dtype=np.float64).reshape(-1)
        if self.flat.size != expected:
            raise ContractError(
                f"flat vector holds {self.flat.size} values, manifest expects {expected}"
            )
        if self.manifest != build_manifest(self.config):
            raise ContractError("manifest does not match the network config")

    @property
    def n_params(self) -> int:
        return self.flat.size

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> tensor view into the flat vector (no copies)."""
        out, offset = {}, 0
        for name, shape in self.manifest:
            n = int(np.prod(shape))
            out[name] = self.flat[offset:offset + n].reshape(shape)
            offset += n
        return out

    def scalar_names(self) -> tuple[str, ...]:
        if self._names is None:
            names = []
            for name, shape in self.manifest:
                names.extend(f"{name}[{i}]" for i in range(int(np.prod(shape))))
            self._names = tuple(names)
        return self._names

    def to_param_vector(self) -> ParamVector:
        return ParamVector(self.flat.copy(), self.scalar_names())

    def with_flat(self, flat: np.ndarray) -> "DomainNetParams":
        p = DomainNetParams(self.config, np.asarray(flat, dtype=np.float64).copy(), self.manifest)
        p._names = self._names
        return p

    def copy(self) -> "DomainNetParams":
        return self.with_flat(self.flat)


def net_init(config: NetConfig, seed: int, stream_index: int = 0) -> DomainNetParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic in seed.

    ``stream_index`` separates several nets initialized from one master
    seed (the two-stage trainer initializes its second network with 1).
    """
    rng = rng_for(seed, STREAM_NET_INIT, stream_index)
    manifest = build_manifest(config)
    chunks = []
    for name, shape in manifest:
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            limit = float(np.sqrt(1.0 / fan_in))
            chunks.append(rng.uniform(-limit, limit, size=int(np.prod(shape))))
        else:
            chunks.append(np.zeros(int(np.prod(shape))))
    return DomainNetParams(config, np.concatenate(chunks), manifest)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, h * w)


def _col2im(dcols: np.ndarray, c: int, h: int, w: int, k: int) -> np.ndarray:
    p = k // 2
    d = dcols.reshape(c, k, k, h, w)
    dxp = np.zeros((c, h + 2 * p, w + 2 * p))
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + h, kj:kj + w] += d[:, ki, kj]
    return dxp[:, p:p + h, p:p + w] if p else dxp


def _avgpool(x: np.ndarray) -> np.ndarray:
    return 0.25 * (x[:, ::2, ::2] + x[:, 1::2, ::2] + x[:, ::2, 1::2] + x[:, 1::2, 1::2])


def _avgpool_back(d: np.ndarray) -> np.ndarray:
    return 0.25 * np.repeat(np.repeat(d, 2, axis=1), 2, axis=2)


def _upsample(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample_back(d: np.ndarray) -> np.ndarray:
    return d[:, ::2, ::2] + d[:, 1::2, ::2] + d[:, ::2, 1::2] + d[:, 1::2, 1::2]


@dataclass
class NetActivations:
    """Forward tape consumed exactly once by net_backward."""

    params: DomainNetParams
    tape: list[tuple]
    input_shape: tuple[int, int]
    output_shape: tuple[int, int]
    kink_margin: float


def net_forward(x: np.ndarray, params: DomainNetParams) -> tuple[np.ndarray, NetActivations]:
    """Run the network on a 2-D image; returns output and the backward tape."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"network input must be 2-D, got shape {x.shape}")
    cfg = params.config
    divisor = 2**cfg.depth
    if x.shape[0] % divisor or x.shape[1] % divisor:
        raise ContractError(
            f"input {x.shape[0]}x{x.shape[1]} is not divisible by {divisor}; "
            f"pad the image to a multiple of {divisor}"
        )
    tensors = params.tensors()
    tape: list[tuple] = []
    margin = np.inf

    def conv(name: str, inp: np.ndarray, relu: bool) -> np.ndarray:
        nonlocal margin
        wt, b = tensors[f"{name}.w"], tensors[f"{name}.b"]
        f_out, _, k, _ = wt.shape
        _, h, w = inp.shape
        cols = _im2col(inp, k)
        z = (wt.reshape(f_out, -1) @ cols + b[:, None]).reshape(f_out, h, w)
        if relu:
            if z.size:
                margin = min(margin, float(np.abs(z).min()))
            mask = z > 0
            tape.append(("conv", name, inp.shape, cols, mask))
            return z * mask
        tape.append(("conv", name, inp.shape, cols, None))
        return z

    cur = x[None]
    skips = []
    for i in range(cfg.depth):
        cur = conv(f"enc{i}.conv1", cur, relu=True)
        cur = conv(f"enc{i}.conv2", cur, relu=True)
        skips.append(cur)
        tape.append(("pool",))
        cur = _avgpool(cur)
    cur = conv("bot.conv1", cur, relu=True)
    cur = conv("bot.conv2", cur, relu=True)
    for i in reversed(range(cfg.depth)):
        tape.append(("upsample",))
        cur = _upsample(cur)
        skip = skips[i]
        tape.append(("concat", skip.shape[0], cur.shape[0]))
        cur = np.concatenate([skip, cur], axis=0)
        cur = conv(f"dec{i}.conv1", cur, relu=True)
        cur = conv(f"dec{i}.conv2", cur, relu=True)
    cur = conv("final", cur, relu=False)
    y = cur[0]
    return y, NetActivations(
        params=params,
        tape=tape,
        input_shape=x.shape,
        output_shape=y.shape,
        kink_margin=float(margin),
    )


def net_backward(
    saved: NetActivations,
    upstream: np.ndarray,
    need_param_grads: bool = True,
) -> tuple[ParamVector | None, np.ndarray]:
    """Exact gradients of sum(upstream * output) wrt parameters and input."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != saved.output_shape:
        raise ContractError(
            f"upstream shape {upstream.shape} does not match saved output {saved.output_shape}"
        )
    if not np.isfinite(upstream).all():
        raise NumericalError("upstream gradient contains non-finite values")
    params = saved.params
    tensors = params.tensors()
    grads = {name: np.zeros(shape) for name, shape in params.manifest} if need_param_grads else None

    grad = upstream[None]
    pending: list[np.ndarray] = []
    for entry in reversed(saved.tape):
        kind = entry[0]
        if kind == "conv":
            _, name, in_shape, cols, mask = entry
            dz = grad * mask if mask is not None else grad
            wt = tensors[f"{name}.w"]
            f_out, c_in, k, _ = wt.shape
            dz2 = dz.reshape(f_out, -1)
            if need_param_grads:
                grads[f"{name}.w"] += (dz2 @ cols.T).reshape(wt.shape)
                grads[f"{name}.b"] += dz2.sum(axis=1)
            dcols = wt.reshape(f_out, -1).T @ dz2
            grad = _col2im(dcols, c_in, in_shape[1], in_shape[2], k)
        elif kind == "pool":
            grad = _avgpool_back(grad) + pending.pop()
        elif kind == "upsample":
            grad = _upsample_back(grad)
        elif kind == "concat":
            _, n_skip, _ = entry
            pending.append(grad[:n_skip])
            grad = grad[n_skip:]
        else:  # pragma: no cover
            raise ContractError(f"unknown tape entry {kind!r}")
    if pending:
        raise ContractError("unbalanced skip-connection tape")

    grad_input = grad[0]
    if grads is None:
        return None, grad_input
    flat = np.concatenate([grads[name].reshape(-1) for name, _ in params.manifest])
    return ParamVector(flat, params.scalar_names()), grad_input


class FrozenNet:
    """Inference handle over fixed parameters.

    Exposes the forward pass and the input gradient only; there is
    nothing trainable to update through this handle.
    """

    def __init__(self, params: DomainNetParams):
        self._params = params.copy()

    @property
    def config(self) -> NetConfig:
        return self._params.config

    def parameters_snapshot(self) -> DomainNetParams:
        """Read-only copy, e.g. for serialization."""
        return self._params.copy()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, NetActivations]:
        return net_forward(x, self._params)

    def backward_input(self, saved: NetActivations, upstream: np.ndarray) -> np.ndarray:
        _, grad_input = net_backward(saved, upstream, need_param_grads=False)
        return grad_input

    def trainable_parameters(self) -> ParamVector:
        raise ContractError("operator is frozen: parameter updates are not allowed")


def freeze(params: DomainNetParams) -> FrozenNet:
    return FrozenNet(params)


class NetOperator:
    """Gradient-check adapter for the network."""

    # loss is piecewise affine per coordinate, so FD has no truncation
    # error; a tiny step minimizes the chance of straddling a ReLU kink
    fd_param_scale = 1e-6
    fd_input_scale = 1e-6

    def __init__(self, params: DomainNetParams):
        self.params = params

    def param_vector(self) -> ParamVector:
        return self.params.to_param_vector()

    def with_params(self, pv: ParamVector) -> "NetOperator":
        return NetOperator(self.params.with_flat(pv.values))

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = net_forward(x, self.params)
        return y

    def value_and_grads(self, x: np.ndarray, upstream: np.ndarray):
        y, saved = net_forward(x, self.params)
        pgrads, igrad = net_backward(saved, upstream)
        return y, pgrads, igrad

    def kink_margin(self, x: np.ndarray) -> float:
        _, saved = net_forward(x, self.params)
        return saved.kink_margin
