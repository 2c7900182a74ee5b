"""Neural layers assembled from autodiff primitives.

Parameters live in a flat LayerParams mapping from a dotted path (for
example "backbone.stage1.conv1.weight") to a Tensor with requires_grad set.
Layers are pure functions of (input, params); nothing here owns state.

Initialization follows common practice for nets trained from scratch:
He-uniform fan-in scaling for conv and FC weights, U(-1/sqrt(H), 1/sqrt(H))
for LSTM matrices, and a +1.0 forget-gate bias so early training does not
flush the cell state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    conv2d,
    matmul,
    mul,
    relu,
    sigmoid,
    tanh,
    tslice,
)
from .errors import ShapeError

LayerParams = dict[str, Tensor]

_MAGIC = b"DLPC"
_VERSION = 1


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_conv(rng, params: LayerParams, prefix: str, c_out: int, c_in: int, k: int) -> None:
    """Add '<prefix>weight' and '<prefix>bias'; prefix carries its own dot."""
    params[prefix + "weight"] = he_uniform(rng, (c_out, c_in, k, k), c_in * k * k)
    params[prefix + "bias"] = Tensor(np.zeros(c_out), requires_grad=True)


def init_fc(rng, params: LayerParams, prefix: str, d_in: int, d_out: int) -> None:
    params[prefix + "weight"] = he_uniform(rng, (d_in, d_out), d_in)
    params[prefix + "bias"] = Tensor(np.zeros(d_out), requires_grad=True)


def init_lstm(rng, params: LayerParams, prefix: str, d_in: int, hidden: int) -> None:
    bound = 1.0 / np.sqrt(hidden)
    params[prefix + "w_x"] = Tensor(
        rng.uniform(-bound, bound, size=(d_in, 4 * hidden)), requires_grad=True
    )
    params[prefix + "w_h"] = Tensor(
        rng.uniform(-bound, bound, size=(hidden, 4 * hidden)), requires_grad=True
    )
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0  # forget gate opens at start
    params[prefix + "bias"] = Tensor(bias, requires_grad=True)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W + b with x shaped (B, D_in) and W shaped (D_in, D_out)."""
    return add(matmul(x, weight), bias)


def residual_block(x: Tensor, params: LayerParams, prefix: str = "", stride: int = 1) -> Tensor:
    """Two 3x3 convolutions with a skip connection.

    The skip path is the identity when the spatial size and channel count
    are unchanged; otherwise a "<prefix>proj" 1x1 convolution must exist in
    params to reshape the shortcut. Layout: relu(conv2(relu(conv1(x))) + skip).
    """
    w1 = params[prefix + "conv1.weight"]
    y = conv2d(x, w1, params[prefix + "conv1.bias"], stride=stride, padding=1)
    y = relu(y)
    y = conv2d(y, params[prefix + "conv2.weight"], params[prefix + "conv2.bias"], stride=1, padding=1)

    proj_key = prefix + "proj.weight"
    if proj_key in params:
        shortcut = conv2d(x, params[proj_key], params[prefix + "proj.bias"], stride=stride, padding=0)
    else:
        if stride != 1 or x.shape[1] != w1.shape[0]:
            raise ShapeError(
                f"residual block '{prefix}' changes shape {x.shape} -> "
                f"({x.shape[0]}, {w1.shape[0]}, ...) with stride {stride} but has no "
                f"projection shortcut"
            )
        shortcut = x
    return relu(add(y, shortcut))


@dataclass
class LstmState:
    """Recurrent state: hidden h and cell c, both shaped (B, H)."""

    h: Tensor
    c: Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"LSTM state shapes differ: h {self.h.shape} vs c {self.c.shape}")


def zero_state(batch: int, hidden: int) -> LstmState:
    return LstmState(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def lstm_cell(x: Tensor, state: LstmState, params: LayerParams, prefix: str = "") -> tuple[Tensor, LstmState]:
    """One LSTM step.

    Gates are slices of a single fused affine map, ordered (input, forget,
    candidate, output):

        i = sigmoid(.), f = sigmoid(.), g = tanh(.), o = sigmoid(.)
        c' = f * c + i * g
        h' = o * tanh(c')

    Returns (h', new state).
    """
    w_x = params[prefix + "w_x"]
    w_h = params[prefix + "w_h"]
    bias = params[prefix + "bias"]
    hidden = w_h.shape[0]
    if x.ndim != 2:
        raise ShapeError(f"lstm_cell input must be (B, D), got {x.shape}")
    if state.h.shape[0] != x.shape[0] or state.h.shape[1] != hidden:
        raise ShapeError(
            f"lstm_cell state shape {state.h.shape} does not match batch {x.shape[0]} "
            f"and hidden size {hidden}"
        )

    z = add(add(matmul(x, w_x), matmul(state.h, w_h)), bias)
    gate_i = sigmoid(tslice(z, (slice(None), slice(0, hidden))))
    gate_f = sigmoid(tslice(z, (slice(None), slice(hidden, 2 * hidden))))
    cand = tanh(tslice(z, (slice(None), slice(2 * hidden, 3 * hidden))))
    gate_o = sigmoid(tslice(z, (slice(None), slice(3 * hidden, 4 * hidden))))

    c_new = add(mul(gate_f, state.c), mul(gate_i, cand))
    h_new = mul(gate_o, tanh(c_new))
    return h_new, LstmState(h_new, c_new)


def save_params(path, params: LayerParams) -> None:
    """Write parameters to a flat binary container; bit-exact round trip.

    Layout: magic 'DLPC', uint32 version, uint32 entry count; then for each
    entry (sorted by path for a canonical byte stream): uint32 path length,
    utf-8 path, uint32 rank, int64 dims, raw little-endian float64 data.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f8")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}q", *data.shape))
            fh.write(data.tobytes())


def load_params(path) -> LayerParams:
    """Read a parameter container written by save_params."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint (bad magic {blob[:4]!r})")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    params: LayerParams = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}q", blob, offset)
        offset += 8 * rank
        n_vals = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob, dtype="<f8", count=n_vals, offset=offset).reshape(dims)
        offset += 8 * n_vals
        params[name] = Tensor(data.astype(np.float64), requires_grad=True)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after last entry")
    return params
