"""MLP model container and a transcript-emitting inference engine.

The inference path mirrors the embedded schedule: for each neuron, inputs
are consumed in ascending index order with a single-precision multiply
followed by a single-precision add (no FMA), the optional bias is added
after the weighted sum, and ReLU is the branch-free masked form.
Neurons are evaluated top to bottom, layers front to back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatchError, OutOfModelError
from .fp32 import bits_to_float, float_to_bits

RELU = "relu"
NONE = "none"

KIND_PRODUCT = "product"
KIND_ACCUMULATOR = "accumulator"
KIND_BIAS_ACCUMULATOR = "bias-accumulator"
KIND_ACTIVATION = "activation-output"


def _check_usual_case(arr: np.ndarray, what: str) -> None:
    """Reject non-finite, subnormal-nonzero patterns (exponent 0 with
    mantissa != 0) and exponent 255."""
    u = arr.astype(np.float32).view(np.uint32)
    e = (u >> np.uint32(23)) & np.uint32(0xFF)
    m = u & np.uint32(0x7FFFFF)
    bad = (e == 255) | ((e == 0) & (m != 0))
    if np.any(bad):
        raise OutOfModelError(f"{what} contains non-normalized/non-finite values")


@dataclass
class LayerParams:
    weights: np.ndarray  # (n_out, n_in) float32
    biases: np.ndarray  # (n_out,) float32
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.biases = np.asarray(self.biases, dtype=np.float32)
        if self.weights.ndim != 2:
            raise DimensionMismatchError("weights must be a 2-d matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise DimensionMismatchError(
                f"biases shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} neurons"
            )
        if self.activation not in (RELU, NONE):
            raise ValueError(f"unsupported activation {self.activation!r}")
        _check_usual_case(self.weights, "weights")
        _check_usual_case(self.biases, "biases")

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]


@dataclass
class MlpModel:
    layers: list[LayerParams] = field(default_factory=list)
    # When True the accumulator starts at the bias instead of 0.  Kept for
    # completeness of the schedule description; the attack targets the
    # zero-initialized variant.
    bias_first: bool = False

    def __post_init__(self):
        if not self.layers:
            raise DimensionMismatchError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.n_in != prev.n_out:
                raise DimensionMismatchError(
                    f"layer dims do not chain: {prev.n_out} -> {nxt.n_in}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def shape(self) -> list[int]:
        return [l.n_out for l in self.layers]


class IntermediateValue(NamedTuple):
    kind: str
    layer: int
    neuron: int
    input_index: int | None
    value: float


def relu_constant_time(v: float) -> float:
    """Branch-free ReLU: AND the bit pattern with an all-ones/all-zero mask
    derived from (v > 0.0).  Matches the embedded implementation bit for bit
    (note -0.0 masks to +0.0)."""
    sign = 1 if v > 0.0 else 0
    mask = 0xFFFFFFFF if sign else 0
    return bits_to_float(float_to_bits(v) & mask)


def _relu_batch(v: np.ndarray) -> np.ndarray:
    # np.where with a +0.0 constant reproduces the masked semantics,
    # including -0.0 -> +0.0.
    return np.where(v > 0, v, np.float32(0.0)).astype(np.float32)


def infer(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, list[IntermediateValue]]:
    """Layer-by-layer evaluation with float32 rounding at every multiply and
    add, recording each intermediate value in schedule order."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape != (model.input_dim,):
        raise DimensionMismatchError(
            f"input shape {x.shape} does not match model input dim {model.input_dim}"
        )
    transcript: list[IntermediateValue] = []
    current = x
    for li, layer in enumerate(model.layers):
        out = np.zeros(layer.n_out, dtype=np.float32)
        for ni in range(layer.n_out):
            bias = layer.biases[ni]
            acc = bias if model.bias_first else np.float32(0.0)
            for ii in range(layer.n_in):
                prod = np.float32(layer.weights[ni, ii] * current[ii])
                acc = np.float32(acc + prod)
                transcript.append(
                    IntermediateValue(KIND_PRODUCT, li, ni, ii, float(prod))
                )
                transcript.append(
                    IntermediateValue(KIND_ACCUMULATOR, li, ni, ii, float(acc))
                )
            if not model.bias_first and bias != 0:
                acc = np.float32(acc + bias)
                transcript.append(
                    IntermediateValue(KIND_BIAS_ACCUMULATOR, li, ni, None, float(acc))
                )
            if layer.activation == RELU:
                acc = np.float32(relu_constant_time(float(acc)))
            out[ni] = acc
            transcript.append(
                IntermediateValue(KIND_ACTIVATION, li, ni, None, float(out[ni]))
            )
        current = out
    return current, transcript


def batch_intermediates(
    model: MlpModel, X: np.ndarray
) -> list[tuple[tuple, np.ndarray]]:
    """Vectorized transcript over a batch of inputs.

    Returns [(key, values)] in transcript order, where key is
    (kind, layer, neuron, input_index) and values is a float32 array with one
    entry per input row.  Agrees elementwise with infer()'s transcript.
    """
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            f"input batch shape {X.shape} does not match input dim {model.input_dim}"
        )
    out: list[tuple[tuple, np.ndarray]] = []
    current = X
    for li, layer in enumerate(model.layers):
        nxt = np.zeros((X.shape[0], layer.n_out), dtype=np.float32)
        for ni in range(layer.n_out):
            prods = current * layer.weights[ni][None, :]  # float32, one rounding
            if model.bias_first:
                accs = np.empty_like(prods)
                acc = np.full(X.shape[0], layer.biases[ni], dtype=np.float32)
                for ii in range(layer.n_in):
                    acc = acc + prods[:, ii]
                    accs[:, ii] = acc
            else:
                # ufunc accumulate applies float32 adds strictly in order
                accs = np.add.accumulate(prods, axis=1, dtype=np.float32)
            for ii in range(layer.n_in):
                out.append(((KIND_PRODUCT, li, ni, ii), prods[:, ii].copy()))
                out.append(((KIND_ACCUMULATOR, li, ni, ii), accs[:, ii].copy()))
            final = accs[:, -1]
            if not model.bias_first and layer.biases[ni] != 0:
                final = (final + layer.biases[ni]).astype(np.float32)
                out.append(((KIND_BIAS_ACCUMULATOR, li, ni, None), final.copy()))
            if layer.activation == RELU:
                final = _relu_batch(final)
            nxt[:, ni] = final
            out.append(((KIND_ACTIVATION, li, ni, None), nxt[:, ni].copy()))
        current = nxt
    return out


def forward(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Batched outputs only (float32 schedule identical to infer)."""
    X = np.asarray(X, dtype=np.float32)
    current = X
    for layer in model.layers:
        nxt = np.zeros((X.shape[0], layer.n_out), dtype=np.float32)
        for ni in range(layer.n_out):
            prods = current * layer.weights[ni][None, :]
            if model.bias_first:
                acc = np.full(X.shape[0], layer.biases[ni], dtype=np.float32)
                for ii in range(layer.n_in):
                    acc = acc + prods[:, ii]
            else:
                acc = np.add.accumulate(prods, axis=1, dtype=np.float32)[:, -1]
                if layer.biases[ni] != 0:
                    acc = (acc + layer.biases[ni]).astype(np.float32)
            if layer.activation == RELU:
                acc = _relu_batch(acc)
            nxt[:, ni] = acc
        current = nxt
    return current


def _hex_matrix(a: np.ndarray) -> list:
    u = a.astype(np.float32).view(np.uint32)
    return np.vectorize(lambda x: f"{x:08x}")(u).tolist()


def _unhex(h) -> np.ndarray:
    arr = np.array(
        [[int(c, 16) for c in row] for row in h]
        if isinstance(h[0], list)
        else [int(c, 16) for c in h],
        dtype=np.uint32,
    )
    return arr.view(np.float32)


def save_model(model: MlpModel, path) -> None:
    """JSON model file: decimal weights for readability, hex bit patterns as
    the authoritative values."""
    doc = {
        "bias_first": model.bias_first,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "weights_hex": _hex_matrix(layer.weights),
                "biases": layer.biases.tolist(),
                "biases_hex": _hex_matrix(layer.biases),
                "activation": layer.activation,
            }
            for layer in model.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        doc = json.load(fh)
    layers = []
    for spec in doc["layers"]:
        if "weights_hex" in spec:
            w = _unhex(spec["weights_hex"])
            b = _unhex(spec["biases_hex"])
        else:
            w = np.asarray(spec["weights"], dtype=np.float32)
            b = np.asarray(spec["biases"], dtype=np.float32)
        layers.append(LayerParams(w, b, spec.get("activation", RELU)))
    return MlpModel(layers=layers, bias_first=doc.get("bias_first", False))
