"""Synthetic leakage traces from inference intermediate values.

Protocol, common to all generators: the sample carrying an intermediate
value equals its 32-bit Hamming weight, every other sample is uniform
integer filler over [0, 32] (same scale as a Hamming weight), and Gaussian
noise is added to the entire trace.  Averaging over repeated executions is
modeled by dividing the noise sigma by sqrt(averaging_factor); a raw-repeat
mode draws and averages the individual executions instead.

Inputs are attacker-chosen: uniform over [0, 4] in "nonneg" mode (hidden
layers, post-ReLU), uniform over [-4, 4] in "signed" mode (input layer),
and log-uniform over [3e5, 1e9] in "wide" mode.  Wide inputs make every
weighted sum so large that its float32 ULP exceeds the low-order bias
bits: the bias is physically truncated out of the accumulator by mantissa
alignment, while the multiplicative weight leakage is unaffected by the
scale.
"""

from __future__ import annotations

import numpy as np

from .fp32 import hw32
from .mlp import MlpModel, batch_intermediates
from .traceset import SYNTHETIC, LeakagePlacement, LeakageSpec, TraceSet

INPUT_MODES = ("nonneg", "signed", "wide")
FILLER_MAX = 32
WIDE_LOW, WIDE_HIGH = 3e5, 1e9


def _draw_inputs(rng, n, d, input_mode):
    if input_mode == "nonneg":
        return rng.uniform(0.0, 4.0, size=(n, d)).astype(np.float32)
    if input_mode == "signed":
        return rng.uniform(-4.0, 4.0, size=(n, d)).astype(np.float32)
    if input_mode == "wide":
        mag = np.exp(rng.uniform(np.log(WIDE_LOW), np.log(WIDE_HIGH),
                                 size=(n, d)))
        return mag.astype(np.float32)
    raise ValueError(f"input_mode must be one of {INPUT_MODES}, got {input_mode!r}")


def _noise(rng, shape, noise_sigma, averaging_factor, raw_repeats):
    if noise_sigma == 0:
        return np.zeros(shape)
    if averaging_factor == 1:
        return rng.normal(0.0, noise_sigma, size=shape)
    if raw_repeats:
        reps = rng.normal(0.0, noise_sigma, size=(averaging_factor,) + shape)
        return reps.mean(axis=0)
    return rng.normal(0.0, noise_sigma / np.sqrt(averaging_factor), size=shape)


def _assemble(rng, leak_columns, n_traces, T, noise_sigma, averaging_factor,
              raw_repeats):
    """Filler everywhere, HW of the leaking values at their samples, noise on
    top.  leak_columns: {sample_index: float32 value array of length n_traces}."""
    traces = rng.integers(0, FILLER_MAX + 1, size=(n_traces, T)).astype(np.float64)
    for sample, values in leak_columns.items():
        traces[:, sample] = hw32(values.view(np.uint32)).astype(np.float64)
    traces += _noise(rng, (n_traces, T), noise_sigma, averaging_factor, raw_repeats)
    return traces.astype(np.float32)


def _uniform_positions(n_leaks: int, T: int) -> list[int]:
    """n_leaks strictly increasing samples spread uniformly over [0, T)."""
    pos = np.round(np.linspace(0, T - 1, n_leaks + 2)[1:-1]).astype(int)
    if len(set(pos.tolist())) != n_leaks:
        raise ValueError(f"trace length {T} too short for {n_leaks} leak samples")
    return pos.tolist()


def simulate_multiplication_set(
    w: float,
    n_traces: int,
    T: int = 3,
    noise_sigma: float = 0.0,
    seed: int | None = None,
    input_mode: str = "nonneg",
    averaging_factor: int = 1,
    raw_repeats: bool = False,
) -> TraceSet:
    """Single secret multiplication: the middle sample leaks HW(w*x)."""
    if n_traces < 1:
        raise ValueError("n_traces must be >= 1")
    if T < 3 or T % 2 == 0:
        raise ValueError("T must be odd and >= 3 so the middle sample is defined")
    rng = np.random.default_rng(seed)
    x = _draw_inputs(rng, n_traces, 1, input_mode)
    mid = T // 2
    prods = (np.float32(w) * x[:, 0]).astype(np.float32)
    traces = _assemble(rng, {mid: prods}, n_traces, T, noise_sigma,
                       averaging_factor, raw_repeats)
    spec = LeakageSpec((LeakagePlacement("product", 0, 0, 0, mid),))
    return TraceSet(traces=traces, inputs=x, source=SYNTHETIC, seed=seed,
                    leakage_spec=spec, averaging_factor=averaging_factor)


def simulate_neuron_set(
    weights,
    bias: float | None,
    n_traces: int,
    T: int = 50,
    noise_sigma: float = 0.0,
    input_mode: str = "nonneg",
    seed: int | None = None,
    averaging_factor: int = 1,
    raw_repeats: bool = False,
) -> TraceSet:
    """One neuron: accumulator after each product, optional bias accumulator,
    then the ReLU output, uniformly placed over the trace."""
    weights = np.asarray(weights, dtype=np.float32)
    m = weights.size
    if m < 1:
        raise ValueError("need at least one weight")
    n_leaks = m + 1 + (1 if bias is not None else 0)
    if T < n_leaks + 1:
        raise ValueError(f"T={T} too short for {n_leaks} leak samples")
    rng = np.random.default_rng(seed)
    X = _draw_inputs(rng, n_traces, m, input_mode)

    prods = X * weights[None, :]
    accs = np.add.accumulate(prods, axis=1, dtype=np.float32)
    final = accs[:, -1]
    placements = []
    positions = _uniform_positions(n_leaks, T)
    leak_columns = {}
    for j in range(m):
        leak_columns[positions[j]] = accs[:, j]
        placements.append(LeakagePlacement("accumulator", 0, 0, j, positions[j]))
    k = m
    if bias is not None:
        final = (final + np.float32(bias)).astype(np.float32)
        leak_columns[positions[k]] = final
        placements.append(
            LeakagePlacement("bias-accumulator", 0, 0, None, positions[k])
        )
        k += 1
    relu_out = np.where(final > 0, final, np.float32(0.0)).astype(np.float32)
    leak_columns[positions[k]] = relu_out
    placements.append(LeakagePlacement("activation-output", 0, 0, None, positions[k]))

    traces = _assemble(rng, leak_columns, n_traces, T, noise_sigma,
                       averaging_factor, raw_repeats)
    return TraceSet(traces=traces, inputs=X, source=SYNTHETIC, seed=seed,
                    leakage_spec=LeakageSpec(tuple(placements)),
                    averaging_factor=averaging_factor)


def simulate_layer_set(
    weights,
    n_traces: int,
    T: int = 50,
    noise_sigma: float = 0.0,
    input_mode: str = "nonneg",
    seed: int | None = None,
    averaging_factor: int = 1,
    raw_repeats: bool = False,
) -> TraceSet:
    """One fully-connected layer, neurons computed top to bottom: per neuron
    the accumulator after each product and the ReLU output, all leak samples
    uniformly placed over the trace in computation order."""
    W = np.asarray(weights, dtype=np.float32)
    if W.ndim != 2:
        raise ValueError("weights must be (n_neurons, n_inputs)")
    n_out, m = W.shape
    n_leaks = n_out * (m + 1)
    if T < n_leaks + 1:
        raise ValueError(f"T={T} too short for {n_leaks} leak samples")
    rng = np.random.default_rng(seed)
    X = _draw_inputs(rng, n_traces, m, input_mode)
    positions = _uniform_positions(n_leaks, T)
    leak_columns = {}
    placements = []
    k = 0
    for ni in range(n_out):
        prods = X * W[ni][None, :]
        accs = np.add.accumulate(prods, axis=1, dtype=np.float32)
        for j in range(m):
            leak_columns[positions[k]] = accs[:, j]
            placements.append(
                LeakagePlacement("accumulator", 0, ni, j, positions[k])
            )
            k += 1
        relu_out = np.where(accs[:, -1] > 0, accs[:, -1], np.float32(0.0))
        leak_columns[positions[k]] = relu_out.astype(np.float32)
        placements.append(
            LeakagePlacement("activation-output", 0, ni, None, positions[k])
        )
        k += 1
    traces = _assemble(rng, leak_columns, n_traces, T, noise_sigma,
                       averaging_factor, raw_repeats)
    return TraceSet(traces=traces, inputs=X, source=SYNTHETIC, seed=seed,
                    leakage_spec=LeakageSpec(tuple(placements)),
                    averaging_factor=averaging_factor)


def simulate_model_set(
    model: MlpModel,
    n_traces: int,
    samples_per_value: int = 3,
    noise_sigma: float = 0.0,
    input_mode: str = "nonneg",
    seed: int | None = None,
    averaging_factor: int = 1,
    raw_repeats: bool = False,
) -> TraceSet:
    """Full inference: one leak sample per transcript intermediate value, laid
    out in transcript order with samples_per_value spacing."""
    if samples_per_value < 1:
        raise ValueError("samples_per_value must be >= 1")
    rng = np.random.default_rng(seed)
    X = _draw_inputs(rng, n_traces, model.input_dim, input_mode)
    values = batch_intermediates(model, X)
    T = samples_per_value * len(values)
    leak_columns = {}
    placements = []
    for k, (key, vals) in enumerate(values):
        kind, layer, neuron, input_index = key
        sample = k * samples_per_value + (samples_per_value - 1) // 2
        leak_columns[sample] = vals
        placements.append(LeakagePlacement(kind, layer, neuron, input_index, sample))
    traces = _assemble(rng, leak_columns, n_traces, T, noise_sigma,
                       averaging_factor, raw_repeats)
    return TraceSet(traces=traces, inputs=X, source=SYNTHETIC, seed=seed,
                    leakage_spec=LeakageSpec(tuple(placements)),
                    averaging_factor=averaging_factor)
