"""Two-step iterative weight extraction and its neuron/layer/model drivers.

Step 1 ranks the coarse exponent-x-mantissa-MSB grid by correlation; Step 2
repeatedly re-samples narrow linear intervals around the N best hypotheses
with shrinking interval sizes.  Neuron weights are recovered sequentially
through the accumulator chain, relative signs ride along as +/- hypothesis
pairs, and the global sign of a neuron is settled against its ReLU-output
leak.  Layers are walked with a monotonic time-sample window; models are
walked layer by layer, re-simulating recovered activations as the next
layer's inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cema import (CHAMPION_FRACTION, cema_rank, hw_rows, monotonic_window,
                   pearson_column)
from .errors import (
    ConfigError,
    DegeneratePredictionError,
    ExhaustedWindowError,
    ExtractionAbortError,
)
from .fp32 import HypothesisGrid, step1_grid
from .traceset import TraceSet

DEFAULT_THRESHOLDS = tuple(10.0 ** -k for k in range(1, 9))


@dataclass
class ExtractionConfig:
    """Attack parameters: initial interval [C-d0/2, C+d0/2], shrink factors
    lambda1 (first refinement) and lambda2 (later ones), m refinement
    iterations, N kept hypotheses, K linear samples per refinement set."""

    d0: float = 5.0
    C: float = 2.5
    lambda1: float = 100.0
    lambda2: float = 50.0
    m: int = 3
    N: int = 5
    K: int = 201
    sign_margin: float = 0.02  # relative |r| gap below which signs are ambiguous
    # Absolute |r| floor for the global-sign decision.  A dead ReLU leaves a
    # constant activation column, and the best remaining correlation is
    # filler noise (~1/sqrt(N)); below the floor the sign stays unresolved
    # instead of keying off that noise.
    sign_floor: float = 0.2
    # Standouts within this relative |r| margin of the top are resolved to the
    # earliest leak sample.  Wide enough to cover the systematic per-value
    # variance differences between legitimate standouts (roughly 0.95..1.0 of
    # the top), far above anything spurious.
    assoc_margin: float = 0.1
    min_final_corr: float | None = None  # propagated-error abort bound

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.d0 > 0:
            raise ConfigError(f"d0 must be > 0, got {self.d0}")
        if not (self.lambda1 > self.lambda2 > 1):
            raise ConfigError(
                f"need lambda1 > lambda2 > 1, got {self.lambda1}, {self.lambda2}"
            )
        if self.m < 0:
            raise ConfigError("m must be >= 0")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if not 0 <= self.sign_margin < 1:
            raise ConfigError("sign_margin must be in [0, 1)")
        if not 0 <= self.sign_floor < 1:
            raise ConfigError("sign_floor must be in [0, 1)")

    def to_json(self) -> dict:
        return {
            "d0": self.d0, "C": self.C, "lambda1": self.lambda1,
            "lambda2": self.lambda2, "m": self.m, "N": self.N, "K": self.K,
            "sign_margin": self.sign_margin, "sign_floor": self.sign_floor,
            "assoc_margin": self.assoc_margin,
            "min_final_corr": self.min_final_corr,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExtractionConfig":
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigError(f"unknown extraction config fields: {sorted(unknown)}")
        return cls(**known)


@dataclass
class IterationRecord:
    interval: float  # hypothesis interval size used for this ranking
    kept_values: np.ndarray
    kept_abs_corr: np.ndarray
    kept_sample: np.ndarray


@dataclass
class ValueExtraction:
    value: float
    leak_sample: int
    best_corr: float
    best_abs_corr: float
    iterations: list[IterationRecord]


def _as_traces(ts) -> np.ndarray:
    return ts.traces if isinstance(ts, TraceSet) else np.asarray(ts)


def extract_value(
    ts,
    predict,
    cfg: ExtractionConfig,
    window,
    signed: bool = False,
    grid: HypothesisGrid | None = None,
    prefer_earliest: bool = False,
) -> ValueExtraction:
    """Step 1 + m Step-2 iterations for one secret value.

    With signed=True both signs of every hypothesis enter the pool.  The
    previously kept hypotheses are carried into each refinement pool so a
    hypothesis can never be lost to interval sampling.

    When an input feeds several sequentially computed neurons, more than one
    hypothesis stands out (one per neuron).  With prefer_earliest=True the
    final pick is the champion of the earliest strong sample (champion
    within CHAMPION_FRACTION of the global top): under monotonic window
    claiming the earliest remaining strong leak always belongs to the value
    currently under attack.
    """
    traces = _as_traces(ts)
    if grid is None:
        grid = step1_grid(cfg.C, cfg.d0)
    cand = grid.values
    if signed:
        cand = np.unique(np.concatenate([-cand[::-1], cand]))

    def in_domain(pool):
        # refinement around a small candidate can cross zero; negative
        # hypotheses are out of the search domain in unsigned mode (on a
        # single-sign accumulator a mirrored value correlates identically)
        return pool if signed else pool[pool > 0]
    # candidates closer together than half the interval refined around them
    # next are redundant; the separation keeps N distinct regions in play
    sep = cfg.d0 / (2 * cfg.lambda1)
    res = cema_rank(cand, predict, traces, window, cfg.N, sample_champions=True,
                    min_separation=sep)
    iterations = [
        IterationRecord(cfg.d0, res.values.copy(), res.best_abs_corr.copy(),
                        res.best_sample.copy())
    ]
    for i in range(1, cfg.m + 1):
        d = cfg.d0 / (cfg.lambda1 * cfg.lambda2 ** (i - 1))
        kept = res.values.astype(np.float64)
        sets = [np.linspace(v - d / 2, v + d / 2, cfg.K) for v in kept]
        sets.append(kept)  # keep the centers exactly
        pool = in_domain(np.unique(np.concatenate(sets).astype(np.float32)))
        sep = d / (2 * cfg.lambda2)
        res = cema_rank(pool, predict, traces, window, cfg.N,
                        sample_champions=True, min_separation=sep)
        iterations.append(
            IterationRecord(d, res.values.copy(), res.best_abs_corr.copy(),
                            res.best_sample.copy())
        )
    if cfg.m > 0:
        # The correlation spike at an exact value is only a few float32 ULP
        # wide, while the last linear set lands within about half its grid
        # spacing.  Polish every kept candidate to its local optimum at full
        # float32 resolution so candidates are compared spike top against
        # spike top.
        spacing = iterations[-1].interval / (cfg.K - 1)
        pools = [res.values.astype(np.float64)]
        for v in res.values.astype(np.float64):
            ulp = float(np.spacing(np.float32(abs(v))))
            steps = int(min(math.ceil(spacing / ulp), 1024))
            pools.append(v + np.arange(-steps, steps + 1, dtype=np.float64) * ulp)
        pool = in_domain(np.unique(np.concatenate(pools).astype(np.float32)))
        res = cema_rank(pool, predict, traces, window, cfg.N,
                        sample_champions=True, min_separation=sep)
        iterations.append(
            IterationRecord(spacing, res.values.copy(), res.best_abs_corr.copy(),
                            res.best_sample.copy())
        )
        # A power-of-two multiple of a value predicts nearly the same Hamming
        # weights and can crowd the true binade out of the kept set under
        # noise; when the target values fit one aligned block of eight
        # exponent fields the 2^(+-8) copies even tie exactly.  Sweep the
        # binades of every kept candidate, but never past the search
        # interval's upper bound: the tie-break toward the larger value only
        # resolves an exact tie if the copies above the true value stay out.
        scales = np.float32(2.0) ** np.arange(-9, 10, dtype=np.int32)
        pool = np.unique((res.values[:, None] * scales[None, :]).ravel())
        pool = in_domain(pool[np.isfinite(pool) & (pool != 0)])
        hi = cfg.C + cfg.d0 / 2
        pool = np.unique(np.concatenate([res.values, pool[np.abs(pool) <= hi]]))
        res = cema_rank(pool, predict, traces, window, cfg.N,
                        sample_champions=True, min_separation=sep)
        iterations.append(
            IterationRecord(spacing, res.values.copy(), res.best_abs_corr.copy(),
                            res.best_sample.copy())
        )
    pick = 0
    if prefer_earliest and len(res) > 1:
        strong = res.best_abs_corr >= CHAMPION_FRACTION * res.best_abs_corr[0]
        cand = np.flatnonzero(strong)
        s_min = res.best_sample[cand].min()
        # earliest strong sample wins; within that sample keep the |r| order
        pick = int(cand[res.best_sample[cand] == s_min][0])
    best_abs = float(res.best_abs_corr[pick])
    if cfg.min_final_corr is not None and best_abs < cfg.min_final_corr:
        raise ExtractionAbortError(
            f"final correlation {best_abs:.4f} below bound {cfg.min_final_corr}"
        )
    return ValueExtraction(
        value=float(res.values[pick]),
        leak_sample=int(res.best_sample[pick]),
        best_corr=float(res.best_corr[pick]),
        best_abs_corr=best_abs,
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# window planning


class SearchWindows:
    """Pure monotonic search: every sample after the last claimed leak."""

    # windows also contain later targets' leaks, so the earliest strong
    # sample (not the global best) belongs to the current target
    exclusive = False

    def __init__(self, n_samples: int, start_prev: int = -1):
        self.n_samples = n_samples
        self.prev = start_prev

    def window(self, key=None) -> np.ndarray:
        return monotonic_window(self.prev, self.n_samples)

    def advance(self, key, found_sample: int) -> None:
        self.prev = max(self.prev, int(found_sample))

    def skip(self, key) -> None:
        pass


class ProfiledWindows:
    """Windows bounded by temporal profiling: each target's window runs from
    just after the previous claimed sample up to the target's profiled leak
    sample (worst-case profiling of the synthetic generator, or an external
    profiling file for imported traces)."""

    # other targets' profiled samples are filtered out, so every leak left
    # in a window carries the current target's value
    exclusive = True

    def __init__(self, placements, n_samples: int, start_prev: int = -1):
        self.samples = {
            (p.kind, p.layer, p.neuron, p.input_index): p.sample_index
            for p in placements
        }
        self.n_samples = n_samples
        self.prev = start_prev

    def window(self, key) -> np.ndarray:
        if key not in self.samples:
            raise KeyError(f"no profiled leak sample for {key}")
        hi = self.samples[key]
        if hi <= self.prev:
            raise ExhaustedWindowError(
                f"profiled sample {hi} for {key} not after claimed sample {self.prev}"
            )
        win = np.arange(self.prev + 1, hi + 1, dtype=np.intp)
        # other targets' profiled samples can only carry other values (for
        # instance the product right before an accumulation); drop them so
        # they cannot masquerade as this target's leak
        others = {s for k, s in self.samples.items() if k != key}
        if others:
            win = win[~np.isin(win, sorted(others))]
        if win.size == 0:
            raise ExhaustedWindowError(f"no usable samples left for {key}")
        return win

    def advance(self, key, found_sample: int) -> None:
        # Claim the profiled sample even when an earlier duplicate (e.g. the
        # product before the first accumulation) won the tie-break.
        self.prev = max(self.prev, self.samples[key])

    def skip(self, key) -> None:
        if key in self.samples:
            self.prev = max(self.prev, self.samples[key])

    def last_sample_of_layer(self, layer: int) -> int:
        return max(s for (k, l, n, i), s in self.samples.items() if l == layer)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ParameterRecord:
    role: str  # "weight" or "bias"
    layer: int
    neuron: int
    index: int | None
    recovered: float
    leak_sample: int | None
    best_corr: float | None
    dead: bool = False
    ambiguous_sign: bool = False
    true_value: float | None = None
    eps_rr: float | None = None
    sign_match: bool | None = None

    def key(self):
        return (self.role, self.layer, self.neuron, self.index)

    def set_truth(self, true_value: float) -> None:
        self.true_value = float(true_value)
        if math.isnan(self.recovered):
            self.eps_rr = float("inf")
            self.sign_match = False
        else:
            self.eps_rr = abs(self.true_value - self.recovered)
            self.sign_match = (self.true_value >= 0) == (self.recovered >= 0)


@dataclass
class ExtractionReport:
    records: list[ParameterRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def assign_truth(self, truth: dict) -> None:
        """truth maps (role, layer, neuron, index) -> true value."""
        for rec in self.records:
            if rec.key() in truth:
                rec.set_truth(truth[rec.key()])

    def select(self, role: str | None = None, sign_correct_only: bool = False):
        recs = [r for r in self.records if role is None or r.role == role]
        if sign_correct_only:
            recs = [r for r in recs if r.sign_match]
        return recs

    def success_rates(
        self,
        thresholds=DEFAULT_THRESHOLDS,
        role: str = "weight",
        sign_correct_only: bool = False,
    ) -> dict[float, float]:
        """Percent of parameters with eps_rr <= threshold; requires truth."""
        recs = self.select(role, sign_correct_only)
        if not recs:
            return {t: float("nan") for t in thresholds}
        eps = np.array([r.eps_rr if r.eps_rr is not None else np.inf for r in recs])
        return {t: 100.0 * float(np.mean(eps <= t)) for t in thresholds}

    def sign_rate(self, role: str = "weight") -> float:
        recs = [r for r in self.records if r.role == role and r.sign_match is not None]
        if not recs:
            return float("nan")
        return 100.0 * sum(r.sign_match for r in recs) / len(recs)

    def to_json(self) -> dict:
        return {
            "meta": self.meta,
            "records": [
                {
                    "role": r.role, "layer": r.layer, "neuron": r.neuron,
                    "index": r.index, "recovered": r.recovered,
                    "leak_sample": r.leak_sample, "best_corr": r.best_corr,
                    "dead": r.dead, "ambiguous_sign": r.ambiguous_sign,
                    "true_value": r.true_value, "eps_rr": r.eps_rr,
                    "sign_match": r.sign_match,
                }
                for r in self.records
            ],
        }


# ---------------------------------------------------------------------------
# neuron-level attack


@dataclass
class NeuronExtraction:
    weights: np.ndarray  # float32, NaN where dead
    bias: float | None
    records: list[ParameterRecord]
    ambiguous_sign: bool
    flipped: bool
    activation_sample: int | None


def _series_best(series: np.ndarray, traces: np.ndarray, window,
                 earliest_margin: float = 0.0) -> tuple:
    """(best |r|, sample) of the Hamming weights of one known float32 series
    over the window, or (None, None) for a constant series.  Among samples
    within the relative margin of the top score the earliest one is
    reported."""
    try:
        h = hw_rows(np.asarray(series, dtype=np.float32)[None, :])[0]
        r = pearson_column(h, traces, window)
    except DegeneratePredictionError:
        return None, None
    a = np.abs(r)
    top = float(a.max())
    i = int(np.argmax(a >= (1 - earliest_margin) * top))
    return float(a[i]), int(np.asarray(window)[i])


def _relu32(v: np.ndarray) -> np.ndarray:
    return np.where(v > 0, v, np.float32(0.0)).astype(np.float32)


def attack_neuron(
    traces: np.ndarray,
    X: np.ndarray,
    cfg: ExtractionConfig,
    signed: bool,
    with_bias: bool,
    windows,
    layer: int = 0,
    neuron: int = 0,
    grid: HypothesisGrid | None = None,
) -> NeuronExtraction:
    """Sequential weight recovery over the accumulator chain of one neuron.

    In signed mode every weight (including the first) carries a +/-
    hypothesis pair; with non-negative inputs the first weight's sign is
    unobservable, so the whole chain is recovered relative to one branch and
    the global assignment is settled by correlating both candidate
    ReLU-output series against the activation leak.
    """
    if grid is None:
        grid = step1_grid(cfg.C, cfg.d0)
    n, m = X.shape
    prefix = np.zeros(n, dtype=np.float32)
    weights = np.full(m, np.nan, dtype=np.float32)
    records: list[ParameterRecord] = []

    for j in range(m):
        xj = np.ascontiguousarray(X[:, j])
        key = ("accumulator", layer, neuron, j)
        if np.all(xj == xj[0]):
            # dead/constant input column: hypotheses only shift the
            # accumulator by a constant, so correlation cannot separate them
            windows.skip(key)
            records.append(ParameterRecord(
                role="weight", layer=layer, neuron=neuron, index=j,
                recovered=float("nan"), leak_sample=None, best_corr=None,
                dead=True,
            ))
            continue

        def predict(h, _prefix=prefix, _x=xj):
            return _prefix[None, :] + h[:, None] * _x[None, :]

        win = windows.window(key)
        ext = extract_value(traces, predict, cfg, win, signed=signed, grid=grid,
                            prefer_earliest=not windows.exclusive)
        weights[j] = np.float32(ext.value)
        prefix = (prefix + np.float32(ext.value) * xj).astype(np.float32)
        windows.advance(key, ext.leak_sample)
        records.append(ParameterRecord(
            role="weight", layer=layer, neuron=neuron, index=j,
            recovered=float(np.float32(ext.value)),
            leak_sample=ext.leak_sample, best_corr=ext.best_abs_corr,
        ))

    bias = None
    if with_bias:
        key = ("bias-accumulator", layer, neuron, None)

        def predict_bias(h, _prefix=prefix):
            return _prefix[None, :] + h[:, None]

        win = windows.window(key)
        ext = extract_value(traces, predict_bias, cfg, win, signed=True, grid=grid,
                            prefer_earliest=not windows.exclusive)
        bias = float(np.float32(ext.value))
        prefix = (prefix + np.float32(bias)).astype(np.float32)
        windows.advance(key, ext.leak_sample)
        records.append(ParameterRecord(
            role="bias", layer=layer, neuron=neuron, index=None,
            recovered=bias, leak_sample=ext.leak_sample,
            best_corr=ext.best_abs_corr,
        ))

    # global sign resolution against the activation-output leak
    key = ("activation-output", layer, neuron, None)
    ambiguous = False
    flipped = False
    act_sample = None
    try:
        win = windows.window(key)
    except (ExhaustedWindowError, KeyError):
        win = None
    if win is None or len(win) == 0:
        ambiguous = bool(signed or with_bias)  # sign cannot be resolved
    else:
        s_pos, smp_pos = _series_best(_relu32(prefix), traces, win,
                                      cfg.assoc_margin)
        if signed or with_bias:
            s_neg, smp_neg = _series_best(_relu32(-prefix), traces, win,
                                          cfg.assoc_margin)
            if s_pos is None and s_neg is None:
                ambiguous = True
            else:
                sp = s_pos if s_pos is not None else 0.0
                sn = s_neg if s_neg is not None else 0.0
                top = max(sp, sn)
                # no credible activation signal (dead ReLU leaves only
                # filler-noise correlation) leaves the global sign
                # unresolved just like a missing window does
                if top < cfg.sign_floor or abs(sp - sn) / top < cfg.sign_margin:
                    ambiguous = True
                # the better-correlating branch wins even inside the
                # ambiguous band; the flag reports the low confidence
                if sn > sp:
                    flipped = True
                    weights = -weights
                    if bias is not None:
                        bias = -bias
                    for rec in records:
                        if not rec.dead:
                            rec.recovered = -rec.recovered
                    act_sample = smp_neg
                else:
                    act_sample = smp_pos
        else:
            act_sample = smp_pos
        if act_sample is not None:
            windows.advance(key, act_sample)
        else:
            windows.skip(key)
    if ambiguous:
        for rec in records:
            rec.ambiguous_sign = True

    return NeuronExtraction(
        weights=weights, bias=bias, records=records,
        ambiguous_sign=ambiguous, flipped=flipped, activation_sample=act_sample,
    )


# ---------------------------------------------------------------------------
# public drivers


def extract_multiplication(ts: TraceSet, cfg: ExtractionConfig) -> ValueExtraction:
    """Recover the positive secret of a single-multiplication trace set."""
    x = np.ascontiguousarray(ts.inputs[:, 0])

    def predict(h):
        return h[:, None] * x[None, :]

    window = np.arange(ts.n_samples, dtype=np.intp)
    return extract_value(ts.traces, predict, cfg, window)


def extract_neuron(
    ts: TraceSet, n_inputs: int | None = None,
    cfg: ExtractionConfig | None = None, signed: bool = False,
) -> ExtractionReport:
    cfg = cfg or ExtractionConfig()
    m = n_inputs or ts.input_dim
    windows = SearchWindows(ts.n_samples)
    res = attack_neuron(ts.traces, ts.inputs[:, :m], cfg, signed,
                        with_bias=False, windows=windows)
    return ExtractionReport(records=res.records, meta={
        "mode": "neuron", "signed": signed, "ambiguous_sign": res.ambiguous_sign,
    })


def extract_bias_neuron(
    ts: TraceSet, n_inputs: int | None = None,
    cfg: ExtractionConfig | None = None, signed: bool = True,
) -> ExtractionReport:
    """Weights as in extract_neuron, then the bias from the final
    accumulation; weight and bias success rates are reported separately."""
    cfg = cfg or ExtractionConfig()
    m = n_inputs or ts.input_dim
    windows = SearchWindows(ts.n_samples)
    res = attack_neuron(ts.traces, ts.inputs[:, :m], cfg, signed,
                        with_bias=True, windows=windows)
    return ExtractionReport(records=res.records, meta={
        "mode": "bias-neuron", "signed": signed,
        "ambiguous_sign": res.ambiguous_sign,
    })


def extract_layer(
    ts: TraceSet, n_neurons: int, n_inputs: int | None = None,
    cfg: ExtractionConfig | None = None, signed: bool = False,
) -> ExtractionReport:
    """Neurons attacked top to bottom; the monotonic window guarantees an
    already-claimed leak sample is never re-associated."""
    cfg = cfg or ExtractionConfig()
    m = n_inputs or ts.input_dim
    grid = step1_grid(cfg.C, cfg.d0)
    windows = SearchWindows(ts.n_samples)
    records: list[ParameterRecord] = []
    ambiguous = []
    X = ts.inputs[:, :m]
    for ni in range(n_neurons):
        res = attack_neuron(ts.traces, X, cfg, signed, with_bias=False,
                            windows=windows, layer=0, neuron=ni, grid=grid)
        records.extend(res.records)
        ambiguous.append(res.ambiguous_sign)
    return ExtractionReport(records=records, meta={
        "mode": "layer", "signed": signed, "ambiguous_neurons": ambiguous,
    })


def extract_model(
    ts: TraceSet,
    shape: list[int],
    cfg: ExtractionConfig | None = None,
    signed: bool = False,
    preset_layers: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
    placements=None,
) -> tuple[ExtractionReport, list[tuple[np.ndarray, np.ndarray]]]:
    """Front-to-back model attack: each recovered layer re-simulates the
    activations that feed the next layer's predictions.

    Per-value leak windows come from the trace-set metadata when present
    (synthetic sets) or from an explicit placements list (imported sets with
    a profiling file); otherwise a pure monotonic search is used.

    preset_layers maps layer index -> (weights, biases) to inject instead of
    attacking that layer (error-propagation experiments).
    Returns the report and the recovered [(weights, biases)] per layer.
    """
    cfg = cfg or ExtractionConfig()
    preset_layers = preset_layers or {}
    spec = placements
    if spec is None and ts.leakage_spec is not None:
        spec = ts.leakage_spec.placements
    windows = (
        ProfiledWindows(spec, ts.n_samples)
        if spec is not None
        else SearchWindows(ts.n_samples)
    )
    grid = step1_grid(cfg.C, cfg.d0)
    records: list[ParameterRecord] = []
    recovered: list[tuple[np.ndarray, np.ndarray]] = []
    X = ts.inputs
    for li, n_out in enumerate(shape):
        n_in = X.shape[1]
        if li in preset_layers:
            W, b = preset_layers[li]
            W = np.asarray(W, dtype=np.float32)
            b = np.asarray(b, dtype=np.float32)
            if W.shape != (n_out, n_in):
                raise ConfigError(
                    f"preset layer {li} shape {W.shape} != {(n_out, n_in)}"
                )
            if isinstance(windows, ProfiledWindows):
                windows.prev = max(windows.prev, windows.last_sample_of_layer(li))
        else:
            W = np.zeros((n_out, n_in), dtype=np.float32)
            b = np.zeros(n_out, dtype=np.float32)
            for ni in range(n_out):
                with_bias = (
                    isinstance(windows, ProfiledWindows)
                    and ("bias-accumulator", li, ni, None) in windows.samples
                )
                res = attack_neuron(ts.traces, X, cfg, signed,
                                    with_bias=with_bias, windows=windows,
                                    layer=li, neuron=ni, grid=grid)
                records.extend(res.records)
                W[ni] = np.nan_to_num(res.weights, nan=0.0)
                if res.bias is not None:
                    b[ni] = np.float32(res.bias)
        recovered.append((W, b))
        # reconstructed activations feed the next layer
        prods_acc = np.add.accumulate(
            X[:, None, :] * W[None, :, :], axis=2, dtype=np.float32
        )[:, :, -1]
        acc = (prods_acc + b[None, :]).astype(np.float32)
        X = _relu32(acc)
    report = ExtractionReport(records=records, meta={
        "mode": "model", "signed": signed, "shape": list(shape),
        "windows": type(windows).__name__,
    })
    return report, recovered
