"""Correlation analysis core.

Pearson correlation between Hamming-weight prediction series and trace
samples, top-N hypothesis ranking with deterministic tie-breaks, and the
monotonic time-sample window used to walk a sequentially computed layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .errors import DegeneratePredictionError, ExhaustedWindowError

DEFAULT_CHUNK_ELEMS = 24_000_000  # hypotheses-x-traces elements per chunk
CHAMPION_FRACTION = 0.5  # per-sample champions below this |r| fraction are noise
TIE_EPS = 1e-9  # |r| differences below this are rounding, not evidence


@numba.njit(cache=True)
def _popcount_f32_to_f64(u, out):
    """Popcount of a uint32 buffer into a float64 buffer (SWAR)."""
    uf = u.ravel()
    of = out.ravel()
    for i in range(uf.size):
        v = uf[i]
        v = v - ((v >> np.uint32(1)) & np.uint32(0x55555555))
        v = (v & np.uint32(0x33333333)) + ((v >> np.uint32(2)) & np.uint32(0x33333333))
        v = (v + (v >> np.uint32(4))) & np.uint32(0x0F0F0F0F)
        # arithmetic promotes to 64-bit here, so mask back before the shift
        s = (np.uint64(v) * np.uint64(0x01010101)) & np.uint64(0xFFFFFFFF)
        of[i] = np.float64(s >> np.uint64(24))


def hw_rows(predictions: np.ndarray) -> np.ndarray:
    """Hamming weights of a float32 prediction matrix, as float64."""
    predictions = np.ascontiguousarray(predictions, dtype=np.float32)
    out = np.empty(predictions.shape, dtype=np.float64)
    _popcount_f32_to_f64(predictions.view(np.uint32), out)
    return out


def pearson_column(h: np.ndarray, traces: np.ndarray, window=None) -> np.ndarray:
    """Pearson r between one prediction vector and each trace sample.

    Double-precision two-pass computation.  Constant trace columns yield
    r = 0 by convention; a constant prediction vector is an error.
    """
    h = np.asarray(h, dtype=np.float64)
    traces = np.asarray(traces)
    if h.ndim != 1 or traces.ndim != 2 or traces.shape[0] != h.size:
        raise ValueError("h must be (N,), traces (N, T)")
    if h.size < 3:
        raise ValueError("need at least 3 traces")
    cols = np.arange(traces.shape[1]) if window is None else np.asarray(window)
    hc = h - h.mean()
    hnorm = np.sqrt(np.dot(hc, hc))
    if hnorm == 0:
        raise DegeneratePredictionError("constant prediction vector")
    tw = traces[:, cols].astype(np.float64)
    tw -= tw.mean(axis=0, keepdims=True)
    tnorm = np.sqrt((tw * tw).sum(axis=0))
    r = np.zeros(cols.size, dtype=np.float64)
    ok = tnorm > 0
    r[ok] = (hc @ tw[:, ok]) / (hnorm * tnorm[ok])
    return np.clip(r, -1.0, 1.0)


@dataclass
class CorrelationResult:
    """Ranked hypotheses: descending |r| (differences within TIE_EPS count
    as ties), ties broken by larger hypothesis value then smaller sample
    index.

    Larger-value tie-break matters: when the target values span at most one
    aligned block of eight exponent fields, a hypothesis scaled by 2^(+-8)
    predicts the exact same Hamming-weight series up to a constant shift and
    correlates identically, so correlation alone cannot separate the scaled
    copies.  The search interval's upper bound cuts off the copies above the
    true value, so the largest tied in-interval candidate is the true one.
    """

    values: np.ndarray  # float32, ranked
    best_corr: np.ndarray  # signed r at the best sample
    best_abs_corr: np.ndarray
    best_sample: np.ndarray  # absolute sample indices
    skipped: int = 0  # constant-prediction hypotheses dropped

    def __len__(self):
        return int(self.values.size)


def cema_rank(
    hypotheses,
    predict: Callable[[np.ndarray], np.ndarray],
    traces: np.ndarray,
    window,
    keep_n: int,
    chunk_elems: int = DEFAULT_CHUNK_ELEMS,
    sample_champions: bool = False,
    min_separation: float = 0.0,
) -> CorrelationResult:
    """Rank weight hypotheses by max |Pearson r| over the window.

    predict maps a batch of hypothesis values (k,) to the float32
    intermediate values (k, N) they would produce for the recorded inputs;
    the engine takes Hamming weights and correlates against each window
    sample.  All-constant prediction rows are skipped with a diagnostic
    count.  The kept hypotheses and their samples do not depend on the chunk
    size (correlations can differ in the last float64 bits because blocked
    matrix products associate differently).

    With sample_champions=True the top keep_n hypotheses of every strong
    window sample (champion within CHAMPION_FRACTION of the top score) are
    kept in addition to the global top keep_n.  A strong later leak (for
    instance the activation output right after a bias accumulation) can
    otherwise crowd the true value's sample out of the kept set entirely at
    coarse grid resolution.

    min_separation > 0 keeps the selection diverse: a candidate closer than
    that to an already kept one is skipped.  Callers that refine around the
    kept candidates pass half the next interval size, so the kept set spans
    keep_n distinct regions instead of near-identical neighbours of a single
    strong (possibly wrong) region.
    """
    values = hypotheses.values if hasattr(hypotheses, "values") else hypotheses
    values = np.asarray(values, dtype=np.float32)
    if keep_n < 1:
        raise ValueError("keep_n must be >= 1")
    cols = np.asarray(window, dtype=np.intp)
    if cols.size == 0:
        raise ExhaustedWindowError("empty correlation window")
    n = traces.shape[0]
    if n < 3:
        raise ValueError("need at least 3 traces")

    tw = traces[:, cols].astype(np.float64)
    tw -= tw.mean(axis=0, keepdims=True)
    tnorm = np.sqrt((tw * tw).sum(axis=0))
    live = tnorm > 0  # constant trace columns contribute r=0

    best_abs = np.empty(values.size, dtype=np.float64)
    best_r = np.empty(values.size, dtype=np.float64)
    best_col = np.empty(values.size, dtype=np.intp)
    constant = np.zeros(values.size, dtype=bool)

    rows_per_chunk = max(1, chunk_elems // max(n, 1))
    for start in range(0, values.size, rows_per_chunk):
        vals = values[start : start + rows_per_chunk]
        preds = np.ascontiguousarray(predict(vals), dtype=np.float32)
        if preds.shape != (vals.size, n):
            raise ValueError(
                f"predict returned shape {preds.shape}, expected {(vals.size, n)}"
            )
        hw = hw_rows(preds)
        s1 = hw.sum(axis=1)
        s2 = (hw * hw).sum(axis=1)
        hnorm = np.sqrt(np.maximum(s2 - s1 * s1 / n, 0.0))
        flat = hnorm == 0
        hnorm[flat] = 1.0  # avoid divide-by-zero; rows flagged below
        r = (hw @ tw) / hnorm[:, None]
        r[:, live] /= tnorm[live][None, :]
        r[:, ~live] = 0.0
        np.clip(r, -1.0, 1.0, out=r)
        a = np.abs(r)
        idx = np.argmax(a, axis=1)  # first max: smaller sample on exact ties
        rows = np.arange(vals.size)
        sl = slice(start, start + vals.size)
        best_abs[sl] = a[rows, idx]
        best_r[sl] = r[rows, idx]
        best_col[sl] = idx
        constant[sl] = flat

    keep_mask = ~constant
    skipped = int(constant.sum())
    if not np.any(keep_mask):
        raise DegeneratePredictionError(
            "every hypothesis produced a constant prediction vector"
        )
    vals64 = values.astype(np.float64)
    # group near-identical |r| before tie-breaking: hypotheses whose
    # prediction series differ only by a constant shift correlate identically
    # in exact arithmetic, but the computed r's differ in the last float64
    # bits, which would otherwise decide the winner by rounding dust
    masked_abs = best_abs[keep_mask]
    prim = np.argsort(-masked_abs, kind="stable")
    sorted_abs = masked_abs[prim]
    brk = np.empty(sorted_abs.size, dtype=bool)
    brk[0] = True
    brk[1:] = (sorted_abs[:-1] - sorted_abs[1:]) > TIE_EPS
    group = np.empty(sorted_abs.size, dtype=np.int64)
    group[prim] = np.cumsum(brk)
    order = np.lexsort((best_col[keep_mask], -vals64[keep_mask], group))
    ranked = np.flatnonzero(keep_mask)[order]
    take = np.zeros(ranked.size, dtype=bool)
    taken_vals: list[float] = []

    def _fill(positions, quota):
        count = int(take[positions].sum())
        for pos in positions:
            if count >= quota:
                break
            if take[pos]:
                continue
            v = vals64[ranked[pos]]
            if taken_vals and min(abs(v - t) for t in taken_vals) < min_separation:
                continue
            take[pos] = True
            taken_vals.append(v)
            count += 1

    _fill(range(ranked.size), keep_n)
    if sample_champions and ranked.size:
        floor = CHAMPION_FRACTION * best_abs[ranked[0]]
        cols_ranked = best_col[ranked]
        strong, first = np.unique(cols_ranked, return_index=True)
        for col in strong[best_abs[ranked[first]] >= floor]:
            _fill(np.flatnonzero(cols_ranked == col), keep_n)
    sel = ranked[take]
    return CorrelationResult(
        values=values[sel],
        best_corr=best_r[sel],
        best_abs_corr=best_abs[sel],
        best_sample=cols[best_col[sel]],
        skipped=skipped,
    )


def monotonic_window(previous_leak_sample: int, n_samples: int) -> np.ndarray:
    """Samples strictly after the last claimed leak; pass -1 for none yet."""
    if previous_leak_sample >= n_samples - 1:
        raise ExhaustedWindowError(
            f"no samples left after index {previous_leak_sample} (T={n_samples})"
        )
    return np.arange(previous_leak_sample + 1, n_samples, dtype=np.intp)
