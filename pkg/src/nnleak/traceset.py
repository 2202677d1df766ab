"""Trace-set container and bit-exact file I/O (SCNT binary format, CSV import).

SCNT layout, little-endian:
    magic   4 bytes  b"SCNT"
    version u32      currently 1
    N, T, D u32 each
    mlen    u32      metadata JSON byte length
    meta    mlen bytes of UTF-8 JSON
    traces  N*T float32
    inputs  N*D float32
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, MalformedTraceFileError

MAGIC = b"SCNT"
VERSION = 1

SYNTHETIC = "synthetic"
IMPORTED = "imported"


@dataclass(frozen=True)
class LeakagePlacement:
    """Where one transcript intermediate value leaks in the trace."""

    kind: str
    layer: int
    neuron: int
    input_index: int | None
    sample_index: int


@dataclass(frozen=True)
class LeakageSpec:
    placements: tuple[LeakagePlacement, ...]

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))

    def validate(self, n_samples: int) -> None:
        for p in self.placements:
            if not 0 <= p.sample_index < n_samples:
                raise DimensionMismatchError(
                    f"leak sample {p.sample_index} outside [0,{n_samples})"
                )

    def to_json(self) -> list:
        return [
            [p.kind, p.layer, p.neuron, p.input_index, p.sample_index]
            for p in self.placements
        ]

    @classmethod
    def from_json(cls, doc) -> "LeakageSpec":
        return cls(tuple(LeakagePlacement(*row) for row in doc))

    def for_neuron(self, layer: int, neuron: int) -> list[LeakagePlacement]:
        return [p for p in self.placements if p.layer == layer and p.neuron == neuron]


@dataclass
class TraceSet:
    traces: np.ndarray  # (N, T) float32
    inputs: np.ndarray  # (N, D) float32
    source: str = SYNTHETIC
    seed: int | None = None
    leakage_spec: LeakageSpec | None = None
    averaging_factor: int = 1
    extra_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.traces = np.ascontiguousarray(self.traces, dtype=np.float32)
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        if self.traces.ndim != 2 or self.inputs.ndim != 2:
            raise DimensionMismatchError("traces and inputs must be 2-d")
        if self.traces.shape[0] != self.inputs.shape[0]:
            raise DimensionMismatchError(
                f"{self.traces.shape[0]} traces vs {self.inputs.shape[0]} input rows"
            )
        if self.traces.shape[0] > 0 and self.traces.shape[1] < 1:
            raise DimensionMismatchError("traces need at least one sample")
        if self.averaging_factor < 1:
            raise ValueError("averaging_factor must be >= 1")
        if not np.all(np.isfinite(self.traces)):
            raise ValueError("trace samples must be finite")
        if self.leakage_spec is not None:
            self.leakage_spec.validate(self.traces.shape[1])

    @property
    def n_traces(self) -> int:
        return self.traces.shape[0]

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


def write_traceset(ts: TraceSet, path) -> None:
    meta = {
        "source": ts.source,
        "seed": ts.seed,
        "averaging_factor": ts.averaging_factor,
        "leakage_spec": ts.leakage_spec.to_json() if ts.leakage_spec else None,
        "extra": ts.extra_meta,
    }
    blob = json.dumps(meta).encode("utf-8")
    header = np.array(
        [ts.n_traces, ts.n_samples, ts.input_dim, len(blob)], dtype="<u4"
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([VERSION], dtype="<u4").tobytes())
        fh.write(header.tobytes())
        fh.write(blob)
        fh.write(ts.traces.astype("<f4").tobytes())
        fh.write(ts.inputs.astype("<f4").tobytes())


def read_traceset(path) -> TraceSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise MalformedTraceFileError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    head = np.frombuffer(raw[4:24], dtype="<u4")
    if head.size != 5:
        raise MalformedTraceFileError("truncated header")
    version, n, t, d, mlen = (int(x) for x in head)
    if version != VERSION:
        raise MalformedTraceFileError(f"unsupported version {version}")
    off = 24
    try:
        meta = json.loads(raw[off : off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedTraceFileError(f"bad metadata block: {exc}") from exc
    off += mlen
    need = off + 4 * (n * t + n * d)
    if len(raw) != need:
        raise MalformedTraceFileError(
            f"payload length {len(raw)} does not match header (expected {need})"
        )
    traces = np.frombuffer(raw, dtype="<f4", count=n * t, offset=off).reshape(n, t)
    off += 4 * n * t
    inputs = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    spec = meta.get("leakage_spec")
    return TraceSet(
        traces=traces.copy(),
        inputs=inputs.copy(),
        source=meta.get("source", IMPORTED),
        seed=meta.get("seed"),
        leakage_spec=LeakageSpec.from_json(spec) if spec else None,
        averaging_factor=meta.get("averaging_factor", 1),
        extra_meta=meta.get("extra", {}),
    )


def import_csv(path, averaging_factor: int = 1) -> TraceSet:
    """CSV bridge: header row t0..t{T-1},x0..x{D-1}, one trace per line."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise MalformedTraceFileError("empty CSV file")
        cols = header.split(",")
        t_cols = [c for c in cols if c.startswith("t")]
        x_cols = [c for c in cols if c.startswith("x")]
        if len(t_cols) + len(x_cols) != len(cols) or not t_cols:
            raise MalformedTraceFileError(
                "CSV header must be t0..t{T-1},x0..x{D-1}"
            )
        data = np.loadtxt(fh, delimiter=",", dtype=np.float32, ndmin=2)
    if data.size and data.shape[1] != len(cols):
        raise MalformedTraceFileError("CSV row width does not match header")
    t = len(t_cols)
    return TraceSet(
        traces=data[:, :t],
        inputs=data[:, t:],
        source=IMPORTED,
        averaging_factor=averaging_factor,
    )
