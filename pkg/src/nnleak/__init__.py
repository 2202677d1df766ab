"""Simulated EM side-channel leakage of float32 MLP inference and
correlation-based recovery of the model parameters from those traces."""

from .errors import (
    ConfigError,
    DegeneratePredictionError,
    DimensionMismatchError,
    EmptyGridError,
    ExhaustedWindowError,
    ExtractionAbortError,
    MalformedTraceFileError,
    NnleakError,
    OutOfModelError,
)
from .fp32 import (
    Float32Parts,
    HypothesisGrid,
    PreNormProduct,
    bits_to_float,
    decompose,
    float_to_bits,
    hamming_weight,
    hw32,
    product_parts,
    realign,
    recompose,
    step1_grid,
)
from .mlp import (
    IntermediateValue,
    LayerParams,
    MlpModel,
    batch_intermediates,
    forward,
    infer,
    load_model,
    relu_constant_time,
    save_model,
)
from .traceset import (
    LeakagePlacement,
    LeakageSpec,
    TraceSet,
    import_csv,
    read_traceset,
    write_traceset,
)
from .simulate import (
    simulate_layer_set,
    simulate_model_set,
    simulate_multiplication_set,
    simulate_neuron_set,
)
from .cema import (
    CorrelationResult,
    cema_rank,
    hw_rows,
    monotonic_window,
    pearson_column,
)
from .extraction import (
    DEFAULT_THRESHOLDS,
    ExtractionConfig,
    ExtractionReport,
    ParameterRecord,
    ValueExtraction,
    attack_neuron,
    extract_bias_neuron,
    extract_layer,
    extract_model,
    extract_multiplication,
    extract_neuron,
    extract_value,
)
from .harness import (
    REFERENCE_T2,
    REFERENCE_T5,
    REFERENCE_T7,
    TableReproduction,
    reproduce_table,
    run_experiment,
)

__version__ = "0.1.0"
