"""Model container, transcript-emitting inference and model file I/O."""

import numpy as np
import pytest

from nnleak.errors import DimensionMismatchError, OutOfModelError
from nnleak.mlp import (
    KIND_ACCUMULATOR,
    KIND_ACTIVATION,
    KIND_BIAS_ACCUMULATOR,
    KIND_PRODUCT,
    LayerParams,
    MlpModel,
    batch_intermediates,
    forward,
    infer,
    load_model,
    relu_constant_time,
    save_model,
)


def small_model(bias_first=False):
    return MlpModel(
        layers=[
            LayerParams(
                weights=np.array([[0.5, -1.25], [2.0, 0.75]], dtype=np.float32),
                biases=np.array([0.25, -0.5], dtype=np.float32),
            ),
            LayerParams(
                weights=np.array([[1.5, -0.5]], dtype=np.float32),
                biases=np.array([0.0], dtype=np.float32),
            ),
        ],
        bias_first=bias_first,
    )


class TestContainers:
    def test_shape_properties(self):
        m = small_model()
        assert m.input_dim == 2
        assert m.shape == [2, 1]
        assert m.layers[0].n_out == 2 and m.layers[0].n_in == 2

    def test_bias_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            LayerParams(np.zeros((2, 3), dtype=np.float32),
                        np.zeros(3, dtype=np.float32))

    def test_layers_must_chain(self):
        with pytest.raises(DimensionMismatchError):
            MlpModel(layers=[
                LayerParams(np.zeros((2, 2), dtype=np.float32), np.zeros(2)),
                LayerParams(np.zeros((1, 3), dtype=np.float32), np.zeros(1)),
            ])

    def test_empty_model_rejected(self):
        with pytest.raises(DimensionMismatchError):
            MlpModel(layers=[])

    def test_bad_activation_rejected(self):
        with pytest.raises(ValueError):
            LayerParams(np.zeros((1, 1), dtype=np.float32), np.zeros(1),
                        activation="tanh")

    def test_non_normal_weights_rejected(self):
        with pytest.raises(OutOfModelError):
            LayerParams(np.array([[1e-42]], dtype=np.float32), np.zeros(1))


class TestRelu:
    def test_positive_passthrough(self):
        assert relu_constant_time(3.25) == 3.25

    def test_negative_masked(self):
        assert relu_constant_time(-7.5) == 0.0

    def test_negative_zero_masks_to_positive_zero(self):
        out = relu_constant_time(-0.0)
        assert out == 0.0 and np.signbit(out) == False  # noqa: E712


class TestInference:
    def test_transcript_order_and_values(self):
        m = small_model()
        x = np.array([1.0, 2.0], dtype=np.float32)
        out, transcript = infer(m, x)
        kinds = [t.kind for t in transcript]
        # neuron 0 layer 0: product, accumulator per input, bias, activation
        assert kinds[:6] == [
            KIND_PRODUCT, KIND_ACCUMULATOR, KIND_PRODUCT, KIND_ACCUMULATOR,
            KIND_BIAS_ACCUMULATOR, KIND_ACTIVATION,
        ]
        # layer 0 neuron 0: relu(0.5*1 - 1.25*2 + 0.25) = 0
        assert transcript[5].value == 0.0
        # layer 0 neuron 1: relu(2*1 + 0.75*2 - 0.5) = 3.0
        assert transcript[11].value == 3.0
        # layer 1: relu(1.5*0 - 0.5*3) = 0
        assert out[0] == 0.0

    def test_float32_rounding_at_each_step(self):
        w = np.array([[0.1, 0.2]], dtype=np.float32)
        m = MlpModel(layers=[LayerParams(w, np.zeros(1, dtype=np.float32))])
        x = np.array([3.0, 7.0], dtype=np.float32)
        _, transcript = infer(m, x)
        p0 = np.float32(w[0, 0] * np.float32(3.0))
        acc = np.float32(p0 + np.float32(w[0, 1] * np.float32(7.0)))
        assert transcript[3].value == float(acc)

    def test_zero_bias_emits_no_bias_step(self):
        w = np.array([[1.0]], dtype=np.float32)
        m = MlpModel(layers=[LayerParams(w, np.zeros(1, dtype=np.float32))])
        _, transcript = infer(m, np.array([2.0], dtype=np.float32))
        assert all(t.kind != KIND_BIAS_ACCUMULATOR for t in transcript)

    def test_bias_first_starts_accumulator_at_bias(self):
        w = np.array([[1.0]], dtype=np.float32)
        b = np.array([0.5], dtype=np.float32)
        m = MlpModel(layers=[LayerParams(w, b)], bias_first=True)
        _, transcript = infer(m, np.array([2.0], dtype=np.float32))
        accs = [t for t in transcript if t.kind == KIND_ACCUMULATOR]
        assert accs[0].value == 2.5

    def test_input_dim_checked(self):
        with pytest.raises(DimensionMismatchError):
            infer(small_model(), np.zeros(3, dtype=np.float32))


class TestBatchAgreement:
    @pytest.mark.parametrize("bias_first", [False, True])
    def test_batch_matches_scalar_transcript(self, bias_first):
        m = small_model(bias_first)
        rng = np.random.default_rng(17)
        X = rng.uniform(-4, 4, size=(32, 2)).astype(np.float32)
        batch = batch_intermediates(m, X)
        for row in range(X.shape[0]):
            _, transcript = infer(m, X[row])
            assert len(batch) == len(transcript)
            for (key, vals), t in zip(batch, transcript):
                assert key == (t.kind, t.layer, t.neuron, t.input_index)
                assert float(vals[row]) == t.value

    def test_forward_matches_infer(self):
        m = small_model()
        rng = np.random.default_rng(19)
        X = rng.uniform(-4, 4, size=(16, 2)).astype(np.float32)
        out = forward(m, X)
        for row in range(X.shape[0]):
            expect, _ = infer(m, X[row])
            assert np.array_equal(out[row], expect)

    def test_batch_dim_checked(self):
        with pytest.raises(DimensionMismatchError):
            batch_intermediates(small_model(), np.zeros((4, 3), dtype=np.float32))


class TestModelFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = small_model()
        path = tmp_path / "model.json"
        save_model(m, path)
        loaded = load_model(path)
        assert loaded.bias_first == m.bias_first
        for a, b in zip(loaded.layers, m.layers):
            assert np.array_equal(a.weights.view(np.uint32),
                                  b.weights.view(np.uint32))
            assert np.array_equal(a.biases.view(np.uint32),
                                  b.biases.view(np.uint32))
            assert a.activation == b.activation

    def test_hex_fields_authoritative(self, tmp_path):
        import json

        m = small_model()
        path = tmp_path / "model.json"
        save_model(m, path)
        with open(path) as fh:
            doc = json.load(fh)
        # corrupt the decimal copy; the hex patterns must win
        doc["layers"][0]["weights"][0][0] = 999.0
        with open(path, "w") as fh:
            json.dump(doc, fh)
        loaded = load_model(path)
        assert loaded.layers[0].weights[0, 0] == np.float32(0.5)
