import numpy as np
import pytest

from tests.helpers import make_bank
from tost.causal import CausalParams
from tost.coding_rate import ProjectionBank, oracle_bases, variational_compression
from tost.errors import DimensionError, ValidationError
from tost.model import (
    BlockParams,
    LayerNormParams,
    ModelParams,
    block_forward,
    gelu,
    gelu_grad,
    init_model,
    layer_norm,
    membership,
    mlp_forward,
    model_forward,
)
from tost.tssa import TssaParams, estimate_membership


def zero_block(d, p, K, h, attn=None, bank=None):
    return BlockParams(
        bank=bank if bank is not None else ProjectionBank(np.zeros((K, d, p))),
        attn=attn or TssaParams(),
        mlp_w1=np.zeros((d, h)),
        mlp_w2=np.zeros((h, d)),
        mlp_b1=np.zeros(h),
        mlp_b2=np.zeros(d),
        norm1=LayerNormParams.identity(d),
        norm2=LayerNormParams.identity(d),
    )


class TestLayerNorm:
    def test_constant_column_maps_to_shift(self):
        out = layer_norm(np.full((3, 2), 4.0), np.ones(3), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out, [[1, 1], [2, 2], [3, 3]])

    def test_standardized_column_unchanged(self):
        z = np.array([[-1.0], [0.0], [1.0]]) * np.sqrt(1.5)
        np.testing.assert_allclose(layer_norm(z, np.ones(3), np.zeros(3)), z, atol=1e-10)

    def test_two_entry_column(self):
        np.testing.assert_allclose(layer_norm(np.array([[1.0], [3.0]]), np.ones(2), np.zeros(2)), [[-1.0], [1.0]], atol=1e-6)


class TestMLP:
    def test_zero_weights(self, rng):
        out = mlp_forward(rng.standard_normal((3, 4)), np.zeros((3, 5)), np.zeros(5), np.zeros((5, 3)), np.zeros(3))
        assert np.array_equal(out, np.zeros((3, 4)))

    def test_identity_weights_apply_gelu(self, rng):
        Z = rng.uniform(0.1, 2.0, size=(3, 4))
        np.testing.assert_allclose(mlp_forward(Z, np.eye(3), np.zeros(3), np.eye(3), np.zeros(3)), gelu(Z), atol=1e-15)

    def test_gelu_values(self):
        assert gelu(0.0) == 0.0
        assert gelu(1.0) == pytest.approx(0.8413447460685429, abs=1e-15)

    def test_gelu_derivative(self, rng):
        x = rng.standard_normal(20) * 3
        h = 1e-6
        np.testing.assert_allclose(gelu_grad(x), (gelu(x + h) - gelu(x - h)) / (2 * h), atol=1e-5)

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            mlp_forward(np.ones((3, 2)), np.ones((4, 5)), np.zeros(5), np.ones((5, 3)), np.zeros(3))


class TestBlock:
    def test_zero_params_pass_through(self, rng):
        Z = rng.standard_normal((4, 6))
        np.testing.assert_array_equal(block_forward(Z, zero_block(4, 2, 2, 8)), Z)

    def test_params_validated(self):
        with pytest.raises(DimensionError):
            BlockParams(
                ProjectionBank(np.zeros((1, 3, 1))), TssaParams(), np.zeros((3, 2)), np.zeros((3, 2)),
                np.zeros(2), np.zeros(3), LayerNormParams.identity(3), LayerNormParams.identity(3),
            )
        with pytest.raises(ValidationError):
            BlockParams(
                ProjectionBank(np.zeros((1, 3, 1))), TssaParams(), np.full((3, 2), np.inf), np.zeros((2, 3)),
                np.zeros(2), np.zeros(3), LayerNormParams.identity(3), LayerNormParams.identity(3),
            )

    def test_oracle_bank_small_step_reduces_compression(self, rng):
        Z = rng.standard_normal((6, 12))
        X = layer_norm(Z, np.ones(6), np.zeros(6))
        probe = TssaParams(tau=1e-3 / 6)
        Pi = estimate_membership(X, make_bank(rng, 2, 6, 3), probe)
        bank = oracle_bases(X, Pi, 3)
        Pi = estimate_membership(X, bank, probe)
        f = probe.spectral(6)
        out = block_forward(Z, zero_block(6, 3, 2, 4, attn=probe, bank=bank))
        X1 = layer_norm(out, np.ones(6), np.zeros(6))
        assert variational_compression(X1, Pi, bank, f) < variational_compression(X, Pi, bank, f)

    def test_causal_block_is_causal(self, rng):
        model = init_model(6, 2, 3, h=8, L=1, seed=4, causal=True)
        blk = model.layers[0]
        Z = rng.standard_normal((6, 10))
        ref = block_forward(Z, blk)
        for j in range(9):
            Zp = Z.copy()
            Zp[:, j + 1 :] += rng.standard_normal((6, 9 - j))
            assert np.array_equal(block_forward(Zp, blk)[:, : j + 1], ref[:, : j + 1])


class TestModel:
    def test_empty_model_is_identity(self, rng):
        Z = rng.standard_normal((4, 3))
        out, trace = model_forward(Z, init_model(4, 2, 2, L=0), record=True)
        np.testing.assert_array_equal(out, Z)
        assert trace == []

    def test_single_layer_equals_block(self, rng):
        model = init_model(5, 2, 2, L=1, seed=3)
        Z = rng.standard_normal((5, 7))
        np.testing.assert_array_equal(model_forward(Z, model)[0], block_forward(Z, model.layers[0]))

    def test_trace_length_and_values(self, rng):
        model = init_model(6, 2, 3, L=4, seed=1, mode="oracle-ready")
        Z = rng.standard_normal((6, 9))
        out, trace = model_forward(Z, model, record=True)
        assert [r.layer for r in trace] == [0, 1, 2, 3]
        X = layer_norm(Z, np.ones(6), np.zeros(6))
        blk = model.layers[0]
        assert trace[0].compression_var == variational_compression(X, membership(X, blk), blk.bank, blk.tssa.spectral(6))
        assert out.shape == Z.shape

    def test_no_trace_by_default(self, rng):
        assert model_forward(rng.standard_normal((4, 2)), init_model(4, 2, 2))[1] is None


class TestInit:
    def test_deterministic(self):
        a, b = init_model(6, 2, 3, L=2, seed=5), init_model(6, 2, 3, L=2, seed=5)
        for x, y in zip(a.layers, b.layers):
            assert np.array_equal(x.bank.bases, y.bank.bases)
            assert np.array_equal(x.mlp_w1, y.mlp_w1)
            assert np.array_equal(x.mlp_w2, y.mlp_w2)

    def test_shape_contract(self):
        model = init_model(8, 2, 4, h=16, L=3, seed=7)
        assert model.depth == 3
        for blk in model.layers:
            assert blk.bank.bases.shape == (4, 8, 2)
            assert blk.bank.is_orthonormal()
            assert blk.mlp_w1.shape == (8, 16)

    def test_oracle_ready_mode(self):
        model = init_model(4, 2, 2, L=1, mode="oracle-ready")
        blk = model.layers[0]
        assert not blk.mlp_w1.any() and not blk.mlp_w2.any()
        assert blk.tssa.tau == pytest.approx(1e-2 / 4)

    def test_causal_flag(self):
        assert isinstance(init_model(4, 2, 2, causal=True).layers[0].attn, CausalParams)

    @pytest.mark.parametrize("kw", [dict(d=2, p=3, K=1), dict(d=2, p=1, K=0), dict(d=2, p=1, K=1, L=-1)])
    def test_rejects_bad_dims(self, kw):
        with pytest.raises(DimensionError):
            init_model(**kw)

    def test_rejects_mode(self):
        with pytest.raises(ValidationError):
            init_model(4, 2, 2, mode="trained")

    def test_mixed_dims_rejected(self):
        a = init_model(4, 2, 2).layers[0]
        b = init_model(4, 1, 2).layers[0]
        with pytest.raises(DimensionError):
            ModelParams((a, b), 4, 2, 2, 16)
