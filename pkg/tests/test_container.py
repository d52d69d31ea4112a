import numpy as np
import pytest

from tost.causal import CausalParams
from tost.coding_rate import SpectralFn
from tost.container import MAGIC, dumps, load_model, loads, save_model
from tost.errors import ValidationError
from tost.model import init_model, model_forward
from tost.tssa import TssaParams


def assert_same(a, b):
    assert (a.d, a.p, a.K, a.h, a.depth) == (b.d, b.p, b.K, b.h, b.depth)
    for x, y in zip(a.layers, b.layers):
        for name in ("mlp_w1", "mlp_w2", "mlp_b1", "mlp_b2"):
            assert np.array_equal(getattr(x, name), getattr(y, name))
        assert np.array_equal(x.bank.bases, y.bank.bases)
        assert x.causal == y.causal
        assert x.tssa.tau == y.tssa.tau and x.tssa.eta == y.tssa.eta


def test_round_trip(tmp_path):
    model = init_model(6, 2, 3, h=5, L=2, seed=11)
    path = tmp_path / "m.tost"
    save_model(model, path)
    back = load_model(path)
    assert_same(model, back)
    Z = np.random.default_rng(0).standard_normal((6, 4))
    assert np.array_equal(model_forward(Z, model)[0], model_forward(Z, back)[0])


def test_round_trip_with_W_and_bias():
    model = init_model(4, 2, 2, h=3, L=1, seed=2, causal=True)
    blk = model.layers[0]
    rng = np.random.default_rng(3)
    attn = CausalParams(
        TssaParams(tau=0.2, eta=0.5, f=SpectralFn(3.0), W=rng.standard_normal((4, 4)), w_scaled=True, normalize_membership=False),
        bias=rng.standard_normal((5, 2)),
    )
    model = type(model)((type(blk)(blk.bank, attn, blk.mlp_w1, blk.mlp_w2, blk.mlp_b1, blk.mlp_b2, blk.norm1, blk.norm2),), 4, 2, 2, 3)
    back = loads(dumps(model))
    got = back.layers[0].attn
    assert np.array_equal(got.bias, attn.bias)
    assert np.array_equal(got.base.W, attn.base.W)
    assert got.base.f.alpha == 3.0 and got.base.w_scaled and not got.base.normalize_membership
    Z = rng.standard_normal((4, 5))
    assert np.array_equal(model_forward(Z, model)[0], model_forward(Z, back)[0])


def test_empty_model():
    model = init_model(3, 1, 1, L=0)
    assert loads(dumps(model)).depth == 0


def test_byte_stable():
    assert dumps(init_model(4, 2, 2, seed=9)) == dumps(init_model(4, 2, 2, seed=9))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:4] + (99).to_bytes(4, "little") + b[8:],
        lambda b: b[:-8],
        lambda b: b + b"\0" * 8,
        lambda b: b[:10],
    ],
)
def test_corrupt_containers(mutate):
    data = dumps(init_model(4, 2, 2))
    assert data.startswith(MAGIC)
    with pytest.raises(ValidationError):
        loads(mutate(data))
