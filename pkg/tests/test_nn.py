import struct

import numpy as np
import pytest

from dsrlab import autodiff as ad
from dsrlab.autodiff import Tensor
from dsrlab.errors import ConfigError, ContractError, DimensionError, LoadError
from dsrlab.nn import (SGD, Adam, Linear, Mlp, ParamStore, glorot_limit, init_params,
                       load_checkpoint, make_optimizer, save_checkpoint)
from gradcheck import numeric_grad, rel_error


def test_init_biases_zero_and_deterministic():
    a = init_params([5, 7, 3], seed=11)
    b = init_params([5, 7, 3], seed=11)
    for (wa, ba), (wb, bb) in zip(a, b):
        assert wa.tobytes() == wb.tobytes()
        np.testing.assert_array_equal(ba, 0.0)
    assert a[0][0].shape == (5, 7) and a[1][0].shape == (7, 3)


def test_init_within_glorot_bounds_and_centered():
    (w, _), = init_params([100, 100], seed=0)  # 10^4 draws
    lim = glorot_limit(100, 100)
    assert np.all(np.abs(w) <= lim)
    sigma = lim / np.sqrt(3.0)  # std of U(-lim, lim)
    assert abs(w.mean()) < 3 * sigma / 100


@pytest.mark.parametrize("dims", [[3, 0], [0, 2], [4, -1], [4]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ConfigError):
        init_params(dims, 0)


def test_zero_net_outputs_zero_and_identity_passes_through(rng):
    x = rng.standard_normal((4, 3))
    zero = Mlp([Linear(np.zeros((3, 5)), np.zeros(5), "a"), Linear(np.zeros((5, 2)), np.zeros(2), "b")])
    np.testing.assert_array_equal(zero(x).data, 0.0)
    ident = Mlp([Linear(np.eye(3), np.zeros(3), "i")], output_activation="none")
    np.testing.assert_array_equal(ident(x).data, x)


def test_mlp_rejects_wrong_width(rng):
    net = Mlp.build("n", [3, 4, 2], 0)
    with pytest.raises(DimensionError):
        net(rng.standard_normal((5, 4)))


def test_two_layer_tanh_gradient_matches_fd(rng):
    net = Mlp.build("n", [4, 6, 3], 3)
    x = rng.standard_normal((8, 4))
    w = rng.standard_normal((8, 3))
    f = lambda: ad.sum(ad.mul(net(x), w))  # noqa: E731
    with ad.Tape():
        g = ad.backward(f())
    for p in net.parameters():
        assert rel_error(g[p], numeric_grad(f, p)) < 1e-4


def test_softmax_output_rows_sum_to_one(rng):
    net = Mlp.build("h", [3, 4], 0, output_activation="softmax")
    np.testing.assert_allclose(net(rng.standard_normal((6, 3))).data.sum(axis=1), 1.0)


def test_paramstore_duplicate_and_mismatch():
    store = ParamStore()
    store.register(Tensor(np.zeros((2, 2)), requires_grad=True, name="G.0.weight"))
    with pytest.raises(ConfigError):
        store.register(Tensor(np.zeros(2), name="G.0.weight"))
    with pytest.raises(LoadError, match="'G'"):
        store.load_arrays({"G.0.weight": np.zeros((3, 2))})
    with pytest.raises(LoadError):
        store.load_arrays({})


def _param(v):
    return {"p": Tensor(np.array(v, dtype=float), requires_grad=True)}


def test_sgd_plain_step():
    params = _param([1.0])
    SGD(params, lr=0.1, momentum=0.0).step({"p": np.array([1.0])})
    np.testing.assert_allclose(params["p"].data, [0.9])


def test_sgd_momentum_accumulates():
    params = _param([0.0])
    opt = SGD(params, lr=0.1, momentum=0.9)
    opt.step({"p": np.array([1.0])})
    opt.step({"p": np.array([1.0])})
    np.testing.assert_allclose(params["p"].data, [-0.1 - 0.19])


@pytest.mark.parametrize("kind", ["adam", "sgd"])
def test_zero_gradient_leaves_parameters(kind):
    params = _param([0.3, -2.0])
    opt = make_optimizer(kind, params, 0.01)
    for _ in range(3):
        opt.step({"p": np.zeros(2)})
    np.testing.assert_array_equal(params["p"].data, [0.3, -2.0])


@pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
def test_adam_first_step_is_lr_regardless_of_scale(scale):
    params = _param(np.zeros(4))
    Adam(params, lr=0.01).step({"p": np.full(4, scale)})
    np.testing.assert_allclose(np.abs(params["p"].data), 0.01, rtol=1e-5)


def test_optimizer_needs_every_gradient():
    opt = Adam({"a": Tensor(np.zeros(1)), "b": Tensor(np.zeros(1))})
    with pytest.raises(ContractError):
        opt.step({"a": np.ones(1)})
    with pytest.raises(ConfigError):
        make_optimizer("rmsprop", {}, 0.1)


def test_checkpoint_round_trip_is_bitwise(tmp_path, rng):
    arrays = {"G.0.weight": rng.standard_normal((3, 4)), "G.0.bias": rng.standard_normal(4),
              "scalar": np.array(2.5)}
    path = save_checkpoint(tmp_path / "c.dsr", arrays)
    back = load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == np.asarray(arrays[k]).tobytes()
        assert back[k].shape == np.asarray(arrays[k]).shape


def test_checkpoint_layout(tmp_path):
    path = save_checkpoint(tmp_path / "c.dsr", {"ab": np.array([[1.0, 2.0]])})
    buf = path.read_bytes()
    assert buf[:4] == b"DSR1"
    version, n = struct.unpack_from("<II", buf, 4)
    assert (version, n) == (1, 2)
    assert buf[12:14] == b"ab"
    assert struct.unpack_from("<III", buf, 14) == (2, 1, 2)
    assert struct.unpack_from("<2d", buf, 26) == (1.0, 2.0)
    assert len(buf) == 26 + 16


def test_checkpoint_rejects_corruption(tmp_path):
    path = save_checkpoint(tmp_path / "c.dsr", {"w": np.ones((2, 2))})
    buf = path.read_bytes()
    (tmp_path / "trunc.dsr").write_bytes(buf[:-3])
    (tmp_path / "magic.dsr").write_bytes(b"XXXX" + buf[4:])
    for name in ("trunc.dsr", "magic.dsr", "missing.dsr"):
        with pytest.raises(LoadError):
            load_checkpoint(tmp_path / name)
