import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dsrlab import autodiff as ad
from dsrlab.autodiff import Tensor
from dsrlab.errors import ContractError, DataError, NumericError
from dsrlab.losses import (cross_entropy, entropy, kl_std_normal, l_dom, l_sem, one_hot,
                           recon_nll, total_loss)


def mc_kl(mu, logvar, n, rng):
    """Monte-Carlo E_q[log q(z) - log p(z)] and its standard error."""
    std = np.exp(0.5 * logvar)
    eps = rng.standard_normal((n, mu.size))
    z = mu + std * eps
    log_q = -0.5 * (eps ** 2 + logvar + np.log(2 * np.pi)).sum(axis=1)
    log_p = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(axis=1)
    d = log_q - log_p
    return d.mean(), d.std(ddof=1) / math.sqrt(n)


def test_kl_known_values():
    assert float(kl_std_normal(np.zeros((1, 3)), np.zeros((1, 3))).data) == 0.0
    assert abs(float(kl_std_normal([[1.0, 0.0]], [[0.0, 0.0]]).data) - 0.5) < 1e-12
    expect = 0.5 * (2 - 1 - math.log(2))
    assert abs(float(kl_std_normal([[0.0]], [[math.log(2)]]).data) - expect) < 1e-12
    assert abs(expect - 0.15343) < 1e-5


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(5)
    for _ in range(10):
        mu = rng.normal(0, 1, 3)
        logvar = rng.uniform(-1.5, 1.0, 3)
        closed = float(kl_std_normal(mu[None], logvar[None]).data)
        est, se = mc_kl(mu, logvar, 10 ** 6, rng)
        assert abs(closed - est) < 3 * se, (closed, est, se)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5, width=64)),
       arrays(np.float64, (4, 3), elements=st.floats(-6, 6, width=64)))
def test_kl_is_non_negative(mu, logvar):
    assert float(kl_std_normal(mu, logvar).data) >= -1e-12


def test_recon_values():
    x = np.random.default_rng(0).standard_normal((5, 4))
    assert float(recon_nll(x, x).data) == 0.0
    assert float(recon_nll([[0.0]], [[2.0]]).data) == 2.0


def test_cross_entropy_values():
    assert abs(float(cross_entropy([[0.5, 0.5]], [0]).data) - math.log(2)) < 1e-12
    assert float(cross_entropy([[0.0, 1.0]], [1]).data) == 0.0
    assert abs(float(cross_entropy([[0.75, 0.25]], [1]).data) - 1.38629436112) < 1e-10
    with pytest.raises(DataError):
        cross_entropy([[0.5, 0.5]], [2])


def test_entropy_values():
    for c in (2, 3, 7):
        assert abs(float(entropy(np.full((2, c), 1.0 / c)).data) - math.log(c)) < 1e-12
    assert float(entropy([[1.0, 0.0, 0.0]]).data) == 0.0
    expect = -0.75 * math.log(0.75) - 0.25 * math.log(0.25)
    assert abs(float(entropy([[0.75, 0.25]]).data) - expect) < 1e-12
    assert abs(expect - 0.56234) < 1e-5


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(0, 1, width=64)))
def test_entropy_bounds(w):
    w = w + 1e-9
    p = w / w.sum(axis=1, keepdims=True)
    h = float(entropy(p).data)
    assert -1e-12 <= h <= math.log(4) + 1e-9


def test_cross_entropy_of_marginal_dominates_label_entropy():
    for labels in ([0, 0, 1], [0, 1, 1, 1, 2], [2, 2, 2, 0]):
        y = np.array(labels)
        marg = np.bincount(y, minlength=3) / len(y)
        ce = float(cross_entropy(np.tile(marg, (len(y), 1)), y).data)
        h = float(entropy(marg[None]).data)
        assert ce >= h - 1e-12
    for q in ([0.2, 0.3, 0.5], [0.6, 0.2, 0.2]):
        y = np.array([0, 0, 1, 2])
        assert float(cross_entropy(np.tile(q, (4, 1)), y).data) >= \
               float(cross_entropy(np.tile([0.5, 0.25, 0.25], (4, 1)), y).data) - 1e-12


def test_one_hot():
    np.testing.assert_array_equal(one_hot([1, 0], 2), [[0, 1], [1, 0]])
    with pytest.raises(DataError):
        one_hot([-1], 2)


def test_l_sem_combination():
    half = np.full((4, 2), 0.5)
    out = l_sem(half, [0, 1, 0, 1], half, [0, 0, 1, 1], delta=1.0)
    assert abs(float(out["l_sem"].data) - 2 * math.log(2)) < 1e-12
    out2 = l_sem(half, [0, 1, 0, 1], half, [0, 0, 1, 1], delta=2.0)
    assert abs(float(out2["l_sem"].data) - 3 * math.log(2)) < 1e-12
    with pytest.raises(ContractError):
        l_sem(np.zeros((0, 2)), [], half, [0, 0, 1, 1], 1.0)


def test_l_dom_sign_conventions():
    p_d = np.array([[0.9, 0.1], [0.2, 0.8]])
    uniform = np.full((2, 3), 1.0 / 3)
    ce = float(cross_entropy(p_d, [0, 1]).data)
    assert float(l_dom(p_d, [0, 1], uniform, 0.0)["l_dom"].data) == ce
    lit = float(l_dom(p_d, [0, 1], uniform, 0.1, literal_sign=True)["l_dom"].data)
    assert abs(lit - (ce - 0.1 * math.log(3))) < 1e-12
    default = float(l_dom(p_d, [0, 1], uniform, 0.1)["l_dom"].data)
    assert abs(default - (ce + 0.1 * math.log(3))) < 1e-12


def test_total_loss_linearity_and_zero_weights():
    parts = {"elbo_neg": Tensor(1.0), "l_sem": Tensor(2.0), "l_dom": Tensor(3.0)}
    t, br = total_loss(parts, 1.0, 1.0)
    assert float(t.data) == 6.0 and br.total == 6.0
    t, br = total_loss(parts, 0.0, 0.0)
    assert float(t.data) == 1.0 == br.elbo_neg
    t, br = total_loss({"kl_y": Tensor(0.5), "kl_d": Tensor(0.25), "recon": Tensor(1.0)})
    assert br.elbo_neg == 1.75 == br.total


def test_total_loss_names_non_finite_component():
    with pytest.raises(NumericError, match="l_dom"):
        total_loss({"elbo_neg": Tensor(1.0), "l_dom": Tensor(float("nan"))})


def test_l_sem_head_gradient_unaffected_by_grl(rng):
    """The domain head sees +dCE/dtheta whatever lambda the GRL carries."""
    from dsrlab.nn import Mlp
    head = Mlp.build("Cd_sem", [3, 2], 0, output_activation="softmax")
    z = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    tags = [0, 0, 0, 1, 1, 1]
    half = np.full((3, 2), 0.5)
    grads = {}
    for lam in (-1.0, 1.0, 2.0):
        with ad.Tape():
            out = l_sem(half, [0, 1, 0], head(ad.grad_reverse(z, lam)), tags, 1.0)
            g = ad.backward(out["l_sem"])
        grads[lam] = ([g[p] for p in head.parameters()], g[z])
    for lam in (1.0, 2.0):
        for a, b in zip(grads[lam][0], grads[-1.0][0]):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(grads[lam][1], -lam * grads[-1.0][1], rtol=1e-12)
