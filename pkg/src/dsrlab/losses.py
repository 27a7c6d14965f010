"""Scalar objectives, all written as minimization targets.

Sign conventions live here and only here:

* the ELBO is maximized in the original formulation; we minimize
  ``elbo_neg = kl_y + kl_d + recon``;
* the adversarial ``-lambda`` factors are not part of these scalars. They are
  applied by the gradient-reversal layers inside :meth:`DsrModel.heads`, so
  heads descend on these losses while encoders ascend on them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DataError, DimensionError, NumericError

PROB_FLOOR = 1e-12


def kl_std_normal(mu, logvar) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I))."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape or mu.ndim != 2:
        raise DimensionError(f"kl_std_normal: shapes {mu.shape} and {logvar.shape}")
    per_dim = ad.sub(ad.shift(ad.add(ad.mul(mu, mu), ad.exp(logvar)), -1.0), logvar)
    return ad.scale(ad.mean(ad.sum(per_dim, axis=1)), 0.5)


def recon_nll(x_feat, x_hat) -> Tensor:
    """Unit-variance Gaussian negative log-likelihood, constants dropped."""
    x_feat, x_hat = ad.as_tensor(x_feat), ad.as_tensor(x_hat)
    if x_feat.shape != x_hat.shape or x_feat.ndim != 2:
        raise DimensionError(f"recon_nll: shapes {x_feat.shape} and {x_hat.shape}")
    diff = ad.sub(x_feat, x_hat)
    return ad.scale(ad.mean(ad.sum(ad.mul(diff, diff), axis=1)), 0.5)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _log_prob(p: Tensor) -> Tensor:
    return ad.log(ad.clip(p, PROB_FLOOR))


def cross_entropy(p, labels) -> Tensor:
    """``-mean log p[i, labels[i]]`` for probability rows ``p``."""
    p = ad.as_tensor(p)
    if p.ndim != 2:
        raise DimensionError(f"cross_entropy expects n x C probabilities, got {p.shape}")
    onehot = one_hot(labels, p.shape[1])
    if onehot.shape[0] != p.shape[0]:
        raise DimensionError(f"{p.shape[0]} rows but {onehot.shape[0]} labels")
    return ad.neg(ad.mean(ad.sum(ad.mul(_log_prob(p), onehot), axis=1)))


def entropy(p) -> Tensor:
    """Mean row entropy; ``0 log 0`` counts as 0."""
    p = ad.as_tensor(p)
    if p.ndim != 2:
        raise DimensionError(f"entropy expects n x C probabilities, got {p.shape}")
    return ad.neg(ad.mean(ad.sum(ad.mul(p, _log_prob(p)), axis=1)))


def l_sem(p_y_sem_source, source_labels, p_d_sem, domain_tags, delta: float) -> dict:
    """Label-adversarial objective ``delta * CE_y + CE_d`` (GRL supplies the minus)."""
    if ad.as_tensor(p_y_sem_source).shape[0] == 0 or len(source_labels) == 0:
        raise ContractError("l_sem needs at least one source row")
    ce_y = cross_entropy(p_y_sem_source, source_labels)
    ce_d = cross_entropy(p_d_sem, domain_tags)
    return {"l_y": ce_y, "l_d_sem": ce_d, "l_sem": ad.add(ad.scale(ce_y, delta), ce_d)}


def l_dom(p_d_dom, domain_tags, p_y_dom, omega: float, literal_sign: bool = False) -> dict:
    """Domain-adversarial objective ``CE_d + omega * s * H(p_y_dom)``.

    Default ``s = +1``: the label head on ``z_d`` descends on entropy (tries
    to be confident) and, through its GRL, the domain encoder ascends on it.
    ``literal_sign=True`` uses ``s = -1``, the plain ``CE_d - omega * L_E``
    form, under which the label head maximizes entropy instead.
    """
    ce_d = cross_entropy(p_d_dom, domain_tags)
    ent = entropy(p_y_dom)
    sign = -1.0 if literal_sign else 1.0
    return {"l_d_dom": ce_d, "l_entropy": ent,
            "l_dom": ad.add(ce_d, ad.scale(ent, sign * omega))}


@dataclass
class LossBreakdown:
    kl_y: float
    kl_d: float
    recon: float
    elbo_neg: float
    l_y: float
    l_d_sem: float
    l_d_dom: float
    l_entropy: float
    l_sem: float
    l_dom: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


COMPONENTS = ("kl_y", "kl_d", "recon", "l_y", "l_d_sem", "l_d_dom", "l_entropy", "l_sem", "l_dom")


def total_loss(parts: dict, beta: float = 1.0, gamma: float = 1.0) -> tuple[Tensor, LossBreakdown]:
    """Combine components into ``elbo_neg + beta * l_sem + gamma * l_dom``.

    ``parts`` maps component names to scalar tensors; absent ones count as 0
    (e.g. ``dsr_no_domain_module`` has no ``l_dom``). ``elbo_neg`` may be given
    directly instead of ``kl_y``/``kl_d``/``recon``.
    """
    zero = Tensor(0.0)
    for name, value in parts.items():
        v = float(ad.as_tensor(value).data)
        if not np.isfinite(v):
            raise NumericError(f"loss component {name} is not finite ({v})")
    get = lambda k: ad.as_tensor(parts.get(k, zero))  # noqa: E731
    if "elbo_neg" in parts:
        elbo_neg = get("elbo_neg")
    else:
        elbo_neg = ad.add(ad.add(get("kl_y"), get("kl_d")), get("recon"))
    total = elbo_neg
    if beta != 0.0 and "l_sem" in parts:
        total = ad.add(total, ad.scale(get("l_sem"), beta))
    if gamma != 0.0 and "l_dom" in parts:
        total = ad.add(total, ad.scale(get("l_dom"), gamma))
    f = lambda k: float(get(k).data)  # noqa: E731
    breakdown = LossBreakdown(
        kl_y=f("kl_y"), kl_d=f("kl_d"), recon=f("recon"), elbo_neg=float(elbo_neg.data),
        l_y=f("l_y"), l_d_sem=f("l_d_sem"), l_d_dom=f("l_d_dom"), l_entropy=f("l_entropy"),
        l_sem=f("l_sem"), l_dom=f("l_dom"), total=float(total.data),
    )
    return total, breakdown
