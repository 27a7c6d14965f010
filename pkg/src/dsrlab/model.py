"""The DSR graph: backbone, two variational encoders, decoder, dual adversarial heads.

Parameter groups (checkpoint name prefixes) are fixed::

    G       backbone                    x      -> features
    Hy, Hd  semantic / domain encoders  feat   -> (mu, logvar)
    dec     decoder                     [zy;zd] -> features
    Cy_sem  label head on z_y
    Cd_sem  domain head on GRL(z_y)
    Cd_dom  domain head on z_d
    Cy_dom  label head on GRL(z_d)
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .nn import Mlp, ParamStore

GROUPS = ("G", "Hy", "Hd", "dec", "Cy_sem", "Cd_sem", "Cd_dom", "Cy_dom")

LOGVAR_CLAMP = 8.0
N_DOMAINS = 2


@dataclass(frozen=True)
class ModelDims:
    in_dim: int
    n_classes: int
    feature_dim: int = 64
    k_y: int = 8
    k_d: int = 8
    encoder_hidden: tuple = (64,)
    decoder_hidden: tuple = (64,)
    head_hidden: tuple = ()
    adversary_hidden: Optional[tuple] = None  # GRL heads; None = same as head_hidden


@dataclass
class LatentSample:
    mu_y: Tensor
    logvar_y: Tensor
    mu_d: Tensor
    logvar_d: Tensor
    z_y: Tensor
    z_d: Tensor
    eps_y: np.ndarray
    eps_d: np.ndarray
    features: Tensor


class DsrModel:
    def __init__(self, dims: ModelDims, seed):
        rng = np.random.default_rng(seed)
        seeds = rng.spawn(len(GROUPS))
        d = dims
        self.dims = d
        self.k_y, self.k_d, self.n_classes = d.k_y, d.k_d, d.n_classes
        # G is one tanh layer: its hidden activations are the features.
        self.G = Mlp.build("G", [d.in_dim, d.feature_dim], seeds[0], output_activation="tanh")
        self.Hy = Mlp.build("Hy", [d.feature_dim, *d.encoder_hidden, 2 * d.k_y], seeds[1])
        self.Hd = Mlp.build("Hd", [d.feature_dim, *d.encoder_hidden, 2 * d.k_d], seeds[2])
        self.dec = Mlp.build("dec", [d.k_y + d.k_d, *d.decoder_hidden, d.feature_dim], seeds[3])
        head = dict(output_activation="softmax")
        adv = d.head_hidden if d.adversary_hidden is None else d.adversary_hidden
        self.Cy_sem = Mlp.build("Cy_sem", [d.k_y, *d.head_hidden, d.n_classes], seeds[4], **head)
        self.Cd_sem = Mlp.build("Cd_sem", [d.k_y, *adv, N_DOMAINS], seeds[5], **head)
        self.Cd_dom = Mlp.build("Cd_dom", [d.k_d, *d.head_hidden, N_DOMAINS], seeds[6], **head)
        self.Cy_dom = Mlp.build("Cy_dom", [d.k_d, *adv, d.n_classes], seeds[7], **head)
        self.params = ParamStore()
        for g in GROUPS:
            self.params.register_all(getattr(self, g).parameters())

    def group(self, name: str) -> "OrderedDict[str, Tensor]":
        prefix = name + "."
        return OrderedDict((k, v) for k, v in self.params.items() if k.startswith(prefix))

    # -- forward pieces -------------------------------------------------

    def features(self, x) -> Tensor:
        return self.G(x)

    def _gaussian(self, enc: Mlp, feat: Tensor, k: int):
        out = enc(feat)
        mu = ad.slice_cols(out, 0, k)
        logvar = ad.clip(ad.slice_cols(out, k, 2 * k), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    def encode_means(self, x) -> tuple[Tensor, Tensor]:
        feat = self.G(x)
        return (ad.slice_cols(self.Hy(feat), 0, self.k_y),
                ad.slice_cols(self.Hd(feat), 0, self.k_d))

    def encode(self, x, rng: np.random.Generator | None = None, eps_y=None,
               eps_d=None) -> LatentSample:
        """Reparameterized sample ``z = mu + exp(logvar / 2) * eps``.

        Noise comes from ``rng`` unless ``eps_y``/``eps_d`` are given.
        """
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.dims.in_dim:
            raise DimensionError(f"encode: expected n x {self.dims.in_dim}, got {x.shape}")
        n = x.shape[0]
        if eps_y is None or eps_d is None:
            if rng is None:
                raise ValueError("encode needs an rng or explicit eps draws")
            draw_y = rng.standard_normal((n, self.k_y))
            draw_d = rng.standard_normal((n, self.k_d))
            eps_y = draw_y if eps_y is None else eps_y
            eps_d = draw_d if eps_d is None else eps_d
        eps_y = np.asarray(eps_y, dtype=np.float64)
        eps_d = np.asarray(eps_d, dtype=np.float64)
        feat = self.G(x)
        mu_y, logvar_y = self._gaussian(self.Hy, feat, self.k_y)
        mu_d, logvar_d = self._gaussian(self.Hd, feat, self.k_d)
        z_y = reparameterize(mu_y, logvar_y, eps_y)
        z_d = reparameterize(mu_d, logvar_d, eps_d)
        return LatentSample(mu_y, logvar_y, mu_d, logvar_d, z_y, z_d, eps_y, eps_d, feat)

    def decode(self, z_y, z_d) -> Tensor:
        z_y, z_d = ad.as_tensor(z_y), ad.as_tensor(z_d)
        if z_y.ndim != 2 or z_y.shape[1] != self.k_y or z_d.ndim != 2 or z_d.shape[1] != self.k_d:
            raise DimensionError(f"decode: expected widths ({self.k_y}, {self.k_d}), "
                                 f"got {z_y.shape} and {z_d.shape}")
        return self.dec(ad.concat_cols([z_y, z_d]))

    def heads(self, z_y, z_d, lambda_sem: float, lambda_dom: float, adv_y=None,
              adv_d=None) -> dict[str, Tensor]:
        """Head probabilities. The two GRL heads read ``adv_y``/``adv_d`` when given
        (e.g. the encoder means), otherwise the same latents as the other heads."""
        adv_y = z_y if adv_y is None else adv_y
        adv_d = z_d if adv_d is None else adv_d
        return {
            "p_y_sem": self.Cy_sem(z_y),
            "p_d_sem": self.Cd_sem(ad.grad_reverse(adv_y, lambda_sem)),
            "p_d_dom": self.Cd_dom(z_d),
            "p_y_dom": self.Cy_dom(ad.grad_reverse(adv_d, lambda_dom)),
        }

    def copy(self) -> "DsrModel":
        """Independent copy with the same parameter values."""
        fresh = DsrModel(self.dims, 0)
        fresh.params.load_arrays(self.params.arrays())
        return fresh


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    return ad.add(mu, ad.mul(ad.exp(ad.scale(logvar, 0.5)), eps))
