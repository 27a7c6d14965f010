"""Finite-difference check of the full DSR objective on one 8-row batch.

Run:  python demos/gradient_check.py

With GRL coefficient -1 every reversal layer is a plain identity, so the
tape's gradient must equal the numerical gradient of the total loss.
"""

import numpy as np

from dsrlab import DsrModel, GenSpec, TrainConfig, generate
from dsrlab import autodiff as ad
from dsrlab.trainer import dsr_objective

cfg = TrainConfig()
model = DsrModel(cfg.model_dims(16, 2), 0)
data = generate(GenSpec(n_source=4, n_target=4), 0)
x = np.concatenate([data.source_x, data.target_x])
dom = np.repeat([0, 1], 4)
rng = np.random.default_rng(0)
eps = (rng.standard_normal((8, cfg.k_y)), rng.standard_normal((8, cfg.k_d)))


def loss():
    return dsr_objective(model, x, data.source_y, dom, 4, cfg, -1.0, -1.0, eps=eps)[0]


with ad.Tape():
    grads = ad.backward(loss())

h = 1e-6
for name, p in model.params.items():
    flat = p.data.reshape(-1)
    idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
    num = np.empty(len(idx))
    with ad.no_grad():
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = float(loss().data)
            flat[i] = old - h
            down = float(loss().data)
            flat[i] = old
            num[j] = (up - down) / (2 * h)
    ana = grads[p].reshape(-1)[idx]
    err = np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
    print(f"{name:18s} rel err {err:.2e}")
