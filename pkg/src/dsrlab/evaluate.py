"""Target classification, linear disentanglement probes, and PCA embeddings."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .errors import DataError
from .losses import cross_entropy
from .nn import Adam, Mlp

PROBE_STEPS = 200
PROBE_LR = 0.05
PROBE_TRAIN_FRACTION = 0.7
PROBE_MIN_PER_CLASS = 20


def predict(model, x) -> np.ndarray:
    """argmax of the semantic label head on the encoder mean (no sampling)."""
    with ad.no_grad():
        mu_y, _ = model.encode_means(x)
        p = model.Cy_sem(mu_y).data
    return np.argmax(p, axis=1)


def accuracy(model, x, y) -> float:
    return float(np.mean(predict(model, x) == np.asarray(y)))


def latent_means(model, x) -> tuple[np.ndarray, np.ndarray]:
    with ad.no_grad():
        mu_y, mu_d = model.encode_means(x)
    return mu_y.data, mu_d.data


def make_monitor(dataset: Dataset):
    """Per-epoch accuracy callback; the only place training metrics touch target labels."""
    def monitor(model) -> dict:
        out = {"source_accuracy": accuracy(model, dataset.source_x, dataset.source_y)}
        if dataset.target_y is not None:
            out["target_accuracy"] = accuracy(model, dataset.target_x, dataset.target_y)
        return out
    return monitor


# -- probes --------------------------------------------------------------


@dataclass
class ProbeResult:
    target: str
    accuracy: float
    chance: float
    n_eval: int

    def as_dict(self) -> dict:
        return asdict(self)


def _split(targets: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(len(targets))
    n_train = int(round(PROBE_TRAIN_FRACTION * len(targets)))
    return perm[:n_train], perm[n_train:]


def fit_linear_probe(latents, targets, n_classes: int, seed):
    """Standardize, then fit multinomial logistic regression with full-batch Adam.

    Returns ``(mean, std, model)``. Training starts from zero weights so the
    fit depends only on the standardized inputs.
    """
    latents = np.asarray(latents, dtype=np.float64)
    mean = latents.mean(axis=0)
    std = latents.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (latents - mean) / std
    clf = Mlp.build("probe", [z.shape[1], n_classes], seed, output_activation="softmax")
    clf.layers[0].weight.data = np.zeros_like(clf.layers[0].weight.data)
    opt = Adam({p.name: p for p in clf.parameters()}, lr=PROBE_LR)
    for _ in range(PROBE_STEPS):
        with ad.Tape():
            loss = cross_entropy(clf(z), targets)
            grads = ad.backward(loss)
        opt.step({p.name: grads[p] for p in clf.parameters()})
    return mean, std, clf


def probe_predict(fitted, latents) -> np.ndarray:
    mean, std, clf = fitted
    with ad.no_grad():
        p = clf((np.asarray(latents, dtype=np.float64) - mean) / std).data
    return np.argmax(p, axis=1)


def probe(latents, targets, seed, name: str = "probe", n_classes: int | None = None) -> ProbeResult:
    """Held-out accuracy of a fresh linear classifier predicting ``targets`` from ``latents``.

    Rows are split 70/30 at random (``seed``); the probe is trained on the 70%.
    """
    latents = np.asarray(latents, dtype=np.float64)
    targets = np.asarray(targets).astype(np.int64)
    if latents.ndim != 2 or latents.shape[0] != targets.shape[0]:
        raise DataError(f"probe: {latents.shape} latents vs {targets.shape} targets")
    n_classes = int(targets.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(targets, minlength=n_classes)
    if counts.min() < PROBE_MIN_PER_CLASS:
        raise DataError(f"probe {name}: need >= {PROBE_MIN_PER_CLASS} samples per class, "
                        f"got counts {counts.tolist()}")
    rng = np.random.default_rng(seed)
    tr, te = _split(targets, rng)
    missing = sorted(set(range(n_classes)) - set(targets[tr].tolist()))
    if missing:
        raise DataError(f"probe {name}: classes {missing} absent from the training split")
    fitted = fit_linear_probe(latents[tr], targets[tr], n_classes, rng)
    acc = float(np.mean(probe_predict(fitted, latents[te]) == targets[te]))
    return ProbeResult(name, acc, 1.0 / n_classes, int(len(te)))


PROBES = ("domain_from_zy", "label_from_zd", "label_from_zy", "domain_from_zd")


def run_probes(model, dataset: Dataset, seed) -> dict[str, ProbeResult]:
    """All four probes on encoder means over source + target rows."""
    if dataset.target_y is None:
        raise DataError("probes need target labels")
    x = np.concatenate([dataset.source_x, dataset.target_x])
    labels = np.concatenate([dataset.source_y, dataset.target_y])
    domains = dataset.domain_tags()
    mu_y, mu_d = latent_means(model, x)
    seeds = np.random.default_rng(seed).spawn(len(PROBES))
    plan = {
        "domain_from_zy": (mu_y, domains, 2),
        "label_from_zd": (mu_d, labels, dataset.n_classes),
        "label_from_zy": (mu_y, labels, dataset.n_classes),
        "domain_from_zd": (mu_d, domains, 2),
    }
    return {name: probe(lat, tgt, s, name, n)
            for (name, (lat, tgt, n)), s in zip(plan.items(), seeds)}


# -- PCA -----------------------------------------------------------------


def top_components(x, n_components: int = 2, tol: float = 1e-9, max_iter: int = 1000):
    """Leading eigenpairs of the sample covariance by power iteration with deflation.

    Returns ``(components[k x d], eigenvalues[k], mean[d])``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise DataError("need at least 3 samples")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    if np.trace(cov) <= 0:
        raise DataError("degenerate data: zero variance")
    d = cov.shape[0]
    comps, vals = [], []
    work = cov.copy()
    start = np.random.default_rng(0).standard_normal(d)
    for _ in range(min(n_components, d)):
        v = start.copy()
        for c in comps:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = work @ v
            for c in comps:
                w -= (w @ c) * c
            norm = np.linalg.norm(w)
            if norm < 1e-300:  # remaining spectrum is zero; any orthogonal unit vector will do
                break
            w /= norm
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        lam = float(v @ cov @ v)
        comps.append(v)
        vals.append(lam)
        work = work - lam * np.outer(v, v)
    comps = np.array(comps)
    while comps.shape[0] < n_components:  # d < n_components: pad with zero directions
        comps = np.vstack([comps, np.zeros(d)])
        vals.append(0.0)
    return comps, np.array(vals), mean


def pca_2d(x) -> tuple[np.ndarray, np.ndarray]:
    comps, vals, mean = top_components(x, 2)
    return (np.asarray(x, dtype=np.float64) - mean) @ comps.T, vals


def export_embedding(latents, labels, domains, out_path) -> np.ndarray:
    """Write ``pc1,pc2,label,domain`` rows and return the 2-D coordinates."""
    coords, _ = pca_2d(latents)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pc1", "pc2", "label", "domain"])
        for (a, b), y, dom in zip(coords, labels, domains):
            w.writerow([repr(float(a)), repr(float(b)), int(y), int(dom)])
    return coords
