import numpy as np
import pytest

from dsrlab import autodiff as ad
from dsrlab.data import (GenSpec, TrainingView, batches, generate, load_features, load_oracle,
                         save_features, save_oracle)
from dsrlab.errors import ConfigError, DataError
from dsrlab.losses import cross_entropy
from dsrlab.nn import Adam, Mlp

SMALL = GenSpec(n_source=300, n_target=200)


def test_generate_is_deterministic_and_shaped():
    a, b = generate(SMALL, 3), generate(SMALL, 3)
    assert a.source_x.tobytes() == b.source_x.tobytes()
    assert a.target_x.tobytes() == b.target_x.tobytes()
    assert a.source_x.shape == (300, 16) and a.target_x.shape == (200, 16)
    assert np.all(np.abs(a.source_x) < 1)
    assert generate(SMALL, 4).source_x.tobytes() != a.source_x.tobytes()


def test_default_domain_gap():
    spec = GenSpec()
    assert np.isclose(np.linalg.norm(spec.domain_means[1] - spec.domain_means[0]),
                      4 * spec.sigma * 2)


def test_latent_moments_and_independence():
    ds = generate(GenSpec(n_source=10 ** 4, n_target=10), 0)
    zy, zd = ds.source_latents
    for c in (0, 1):
        cov = np.cov(zy[ds.source_y == c].T)
        np.testing.assert_allclose(cov, 0.25 * np.eye(2), atol=0.025)
    for i in range(2):
        for j in range(2):
            assert abs(np.corrcoef(zy[:, i], zd[:, j])[0, 1]) < 0.05


def _mlp_domain_accuracy(x, dom, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(x))
    tr, te = perm[:int(0.7 * len(x))], perm[int(0.7 * len(x)):]
    net = Mlp.build("probe", [x.shape[1], 16, 2], rng, output_activation="softmax")
    opt = Adam({p.name: p for p in net.parameters()}, lr=0.01)
    for _ in range(300):
        with ad.Tape():
            g = ad.backward(cross_entropy(net(x[tr]), dom[tr]))
        opt.step({p.name: g[p] for p in net.parameters()})
    with ad.no_grad():
        pred = np.argmax(net(x[te]).data, axis=1)
    return float(np.mean(pred == dom[te]))


@pytest.mark.parametrize("seed", range(5))
def test_identical_domain_means_are_indistinguishable(seed):
    ds = generate(GenSpec(domain_gap=0.0, n_source=1000, n_target=1000), seed)
    x = np.concatenate([ds.source_x, ds.target_x])
    assert _mlp_domain_accuracy(x, ds.domain_tags(), seed) <= 0.55


def test_shifted_domains_are_distinguishable():
    ds = generate(GenSpec(n_source=1000, n_target=1000), 0)
    x = np.concatenate([ds.source_x, ds.target_x])
    assert _mlp_domain_accuracy(x, ds.domain_tags(), 0) > 0.9


@pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(n_classes=1),
                                dict(class_means=[[0.0, 0.0], [0.5, 0.0]]),
                                dict(domain_means=[[0.0], [1.0]]), dict(n_source=2)])
def test_degenerate_specs_rejected(kw):
    with pytest.raises(ConfigError):
        generate(GenSpec(**kw), 0)


def test_spec_dict_round_trip():
    spec = GenSpec(sigma=0.4, mixing_seed=3)
    back = GenSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()
    assert back.mixing_map()[0].tobytes() == spec.mixing_map()[0].tobytes()


def test_training_view_hides_target_labels():
    view = generate(SMALL, 0).training_view()
    assert isinstance(view, TrainingView)
    assert not hasattr(view, "target_y")


def test_file_round_trip_is_bitwise(tmp_path):
    ds = generate(SMALL, 1)
    save_features(ds, tmp_path / "s.csv", tmp_path / "t.csv")
    save_oracle(ds, tmp_path / "o.csv")
    back = load_features(tmp_path / "s.csv", tmp_path / "t.csv", oracle_path=tmp_path / "o.csv")
    assert back.source_x.tobytes() == ds.source_x.tobytes()
    assert back.target_x.tobytes() == ds.target_x.tobytes()
    np.testing.assert_array_equal(back.source_y, ds.source_y)
    np.testing.assert_array_equal(back.target_y, ds.target_y)
    assert back.source_latents[0].tobytes() == ds.source_latents[0].tobytes()
    plain = load_features(tmp_path / "s.csv", tmp_path / "t.csv")
    assert plain.target_y is None
    arr, k_y = load_oracle(tmp_path / "o.csv")
    assert arr.shape == (500, 6) and k_y == 2


def _write(path, text):
    path.write_text(text)
    return path


def test_file_errors_carry_line_numbers(tmp_path):
    tgt = _write(tmp_path / "t.csv", "f0,f1\n0.1,0.2\n")
    cases = {
        "ragged": "label,f0,f1\n0,0.1,0.2\n1,0.3\n",
        "text": "label,f0,f1\n0,0.1,abc\n",
        "range": "label,f0,f1\n0,0.1,0.2\n1,0.1,0.2\n7,0.1,0.2\n",
        "unlabeled": "label,f0,f1\n0,0.1,0.2\n-1,0.1,0.2\n",
    }
    for name, text in cases.items():
        src = _write(tmp_path / f"{name}.csv", text)
        with pytest.raises(DataError, match=r":\d+:"):
            load_features(src, tgt, n_classes=2)


def test_file_shape_errors(tmp_path):
    src = _write(tmp_path / "s.csv", "label,f0,f1\n0,0.1,0.2\n1,0.3,0.4\n")
    with pytest.raises(DataError, match="mismatch"):
        load_features(src, _write(tmp_path / "t3.csv", "f0,f1,f2\n0.1,0.2,0.3\n"))
    with pytest.raises(DataError, match="target"):
        load_features(src, _write(tmp_path / "t0.csv", "f0,f1\n"))
    with pytest.raises(DataError):
        load_features(tmp_path / "nope.csv", src)


def test_batches_are_balanced_and_deterministic():
    view = generate(SMALL, 0).training_view()
    first = list(batches(view, 32, 9))
    again = list(batches(view, 32, 9))
    assert len(first) == 200 // 16
    for b, c in zip(first, again):
        assert b.x.shape == (32, 16) and b.n_source == 16
        assert np.sum(b.domain == 0) == np.sum(b.domain == 1) == 16
        np.testing.assert_array_equal(b.source_idx, c.source_idx)
        np.testing.assert_array_equal(b.x[:16], view.source_x[b.source_idx])
    src = np.concatenate([b.source_idx for b in first])
    assert len(set(src.tolist())) == len(src) == 12 * 16


def test_full_epoch_covers_all_indices():
    ds = generate(GenSpec(n_source=128, n_target=128), 0)
    src = np.concatenate([b.source_idx for b in batches(ds.training_view(), 32, 0)])
    assert sorted(src.tolist()) == list(range(128))


@pytest.mark.parametrize("size", [0, 3, 31])
def test_odd_batch_size_rejected(size):
    with pytest.raises(ConfigError):
        list(batches(generate(SMALL, 0).training_view(), size, 0))
