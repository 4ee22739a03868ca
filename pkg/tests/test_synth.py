import numpy as np
import pytest

from urlmatch.errors import ValidationError
from urlmatch.geometry import delaunay_edges
from urlmatch.synth import (
    SynthConfig,
    SynthDataset,
    generate_anchor,
    load_dataset,
    random_affine,
    replace_config,
    sample_graph,
    save_dataset,
)

SMALL = SynthConfig(n_univ=12, feat_dim=8, n_train=6, n_test=4)


def same_graph(a, b):
    return (
        a.coords.tobytes() == b.coords.tobytes()
        and a.features.tobytes() == b.features.tobytes()
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.edges, b.edges)
    )


class TestConfig:
    def test_defaults(self):
        cfg = SynthConfig()
        assert (cfg.n_univ, cfg.p_vis, cfg.sigma_feat, cfg.sigma_coo) == (25, 0.8, 1.5, 10.0)
        assert (cfg.feat_dim, cfg.n_train, cfg.n_test, cfg.seed) == (1024, 200, 100, 123)

    @pytest.mark.parametrize("bad", [dict(p_vis=1.5), dict(p_vis=-0.1), dict(sigma_feat=-1), dict(sigma_coo=-1),
                                     dict(p_vis=0.0), dict(n_univ=2), dict(scale_min=2.0, scale_max=1.0)])
    def test_invalid(self, bad):
        with pytest.raises(ValidationError):
            replace_config(SMALL, **bad)


class TestAnchor:
    def test_deterministic_and_in_range(self):
        cfg = SynthConfig()
        a, b = generate_anchor(cfg, 5), generate_anchor(cfg, 5)
        assert a.features.tobytes() == b.features.tobytes() and a.coords.tobytes() == b.coords.tobytes()
        assert a.features.shape == (25, 1024) and a.coords.shape == (25, 2)
        assert a.features.min() >= -1 and a.features.max() <= 1
        assert a.coords.min() >= 0 and a.coords.max() <= 256

    def test_seed_changes_anchor(self):
        assert not np.array_equal(generate_anchor(SMALL, 1).features, generate_anchor(SMALL, 2).features)


class TestSampleGraph:
    def test_noise_free_full_visibility_is_the_anchor(self):
        cfg = replace_config(SMALL.noise_free(), p_vis=1.0)
        anchor = generate_anchor(cfg)
        g = sample_graph(anchor, cfg, index=3)
        assert np.array_equal(g.coords, anchor.coords)
        assert np.array_equal(g.features, anchor.features)
        assert g.labels.tolist() == list(range(12))
        assert g.undirected_edges() == delaunay_edges(anchor.coords)

    def test_binomial_node_count(self):
        cfg = SynthConfig(feat_dim=1, sigma_feat=0.0)
        anchor = generate_anchor(cfg)
        sizes = [sample_graph(anchor, cfg, index=i).m for i in range(10000)]
        assert min(sizes) >= 3
        assert abs(np.mean(sizes) - 20.0) <= 0.5

    def test_deterministic(self):
        anchor = generate_anchor(SMALL)
        assert same_graph(sample_graph(anchor, SMALL, index=4), sample_graph(anchor, SMALL, index=4))
        assert not same_graph(sample_graph(anchor, SMALL, index=4), sample_graph(anchor, SMALL, index=5))

    def test_low_visibility_resamples(self):
        cfg = replace_config(SMALL, p_vis=0.05)
        anchor = generate_anchor(cfg)
        assert all(sample_graph(anchor, cfg, index=i).m >= 3 for i in range(20))

    def test_affine_is_similarity(self):
        rng = np.random.default_rng(0)
        a, b = random_affine(rng, SynthConfig())
        s = np.sqrt(abs(np.linalg.det(a)))
        assert 0.8 <= s <= 1.2
        np.testing.assert_allclose(a @ a.T, s * s * np.eye(2), atol=1e-12)
        angle = np.degrees(np.arctan2(a[1, 0], a[0, 0]))
        assert -30 <= angle <= 30
        # the canvas center moves by the translation only
        shift = np.array([128.0, 128.0]) @ a.T + b - 128.0
        assert np.abs(shift).max() <= 20 + 1e-9

    def test_features_follow_noise_level(self):
        cfg = SynthConfig(n_univ=25, feat_dim=400, sigma_feat=1.5)
        anchor = generate_anchor(cfg)
        g = sample_graph(anchor, cfg, index=0)
        resid = g.features - anchor.features[g.labels]
        assert abs(resid.std() - 1.5) < 0.05


class TestDataset:
    def test_splits(self):
        ds = SynthDataset(SMALL)
        assert len(ds.train) == 6 and len(ds.test) == 4
        assert same_graph(ds.test[0], ds.graph(6))
        assert same_graph(ds.test[-1], ds.graph(9))
        with pytest.raises(IndexError):
            ds.test[4]

    def test_default_sizes(self):
        ds = SynthDataset(replace_config(SynthConfig(), feat_dim=2))
        assert len(ds.train) == 200 and len(ds.test) == 100

    def test_lazy_generation_matches_cached(self, monkeypatch):
        cached = SynthDataset(SMALL)
        monkeypatch.setattr(SynthDataset, "CACHE_BYTES", 0)
        lazy = SynthDataset(SMALL)
        assert all(same_graph(cached.graph(i), lazy.graph(i)) for i in range(10))

    def test_file_round_trip(self, tmp_path):
        ds = SynthDataset(SMALL)
        save_dataset(ds, tmp_path / "a.jsonl")
        save_dataset(SynthDataset(SMALL), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        loaded = load_dataset(tmp_path / "a.jsonl")
        assert loaded.cfg == SMALL
        assert loaded.anchor.features.tobytes() == ds.anchor.features.tobytes()
        assert all(same_graph(loaded.graph(i), ds.graph(i)) for i in range(10))
        save_dataset(loaded, tmp_path / "c.jsonl")
        assert (tmp_path / "c.jsonl").read_bytes() == (tmp_path / "a.jsonl").read_bytes()

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type": "graph"}\n')
        with pytest.raises(ValidationError):
            load_dataset(path)
        ds = SynthDataset(SMALL)
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValidationError):
            load_dataset(path)
