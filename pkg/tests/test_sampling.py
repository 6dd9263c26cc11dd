import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chauffeur.errors import InsufficientScenarios, PerplexityTooHigh, ValidationError
from chauffeur.generate import ScenarioFamilySpec, generate_scenario
from chauffeur.neuro.model import EncoderConfig, init_params
from chauffeur.sampling import (FeatureSet, SneConfig, conditional_affinities, extract_features, kmeans, lloyd,
                                nearest_unique, read_embedding_csv, sne_sample, tsne, write_embedding_csv,
                                write_subset)
from chauffeur.scenario import AgentLog, Scenario

SMALL = EncoderConfig(layers=1, heads=2, model_dim=8, ff_dim=16)
FAST = SneConfig(perplexity=5, iterations=300, exaggeration_iters=100)
SMALL_N = SneConfig(perplexity=10, learning_rate="auto")


def two_blobs(rng, n=30, dim=5, sep=100.0):
    a = rng.normal(size=(n, dim))
    b = rng.normal(size=(n, dim)) + sep
    return np.vstack([a, b]), np.repeat([0, 1], n)


def nn_purity(points, labels):
    d = np.sum((points[:, None] - points[None]) ** 2, -1)
    np.fill_diagonal(d, np.inf)
    return float(np.mean(labels[np.argmin(d, 1)] == labels))


@pytest.fixture(scope="module")
def scenes():
    return [generate_scenario(ScenarioFamilySpec("curve", 2, seed=s)) for s in range(3)]


class TestFeatures:
    def test_shape(self, scenes):
        fs = extract_features(scenes, init_params(SMALL, 0), SMALL)
        assert fs.features.shape == (3, 8) and fs.scenario_ids == [s.id for s in scenes]

    def test_same_scenario_same_row(self, scenes):
        p = init_params(SMALL, 0)
        a = extract_features(scenes[:1], p, SMALL).features
        b = extract_features(scenes[:1], p, SMALL).features
        np.testing.assert_array_equal(a, b)

    def test_rigid_transform_invariant(self, scenes):
        s = scenes[0]
        moved = Scenario("moved", [p + [64.0, -32.0] for p in s.map_polylines], s.routing + [64.0, -32.0],
                         [AgentLog(a.width, a.length, a.states + [64.0, -32.0, 0, 0, 0], a.kind) for a in s.agents])
        p = init_params(SMALL, 0)
        np.testing.assert_allclose(extract_features([s], p, SMALL).features,
                                   extract_features([moved], p, SMALL).features, atol=1e-12)

    def test_mean_aggregation(self, scenes):
        fs = extract_features(scenes[:1], init_params(SMALL, 0), SMALL, agg="mean")
        assert fs.features.shape == (1, 8)
        with pytest.raises(ValidationError):
            extract_features(scenes[:1], init_params(SMALL, 0), SMALL, agg="max")

    def test_featureset_validation(self):
        with pytest.raises(ValidationError):
            FeatureSet(np.zeros((2, 3)), ["a", "a"])
        with pytest.raises(ValidationError):
            FeatureSet(np.zeros((2, 3)), ["a"])
        with pytest.raises(ValidationError):
            FeatureSet(np.full((1, 3), np.nan), ["a"])


class TestTsne:
    def test_perplexity_calibrated(self, rng):
        x = rng.normal(size=(50, 4))
        _, perp = conditional_affinities(x, 10.0)
        assert np.all(np.abs(perp - 10.0) < 1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_two_blob_purity(self, seed):
        x, lab = two_blobs(np.random.default_rng(seed))
        emb = tsne(x, SMALL_N, seed=seed)
        assert nn_purity(emb.points, lab) == 1.0

    def test_auto_learning_rate(self):
        assert SMALL_N.resolved_learning_rate(60) == 50.0
        assert SMALL_N.resolved_learning_rate(48_000) == 1000.0
        assert SneConfig().resolved_learning_rate(60) == 200.0

    def test_duplicates_close(self, rng):
        x = rng.normal(size=(40, 4))
        x[1] = x[0]
        emb = tsne(x, FAST)
        d = np.sqrt(np.sum((emb.points[:, None] - emb.points[None]) ** 2, -1))
        iu = np.triu_indices(len(x), 1)
        assert d[0, 1] < np.percentile(d[iu], 5)

    def test_deterministic(self, rng):
        x = rng.normal(size=(30, 3))
        a, b = tsne(x, FAST), tsne(x, FAST)
        np.testing.assert_array_equal(a.points, b.points)
        assert np.isfinite(a.final_kl)

    def test_perplexity_too_high(self, rng):
        with pytest.raises(PerplexityTooHigh):
            tsne(rng.normal(size=(15, 3)), FAST)


class TestKmeans:
    def test_k_equals_n(self, rng):
        pts = rng.normal(size=(7, 2))
        centers, labels = kmeans(pts, 7, seed=1)
        np.testing.assert_allclose(np.sort(centers, 0), np.sort(pts, 0))
        assert len(set(labels.tolist())) == 7

    def test_k_one(self, rng):
        pts = rng.normal(size=(20, 2))
        centers, labels = kmeans(pts, 1)
        np.testing.assert_allclose(centers[0], pts.mean(0), atol=1e-12)

    def test_blobs(self, rng):
        a = rng.normal(size=(50, 2)) * 0.3
        b = rng.normal(size=(50, 2)) * 0.3 + [20, 0]
        centers, _ = kmeans(np.vstack([a, b]), 2, seed=2)
        centers = centers[np.argsort(centers[:, 0])]
        assert np.linalg.norm(centers[0] - a.mean(0)) < 0.1
        assert np.linalg.norm(centers[1] - b.mean(0)) < 0.1

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_sse_non_increasing(self, seed, k):
        r = np.random.default_rng(seed)
        pts = r.normal(size=(40, 2))
        init = pts[r.choice(40, size=k, replace=False)].copy()
        _, _, sse, hist = lloyd(pts, init)
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))
        assert sse <= hist[0] + 1e-12

    def test_bad_k(self, rng):
        with pytest.raises(ValidationError):
            kmeans(rng.normal(size=(3, 2)), 4)

    def test_nearest_unique_distinct(self):
        pts = np.array([[0.0, 0], [0.1, 0], [5, 5]])
        centers = np.array([[0.0, 0], [0.05, 0]])
        assert nearest_unique(pts, centers) == [0, 1]


class TestSneSample:
    def _features(self, rng, n=40):
        return FeatureSet(rng.normal(size=(n, 4)), [f"s{i:03d}" for i in range(n)])

    def test_k_equals_pre_subset(self, rng):
        fs = self._features(rng)
        r = sne_sample(fs, SneConfig(perplexity=5, iterations=200, exaggeration_iters=50, K=20,
                                     pre_subset_size=20, seed=3))
        assert sorted(r.ids) == sorted(fs.scenario_ids[i] for i in r.pre_subset)

    def test_k_one_is_centroid_nearest(self, rng):
        fs = self._features(rng)
        r = sne_sample(fs, SneConfig(perplexity=5, iterations=200, exaggeration_iters=50, K=1, seed=0))
        pts = r.embedding.points
        best = int(np.argmin(np.sum((pts - pts.mean(0)) ** 2, 1)))
        assert r.ids == [fs.scenario_ids[r.pre_subset[best]]]

    def test_insufficient(self, rng):
        with pytest.raises(InsufficientScenarios):
            sne_sample(self._features(rng, 5), SneConfig(K=10))

    def test_outputs(self, rng, tmp_path):
        fs = self._features(rng)
        cfg = SneConfig(perplexity=5, iterations=200, exaggeration_iters=50, K=3, seed=1)
        r = sne_sample(fs, cfg)
        ids = [fs.scenario_ids[i] for i in r.pre_subset]
        write_embedding_csv(tmp_path / "e.csv", ids, r.embedding.points, r.labels, r.ids)
        write_subset(tmp_path / "s.json", r, 1, 3, "e.csv")
        back_ids, pts, labels, sel = read_embedding_csv(tmp_path / "e.csv")
        assert back_ids == ids and sorted(sel) == sorted(r.ids)
        np.testing.assert_allclose(pts, r.embedding.points, rtol=1e-8)
        assert sne_sample(fs, cfg).ids == r.ids
