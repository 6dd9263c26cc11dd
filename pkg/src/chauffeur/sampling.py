"""Scenario subset selection: encoder latents -> exact t-SNE -> k-means -> nearest points."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import observation as obs_mod
from .errors import InsufficientScenarios, PerplexityTooHigh, ValidationError
from .neuro.model import EncoderConfig, encode
from .simulator import SceneContext


@dataclass
class FeatureSet:
    features: np.ndarray  # (N, model_dim)
    scenario_ids: list

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if len(set(self.scenario_ids)) != len(self.scenario_ids):
            raise ValidationError("scenario ids must be unique")
        if len(self.features) != len(self.scenario_ids):
            raise ValidationError("one feature row per scenario id")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features must be finite")


@dataclass
class Embedding2D:
    points: np.ndarray
    final_kl: float


@dataclass(frozen=True)
class SneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float | str = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    pre_subset_size: int = None
    K: int = 100
    kmeans_restarts: int = 8
    seed: int = 0

    def resolved_learning_rate(self, n: int) -> float:
        """``"auto"`` scales the step with N so small sets do not scatter."""
        if self.learning_rate == "auto":
            return max(n / self.early_exaggeration / 4.0, 50.0)
        return float(self.learning_rate)

    def resolved_pre_subset(self, n: int) -> int:
        if self.pre_subset_size is not None:
            return self.pre_subset_size
        return min(n, max(20 * self.K, 500))


# -- features -------------------------------------------------------------

def _observations_at(scenario, t, cache, tokenizer, dims):
    states = np.array([a.states[t] for a in scenario.agents])
    return obs_mod.tokenize((states, dims, scenario.ego_index), cache, tokenizer)


def extract_features(scenarios, params, enc_cfg: EncoderConfig = EncoderConfig(),
                     tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig(), agg: str = "t0") -> FeatureSet:
    """Fusion-token latent per scenario, from the t=0 logged state (or the mean over all steps)."""
    if agg not in ("t0", "mean"):
        raise ValidationError(f"unknown feature aggregation {agg!r}")
    feats = []
    for s in scenarios:
        cache = obs_mod.preprocess_static(s, tokenizer)
        dims = SceneContext(s).dims
        steps = [0] if agg == "t0" else range(s.horizon_steps)
        tokens, mask = obs_mod.stack([_observations_at(s, t, cache, tokenizer, dims) for t in steps])
        lat = np.concatenate([encode(tokens[i:i + 1], mask[i:i + 1], params, enc_cfg).data
                              for i in range(len(tokens))])
        feats.append(lat.mean(axis=0))
    return FeatureSet(np.stack(feats), [s.id for s in scenarios])


# -- t-SNE ----------------------------------------------------------------

def _sq_dists(x):
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d_row, beta):
    """Shannon entropy (nats) and probabilities of one conditional row."""
    logits = -d_row * beta
    logits -= logits.max()
    p = np.exp(logits)
    s = p.sum()
    p /= s
    h = -np.sum(p[p > 0] * np.log(p[p > 0]))
    return h, p


def conditional_affinities(x, perplexity: float, tol: float = 1e-5, max_iter: int = 50):
    """Per-row Gaussian bandwidths matched to ``perplexity``.

    Bisection on log-precision inside [-100, 100]; returns ``(P_cond, perplexities)``.
    """
    n = len(x)
    d = _sq_dists(np.asarray(x, dtype=float))
    target = np.log(perplexity)
    p_cond = np.zeros((n, n))
    perp = np.zeros(n)
    for i in range(n):
        row = np.delete(d[i], i)
        lo, hi = -100.0, 100.0
        h, p = _row_entropy(row, 1.0)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            h, p = _row_entropy(row, np.exp(mid))
            if abs(h - target) < tol:
                break
            if h > target:
                lo = mid  # too flat: raise precision
            else:
                hi = mid
        p_cond[i, np.arange(n) != i] = p
        perp[i] = np.exp(h)
    return p_cond, perp


def tsne(f, cfg: SneConfig = SneConfig(), seed: int = None) -> Embedding2D:
    """Exact t-SNE to two dimensions."""
    x = f.features if isinstance(f, FeatureSet) else np.asarray(f, dtype=float)
    n = len(x)
    if n <= 3 * cfg.perplexity:
        raise PerplexityTooHigh(f"need more than {3 * cfg.perplexity:g} points, got {n}")
    p_cond, perp = conditional_affinities(x, cfg.perplexity)
    assert np.all(np.abs(perp - cfg.perplexity) < 1e-3), "bandwidth search missed the perplexity"
    p = (p_cond + p_cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    y = rng.normal(0.0, 1e-4, (n, 2))
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    lr = cfg.resolved_learning_rate(n)
    for it in range(cfg.iterations):
        exag = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = 0.5 if it < cfg.exaggeration_iters else 0.8
        num = 1.0 / (1.0 + _sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        w = (exag * p - q) * num
        grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y
        same = np.sign(grad) == np.sign(vel)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        vel = momentum * vel - lr * gains * grad
        y = y + vel
        y = y - y.mean(axis=0)
    num = 1.0 / (1.0 + _sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    kl = float(np.sum(p * np.log(p / q)))
    if not (np.all(np.isfinite(y)) and np.isfinite(kl)):
        raise ValidationError("t-SNE diverged")
    return Embedding2D(y, kl)


# -- k-means --------------------------------------------------------------

def _assign(points, centers):
    d = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    lab = np.argmin(d, axis=1)
    return lab, d[np.arange(len(points)), lab]


def _kmeans_pp(points, k, rng):
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = next(i for i in range(n) if i not in chosen)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def lloyd(points, centers, max_iter: int = 300):
    """Lloyd iterations; asserts the SSE never rises.  Returns (centers, labels, sse, history)."""
    history = []
    labels = None
    for _ in range(max_iter):
        new_labels, d2 = _assign(points, centers)
        sse = float(d2.sum())
        if history:
            assert sse <= history[-1] * (1 + 1e-12) + 1e-12, "k-means SSE increased"
        history.append(sse)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(len(centers)):
            members = labels == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point worst served by its centre
                far = int(np.argmax(d2))
                centers[j] = points[far]
                d2[far] = 0.0
        _, d2_after = _assign(points, centers)
        assert float(d2_after.sum()) <= sse * (1 + 1e-12) + 1e-12, "k-means SSE increased"
    labels, d2 = _assign(points, centers)
    return centers, labels, float(d2.sum()), history


def kmeans(points, k: int, restarts: int = 8, seed: int = 0, max_iter: int = 300):
    """k-means++ seeding then Lloyd; best SSE over ``restarts``.  Returns (centers, labels)."""
    points = np.asarray(points, dtype=float)
    if not 1 <= k <= len(points):
        raise ValidationError(f"need 1 <= K <= N, got K={k}, N={len(points)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        centers, labels, sse, _ = lloyd(points, _kmeans_pp(points, k, rng), max_iter)
        if best is None or sse < best[2]:
            best = (centers, labels, sse)
    return best[0], best[1]


def nearest_unique(points, centers):
    """Give every centre a distinct point, nearest first; ties go to the lowest index."""
    d = np.sum((centers[:, None, :] - points[None, :, :]) ** 2, axis=2)
    c_idx, p_idx = np.meshgrid(np.arange(len(centers)), np.arange(len(points)), indexing="ij")
    order = np.lexsort((c_idx.ravel(), p_idx.ravel(), d.ravel()))
    pick = [-1] * len(centers)
    used = set()
    for flat in order:
        c, p = int(c_idx.flat[flat]), int(p_idx.flat[flat])
        if pick[c] >= 0 or p in used:
            continue
        pick[c] = p
        used.add(p)
        if len(used) == len(centers):
            break
    return pick


@dataclass
class SampleResult:
    ids: list
    pre_subset: list  # indices into the feature set
    embedding: Embedding2D
    labels: np.ndarray
    centers: np.ndarray


def sne_sample(features: FeatureSet, cfg: SneConfig = SneConfig()) -> SampleResult:
    n = len(features.scenario_ids)
    m = cfg.resolved_pre_subset(n)
    if not (cfg.K <= m <= n):
        raise InsufficientScenarios(f"need |scenarios| >= pre-subset >= K, got {n} >= {m} >= {cfg.K}")
    rng = np.random.default_rng(cfg.seed)
    pre = np.sort(rng.choice(n, size=m, replace=False))
    emb = tsne(features.features[pre], cfg)
    centers, labels = kmeans(emb.points, cfg.K, cfg.kmeans_restarts, cfg.seed)
    pick = nearest_unique(emb.points, centers)
    ids = [features.scenario_ids[pre[i]] for i in pick]
    return SampleResult(ids, [int(i) for i in pre], emb, labels, centers)


def write_subset(path, result: SampleResult, seed: int, k: int, embedding_file: str) -> None:
    payload = {"seed": seed, "K": k, "ids": list(result.ids), "embedding_file": embedding_file}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_embedding_csv(path, ids, points, labels=None, selected=()) -> None:
    chosen = set(selected)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "cluster", "selected"])
        for i, sid in enumerate(ids):
            lab = int(labels[i]) if labels is not None else -1
            w.writerow([sid, format(float(points[i, 0]), ".9g"), format(float(points[i, 1]), ".9g"),
                        lab, int(sid in chosen)])


def read_embedding_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["id"] for r in rows]
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    labels = np.array([int(r["cluster"]) for r in rows], dtype=int)
    selected = [r["id"] for r in rows if r["selected"] == "1"]
    return ids, pts, labels, selected
