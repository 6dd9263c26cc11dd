import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from chauffeur.dynamics import BicycleAction
from chauffeur.errors import DomainError, ParseError, ShapeMismatch, ValidationError, VersionMismatch
from chauffeur.neuro import autograd as ag
from chauffeur.neuro.autograd import Tensor
from chauffeur.neuro.beta import (BetaParams, beta_entropy, beta_log_prob, beta_stats, entropy_t, log_prob_t,
                                  map_action, sample_beta, unmap_action)
from chauffeur.neuro.model import (EncoderConfig, encode, forward, heads_forward, init_params, load_checkpoint,
                                   save_checkpoint)
from chauffeur.neuro.optim import AdamState, adam_step, clip_by_global_norm, gradients

SMALL = EncoderConfig(layers=1, heads=2, model_dim=8, ff_dim=16)


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        o = x[i]
        x[i] = o + h
        fp = f(x)
        x[i] = o - h
        fm = f(x)
        x[i] = o
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


UNARY = {
    "exp": ag.exp, "tanh": ag.tanh, "gelu": ag.gelu, "softplus": ag.softplus,
    "log": lambda t: ag.log(ag.exp(t) + 1.0), "digamma": lambda t: ag.digamma(ag.exp(t) + 0.5),
}


class TestAutograd:
    def test_sum_squares(self, rng):
        v = Tensor(rng.normal(size=5), requires_grad=True)
        (v * v).sum().backward()
        np.testing.assert_allclose(v.grad, 2 * v.data)

    def test_unreached_zero(self, rng):
        t = {"a": Tensor(rng.normal(size=3), requires_grad=True), "b": Tensor(rng.normal(size=3), requires_grad=True)}
        g = gradients((t["a"] ** 2).sum(), t)
        assert list(g) == ["a", "b"]
        np.testing.assert_array_equal(g["b"], 0.0)

    @pytest.mark.parametrize("name", sorted(UNARY))
    def test_unary_fd(self, name, rng):
        fn = UNARY[name]
        x0 = rng.normal(size=(3, 4))
        t = Tensor(x0.copy(), requires_grad=True)
        fn(t).sum().backward()
        num = fd_grad(lambda x: fn(Tensor(x)).sum().item(), x0.copy())
        assert rel_err(t.grad, num) < 1e-6

    def test_two_layer_net_fd(self, rng):
        params = {"w1": rng.normal(size=(4, 6)), "b1": rng.normal(size=6),
                  "w2": rng.normal(size=(6, 2)), "b2": rng.normal(size=2)}
        x = rng.normal(size=(5, 4))
        y = rng.normal(size=(5, 2))

        def loss(t):
            h = ag.tanh(Tensor(x) @ t["w1"] + t["b1"])
            return (((h @ t["w2"] + t["b2"]) - y) ** 2).mean()

        t = {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
        g = gradients(loss(t), t)
        for k in params:
            def f(a, k=k):
                return loss({n: Tensor(a if n == k else params[n]) for n in params}).item()
            assert rel_err(g[k], fd_grad(f, params[k].copy())) < 1e-4

    def test_masked_softmax_and_layer_norm_fd(self, rng):
        x0 = rng.normal(size=(2, 5))
        mask = np.array([[True, True, False, True, False], [True, False, True, True, True]])
        g0, b0 = rng.normal(size=5), rng.normal(size=5)
        w = rng.normal(size=(2, 5))

        def f(x):
            s = ag.masked_softmax(Tensor(x), mask)
            return (ag.layer_norm(s, Tensor(g0), Tensor(b0)) * w).sum().item()

        t = Tensor(x0.copy(), requires_grad=True)
        (ag.layer_norm(ag.masked_softmax(t, mask), Tensor(g0), Tensor(b0)) * w).sum().backward()
        assert rel_err(t.grad, fd_grad(f, x0.copy())) < 1e-6

    def test_broadcast_unbroadcasts(self, rng):
        a = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        (a * b).sum().backward()
        assert a.grad.shape == (3, 1) and b.grad.shape == (4,)
        np.testing.assert_allclose(a.grad[:, 0], np.full(3, b.data.sum()))


def _batch(rng, b=3, r=12):
    tok = rng.normal(0, 3, size=(b, r, 7))
    mask = rng.random((b, r)) < 0.6
    mask[:, 0] = True
    tok[~mask] = 0
    return tok, mask


class TestEncoder:
    def test_shape(self, rng):
        p = init_params(SMALL, 0)
        tok, mask = _batch(rng)
        assert encode(tok, mask, p, SMALL).data.shape == (3, 8)

    def test_padding_rows_ignored(self, rng):
        p = init_params(SMALL, 0)
        tok, mask = _batch(rng, b=1)
        tok2 = tok.copy()
        tok2[~mask] = rng.normal(size=tok2[~mask].shape)
        np.testing.assert_array_equal(encode(tok, mask, p, SMALL).data, encode(tok2, mask, p, SMALL).data)

    def test_permutation_invariant(self, rng):
        p = init_params(SMALL, 0)
        tok, mask = _batch(rng, b=1)
        perm = rng.permutation(tok.shape[1])
        a = encode(tok, mask, p, SMALL).data
        b = encode(tok[:, perm], mask[:, perm], p, SMALL).data
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_batch_independent(self, rng):
        p = init_params(SMALL, 0)
        tok, mask = _batch(rng)
        full = encode(tok, mask, p, SMALL).data
        for i in range(3):
            np.testing.assert_allclose(encode(tok[i:i + 1], mask[i:i + 1], p, SMALL).data[0], full[i], atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            encode(np.zeros((1, 4, 6)), np.ones((1, 4), bool), init_params(SMALL, 0), SMALL)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            EncoderConfig(model_dim=10, heads=3)

    def test_head_shapes(self, rng):
        p = init_params(SMALL, 0)
        tok, mask = _batch(rng)
        assert forward(tok, mask, p, "il_bicycle", SMALL).action.data.shape == (3, 2)
        assert forward(tok, mask, p, "il_waypoint", SMALL).action.data.shape == (3, 3)
        o = forward(tok, mask, p, "rl", SMALL)
        assert o.alpha.data.shape == (3, 2) and o.value.data.shape == (3,)
        assert np.all(o.alpha.data > 1) and np.all(o.beta.data > 1)

    def test_zero_final_layer(self):
        p = init_params(SMALL, 0)
        p["rl.pi.out.w"] = np.zeros_like(p["rl.pi.out.w"])
        out = heads_forward(np.zeros((2, 8)), p, "rl")
        np.testing.assert_allclose(out.alpha.data, np.log(2) + 1)
        np.testing.assert_allclose(out.beta.data, np.log(2) + 1)

    def test_unknown_head(self):
        with pytest.raises(ValidationError):
            init_params(SMALL, 0, heads=("teleport",))

    def test_checkpoint_round_trip(self, rng, tmp_path):
        p = init_params(SMALL, 3)
        save_checkpoint(p, tmp_path / "c.ckpt", {"head": "rl"})
        q, cfg = load_checkpoint(tmp_path / "c.ckpt")
        assert cfg == {"head": "rl"} and q.equal(p)
        tok, mask = _batch(rng)
        np.testing.assert_array_equal(forward(tok, mask, p, "rl", SMALL).alpha.data,
                                      forward(tok, mask, q, "rl", SMALL).alpha.data)

    def test_checkpoint_errors(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"nonsense\n")
        with pytest.raises(ParseError):
            load_checkpoint(bad)
        save_checkpoint(init_params(SMALL, 0), tmp_path / "c.ckpt")
        data = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "v.ckpt").write_bytes(data.replace(b'"version": 1', b'"version": 7', 1))
        with pytest.raises(VersionMismatch):
            load_checkpoint(tmp_path / "v.ckpt")
        (tmp_path / "t.ckpt").write_bytes(data[:-8])
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "t.ckpt")


class TestBeta:
    def test_means(self):
        assert beta_stats(BetaParams(2.0, 2.0)).mean == 0.5
        assert beta_stats(BetaParams(3.0, 1.0)).mean == 0.75

    def test_entropy_quadrature(self):
        x = (np.arange(1_000_000) + 0.5) / 1_000_000
        p = stats.beta(2, 2).pdf(x)
        quad = -np.sum(p * np.log(p)) / 1_000_000
        assert float(beta_entropy(2.0, 2.0)) == pytest.approx(quad, abs=1e-6)

    @given(st.floats(1.01, 20), st.floats(1.01, 20), st.floats(0.01, 0.99))
    def test_log_prob_matches_scipy(self, a, b, x):
        assert float(beta_log_prob(x, a, b)) == pytest.approx(stats.beta(a, b).logpdf(x), rel=1e-9, abs=1e-9)
        assert float(beta_entropy(a, b)) == pytest.approx(stats.beta(a, b).entropy(), rel=1e-9, abs=1e-9)

    def test_domain(self):
        with pytest.raises(DomainError):
            beta_log_prob(1.0, 2.0, 2.0)
        with pytest.raises(DomainError):
            beta_stats(BetaParams(2.0, 2.0)).log_prob(0.0)

    def test_tensor_versions_match(self, rng):
        a, b = rng.uniform(1, 5, (4, 2)), rng.uniform(1, 5, (4, 2))
        x = rng.uniform(0.05, 0.95, (4, 2))
        np.testing.assert_allclose(log_prob_t(x, Tensor(a), Tensor(b)).data, beta_log_prob(x, a, b).sum(-1))
        np.testing.assert_allclose(entropy_t(Tensor(a), Tensor(b)).data, beta_entropy(a, b).sum(-1))

    def test_samples_clamped(self, rng):
        u = sample_beta(rng, np.full(1000, 0.01), np.full(1000, 0.01))
        assert np.all((u > 0) & (u < 1))

    def test_map_action(self):
        assert map_action([0.5, 0.5]) == BicycleAction(0.0, 0.0)
        assert map_action([1.0, 0.0]) == BicycleAction(6.0, -0.3)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_map_round_trip(self, u0, u1):
        np.testing.assert_allclose(unmap_action(map_action([u0, u1])), [u0, u1], atol=1e-12)


class TestAdam:
    def _store(self, value):
        p = init_params(SMALL, 0, heads=())
        for k in p.names():
            p[k] = np.full_like(p[k], value)
        return p

    def test_zero_grads(self):
        p = self._store(1.0)
        before = p.copy()
        st_ = AdamState()
        adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, st_, 0.1)
        assert p.equal(before) and st_.t == 1

    def test_first_step(self):
        p = self._store(1.0)
        adam_step(p, {k: np.ones_like(v) for k, v in p.items()}, AdamState(), 0.1)
        for _, v in p.items():
            np.testing.assert_allclose(v, 0.9, atol=1e-6)

    def test_clip(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        out, norm = clip_by_global_norm(grads, 0.5)
        assert norm == 5.0
        np.testing.assert_allclose(out["a"], [0.3])
        np.testing.assert_allclose(out["b"], [0.4])

    def test_lr_zero(self):
        p = self._store(2.0)
        before = p.copy()
        adam_step(p, {k: np.ones_like(v) for k, v in p.items()}, AdamState(), 0.0)
        assert p.equal(before)
