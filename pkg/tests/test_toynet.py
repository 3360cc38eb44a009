import numpy as np
import pytest

from resnet_ensembles import toynet as tn
from resnet_ensembles.errors import ParameterError

SMALL = dict(p=3, n=4, d=3, num_classes=3, samples_per_class=5)


def setup(use_bn=True, loss="xent", seed=0):
    cfg = tn.ToyNetConfig(**{**SMALL, "num_classes": 2 if loss == "hinge" else 3}, use_bn=use_bn, loss=loss)
    data = tn.make_dataset(cfg.num_classes, cfg.d, cfg.samples_per_class, seed)
    params = tn.init_params(cfg, np.random.default_rng(seed))
    params.lambdas = np.array([0.8, 1.3, 0.9])
    return cfg, data, params


def flat_params(params):
    parts = [w.ravel() for w in params.W] + [params.lambdas]
    if params.readout is not None:
        parts.append(params.readout.ravel())
    return np.concatenate(parts)


def unflat(params, vec):
    out = params.copy()
    i = 0
    for w in out.W:
        w[...] = vec[i : i + w.size].reshape(w.shape)
        i += w.size
    out.lambdas[...] = vec[i : i + out.lambdas.size]
    i += out.lambdas.size
    if out.readout is not None:
        out.readout[...] = vec[i:].reshape(out.readout.shape)
    return out


def flat_grads(g):
    parts = [w.ravel() for w in g.W] + [g.lambdas]
    if g.readout is not None:
        parts.append(g.readout.ravel())
    return np.concatenate(parts)


class TestGradients:
    @pytest.mark.parametrize("use_bn", [True, False])
    @pytest.mark.parametrize("loss", ["xent", "hinge"])
    def test_finite_difference(self, use_bn, loss):
        cfg, data, params = setup(use_bn, loss)
        _, cache = tn.forward(params, cfg, data.X)
        sig = cache.sigmas  # hold the normalizers fixed, as the backward pass does
        val, grads = tn.backward(params, cfg, data.X, data.y, sigmas=sig)
        x0 = flat_params(params)
        analytic = flat_grads(grads)
        if not use_bn:
            analytic[sum(w.size for w in params.W):][: cfg.p] = 0.0
        h = 1e-6
        fd = np.zeros_like(x0)
        for i in range(x0.size):
            e = np.zeros_like(x0)
            e[i] = h
            up = tn.backward(unflat(params, x0 + e), cfg, data.X, data.y, sigmas=sig)[0]
            dn = tn.backward(unflat(params, x0 - e), cfg, data.X, data.y, sigmas=sig)[0]
            fd[i] = (up - dn) / (2 * h)
        err = np.linalg.norm(fd - analytic) / np.linalg.norm(fd)
        assert err < 1e-4

    def test_last_scale_gradient_direct_formula(self):
        # dL/dlambda_l equals sum(dh * u) / sigma_l; check against a direct formula for l = p
        cfg, data, params = setup()
        out, cache = tn.forward(params, cfg, data.X)
        _, dout = tn.loss_value(out, data.y, "xent")
        dh = dout @ params.readout.T
        expected = float(np.sum(dh * cache.post[-1])) / cache.sigmas[-1]
        _, grads = tn.backward(params, cfg, data.X, data.y)
        assert grads.lambdas[-1] == pytest.approx(expected)


class TestForward:
    def test_normalizer_is_mean_unit_std(self):
        cfg, data, params = setup()
        _, cache = tn.forward(params, cfg, data.X)
        assert cache.sigmas[0] == pytest.approx(cache.post[0].std(axis=0).mean())

    def test_no_bn_scales_are_one(self):
        cfg, data, params = setup(use_bn=False)
        _, cache = tn.forward(params, cfg, data.X)
        np.testing.assert_array_equal(cache.scales, 1.0)

    def test_residual_structure(self):
        cfg, data, params = setup(use_bn=False)
        _, cache = tn.forward(params, cfg, data.X)
        h1 = cache.post[0]
        h2 = cache.post[1] + h1
        np.testing.assert_allclose(cache.inputs[2], h2)

    def test_bad_batch_shape(self):
        cfg, _, params = setup()
        with pytest.raises(ParameterError):
            tn.forward(params, cfg, np.zeros((4, cfg.d + 1)))

    def test_weight_norm_excludes_readout(self):
        _, _, params = setup()
        expected = np.sqrt(sum(np.sum(w**2) for w in params.W))
        assert params.weight_norm() == pytest.approx(expected)


class TestData:
    def test_shapes_and_labels(self):
        data = tn.make_dataset(4, 3, 7, seed=1)
        assert data.X.shape == (28, 3)
        assert np.bincount(data.y).tolist() == [7, 7, 7, 7]
        assert np.all(np.abs(data.means) <= 1.0)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            tn.make_dataset(4, 3, 0, seed=1)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(p=1), dict(n=0), dict(learning_rate=0.0), dict(iterations=-1), dict(loss="mse"), dict(loss="hinge")],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            tn.ToyNetConfig(**kwargs)

    def test_json_sorted(self):
        text = tn.ToyNetConfig().to_json()
        assert text.index('"batch_size"') < text.index('"d"')


class TestTraining:
    def test_zero_iterations_single_row(self):
        trace = tn.train(tn.ToyNetConfig(**SMALL, iterations=0))
        assert len(trace.rows) == 1
        assert trace.rows[0].iteration == 0
        np.testing.assert_array_equal(trace.final_lambdas, 1.0)

    def test_deterministic(self):
        cfg = tn.ToyNetConfig(**SMALL, iterations=40, log_every=10, seed=3)
        a, b = tn.train(cfg), tn.train(cfg)
        assert list(a.csv_rows()) == list(b.csv_rows())
        assert [r.iteration for r in a.rows] == [0, 10, 20, 30, 40]

    def test_loss_decreases(self):
        cfg = tn.ToyNetConfig(p=4, n=16, d=4, num_classes=5, samples_per_class=30, iterations=800, log_every=800)
        trace = tn.train(cfg)
        assert trace.rows[-1].loss < trace.rows[0].loss

    def test_no_bn_keeps_scales(self):
        trace = tn.train(tn.ToyNetConfig(**SMALL, use_bn=False, iterations=20))
        np.testing.assert_array_equal(trace.final_lambdas, 1.0)

    def test_divergence_is_flagged(self):
        cfg = tn.ToyNetConfig(**SMALL, use_bn=False, learning_rate=1e6, iterations=200, log_every=1)
        trace = tn.train(cfg)
        assert trace.diverged
        assert all(np.isfinite(r.loss) for r in trace.rows)

    def test_header_matches_rows(self):
        trace = tn.train(tn.ToyNetConfig(**SMALL, iterations=5))
        for row in trace.csv_rows():
            assert len(row) == len(trace.header())
