import numpy as np
import pytest

from ktgnn import autodiff as ad
from ktgnn.dtc import (DTCParams, classification_loss, dtc_forward,
                       generated_classifier, kl_loss, predict_silent,
                       total_loss, _bce)
from ktgnn.graph import SPLIT_NONE, SPLIT_TRAIN, build_graph

from conftest import check_grads, random_vs_graph


def make_graph(rng, n=12, label_rate=0.9):
    g = random_vs_graph(rng, n, edge_prob=0.4, label_rate=label_rate)
    split = np.where(g.labels != -1, SPLIT_TRAIN, SPLIT_NONE).astype(np.int8)
    return g.replace_split(split)


def zero_params(d, c=2):
    params = DTCParams.init(np.random.default_rng(0), d, c)
    for _, t in params.named_tensors():
        t.values[...] = 0.0
    return params


def copy_transfer(params):
    """Arrange the transfer MLP to reproduce the current source classifier:
    zero first layer (hidden = tanh(0) = 0) and bias-only output."""
    d, c = params.w_clf_s.shape
    params.trans_w1.values[...] = 0.0
    params.trans_b1.values[...] = 0.0
    params.trans_w2.values[...] = 0.0
    flat = np.concatenate([params.w_clf_s.values.reshape(1, -1),
                           params.b_clf_s.values], axis=1)
    params.trans_b2.values[...] = flat


def softmax(rows):
    e = np.exp(rows - rows.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class TestForward:
    def test_zero_weights_give_uniform(self, rng):
        g = make_graph(rng)
        params = zero_params(4)
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))), g, params)
        for probs in (out.p_s, out.p_t, out.p_hat_s, out.p_hat_t):
            np.testing.assert_allclose(probs.values, 0.5)

    def test_identity_transfer_copies_source(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        copy_transfer(params)
        w_hat, b_hat = generated_classifier(params)
        np.testing.assert_array_equal(w_hat.values, params.w_clf_s.values)
        np.testing.assert_array_equal(b_hat.values, params.b_clf_s.values)
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))), g, params)
        np.testing.assert_array_equal(out.p_hat_s.values, out.p_s.values)

    def test_matches_scalar_oracle(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 5)
        h = rng.standard_normal((g.num_nodes, 5))
        out = dtc_forward(ad.tensor(h), g, params)
        flat = np.concatenate([params.w_clf_s.values.reshape(-1),
                               params.b_clf_s.values.reshape(-1)])
        hidden = np.tanh(flat @ params.trans_w1.values
                         + params.trans_b1.values[0])
        gen = hidden @ params.trans_w2.values + params.trans_b2.values[0]
        w_hat = gen[:10].reshape(5, 2)
        b_hat = gen[10:]
        np.testing.assert_allclose(
            out.p_s.values,
            softmax(h[g.vocal_ids()] @ params.w_clf_s.values
                    + params.b_clf_s.values), atol=1e-12)
        np.testing.assert_allclose(
            out.p_t.values,
            softmax(h[g.silent_ids()] @ params.w_clf_t.values
                    + params.b_clf_t.values), atol=1e-12)
        np.testing.assert_allclose(
            out.p_hat_t.values,
            softmax(h[g.silent_ids()] @ w_hat + b_hat), atol=1e-12)

    def test_rows_are_probability_vectors(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4)) * 20),
                          g, params)
        for probs in (out.p_s, out.p_t, out.p_hat_s, out.p_hat_t):
            assert (probs.values >= 0).all() and (probs.values <= 1).all()
            np.testing.assert_allclose(probs.values.sum(axis=1), 1.0, atol=1e-9)


class TestKLLoss:
    def test_zero_when_generated_matches_teachers(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        copy_transfer(params)
        # target classifier identical to the source: all three now agree
        params.w_clf_t.values[...] = params.w_clf_s.values
        params.b_clf_t.values[...] = params.b_clf_s.values
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))), g, params)
        assert kl_loss(out).item() == pytest.approx(0.0, abs=1e-9)

    def test_point_mass_against_uniform(self):
        # KL([1,0] || [0.5,0.5]) = ln 2 up to the probability clamp
        outputs = type("O", (), {})()
        outputs.p_s = ad.tensor(np.array([[1.0, 0.0]]))
        outputs.p_hat_s = ad.tensor(np.array([[0.5, 0.5]]))
        outputs.p_t = ad.tensor(np.array([[0.5, 0.5]]))
        outputs.p_hat_t = ad.tensor(np.array([[0.5, 0.5]]))
        assert kl_loss(outputs).item() == pytest.approx(np.log(2.0), abs=1e-9)

    def test_matches_scalar_oracle(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))), g, params)
        expected = 0.0
        for p, q in ((out.p_s.values, out.p_hat_s.values),
                     (out.p_t.values, out.p_hat_t.values)):
            total = 0.0
            for r in range(p.shape[0]):
                for c in range(2):
                    total += p[r, c] * (np.log(p[r, c]) - np.log(q[r, c]))
            expected += total / p.shape[0]
        assert kl_loss(out).item() == pytest.approx(expected, rel=1e-10)

    def test_detached_teachers_get_no_gradient(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        h = ad.tensor(rng.standard_normal((g.num_nodes, 4)))
        kl_loss(dtc_forward(h, g, params), detach_teachers=True).backward()
        assert params.w_clf_t.grad is None        # teacher-only parameter
        assert params.trans_w2.grad is not None   # student path still live
        ad.zero_grads([t for _, t in params.named_tensors()])
        kl_loss(dtc_forward(h, g, params), detach_teachers=False).backward()
        assert params.w_clf_t.grad is not None

    def test_nonnegative(self, rng):
        g = make_graph(rng)
        for _ in range(5):
            params = DTCParams.init(rng, 4)
            out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))),
                              g, params)
            assert kl_loss(out).item() >= 0.0


class TestClassificationLoss:
    def test_uniform_predictions_give_ln2_terms(self, rng):
        g = make_graph(rng)
        params = zero_params(4)
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))), g, params)
        assert classification_loss(out, g).item() == pytest.approx(3 * np.log(2.0),
                                                                   abs=1e-12)

    def test_perfect_predictions_near_zero(self):
        y = np.array([1.0, 0.0, 1.0])
        probs = ad.tensor(y.reshape(-1, 1))
        assert _bce(probs, y).item() == pytest.approx(0.0, abs=3e-12)

    def test_matches_scalar_oracle(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        h = rng.standard_normal((g.num_nodes, 4))
        out = dtc_forward(ad.tensor(h), g, params)

        def bce(y, p):
            total = 0.0
            for yi, pi in zip(y, p):
                total += yi * np.log(pi) + (1 - yi) * np.log(1 - pi)
            return -total / len(y)

        expected = 0.0
        vids = out.vocal_ids
        mask = (g.split[vids] == SPLIT_TRAIN) & (g.labels[vids] != -1)
        expected += bce(g.labels[vids[mask]], out.p_s.values[mask, 1])
        sids = out.silent_ids
        mask = (g.split[sids] == SPLIT_TRAIN) & (g.labels[sids] != -1)
        expected += bce(g.labels[sids[mask]], out.p_t.values[mask, 1])
        expected += bce(g.labels[sids[mask]], out.p_hat_t.values[mask, 1])
        assert classification_loss(out, g).item() == pytest.approx(expected, rel=1e-10)

    def test_population_without_labels_warns(self, rng):
        g = random_vs_graph(rng, 10, label_rate=0.9)
        labels = g.labels.copy()
        labels[g.vocal_ids()] = -1
        g = build_graph(
            [tuple(map(int, e)) for e in zip(*g.edge_arrays()) if e[0] <= e[1]],
            g.population, g.x_obs, {int(i): g.x_unobs[i] for i in g.vocal_ids()},
            labels, np.where(labels != -1, SPLIT_TRAIN, SPLIT_NONE).astype(np.int8))
        params = DTCParams.init(rng, 4)
        out = dtc_forward(ad.tensor(rng.standard_normal((g.num_nodes, 4))), g, params)
        with pytest.warns(UserWarning, match="vocal"):
            loss = classification_loss(out, g)
        assert loss.item() >= 0.0


class TestTotalLoss:
    def test_zero_weights_keep_clf_only(self):
        clf, kl, dist = (ad.tensor([[v]]) for v in (1.0, 2.0, 3.0))
        assert total_loss(clf, kl, dist, 0.0, 0.0).item() == 1.0

    def test_weighted_sum(self):
        clf, kl, dist = (ad.tensor([[v]]) for v in (1.0, 2.0, 3.0))
        assert total_loss(clf, kl, dist, 1.0, 1.0).item() == 6.0

    def test_negative_weights_rejected(self):
        t = ad.tensor([[1.0]])
        with pytest.raises(ValueError):
            total_loss(t, t, t, -0.1, 1.0)


class TestPredictSilent:
    def test_zero_weights_give_half(self, rng):
        g = make_graph(rng)
        params = zero_params(4)
        scores = predict_silent(ad.tensor(rng.standard_normal((g.num_nodes, 4))),
                                g, params)
        np.testing.assert_allclose(scores, 0.5)

    def test_identity_transfer_equals_source_on_silent(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        copy_transfer(params)
        h = rng.standard_normal((g.num_nodes, 4))
        scores = predict_silent(ad.tensor(h), g, params)
        expected = softmax(h[g.silent_ids()] @ params.w_clf_s.values
                           + params.b_clf_s.values)[:, 1]
        np.testing.assert_allclose(scores, expected, atol=1e-12)

    def test_consistent_with_forward(self, rng):
        g = make_graph(rng)
        params = DTCParams.init(rng, 4)
        h = ad.tensor(rng.standard_normal((g.num_nodes, 4)))
        out = dtc_forward(h, g, params)
        np.testing.assert_array_equal(predict_silent(h, g, params),
                                      out.p_hat_t.values[:, 1])


def test_full_loss_gradient_check(rng):
    g = make_graph(rng, n=8)
    params = DTCParams.init(rng, 3)
    h = ad.tensor(rng.standard_normal((g.num_nodes, 3)))
    tensors = [t for _, t in params.named_tensors()]

    def loss():
        # teacher detachment off: stop-gradients intentionally diverge from
        # the true derivative, which is what finite differences measure
        out = dtc_forward(h, g, params)
        return total_loss(classification_loss(out, g),
                          kl_loss(out, detach_teachers=False),
                          ad.tensor([[0.0]]), 0.7, 1.0)

    check_grads(loss, tensors, tol=1e-4)
