import numpy as np
import pytest

from ktgnn import autodiff as ad
from ktgnn.dafc import (DAFCParams, calibrate_vocal_features, complete_features,
                        completion_schedule, distribution_consistency_loss,
                        importance_scores, unobservable_domain_difference)
from ktgnn.graph import SILENT, VOCAL, build_graph, population_means

from conftest import check_grads, random_vs_graph


def make_params(rng, d_obs, d_unobs, d_att=3):
    return DAFCParams.init(rng, d_obs, d_unobs, d_att)


def path_graph(populations, d_obs=2, d_unobs=2, seed=0):
    rng = np.random.default_rng(seed)
    n = len(populations)
    edges = [(i, i + 1) for i in range(n - 1)]
    population = np.asarray(populations, dtype=np.int8)
    x_obs = rng.standard_normal((n, d_obs))
    x_unobs_vocal = {int(i): rng.standard_normal(d_unobs)
                     for i in np.flatnonzero(population == VOCAL)}
    return build_graph(edges, population, x_obs, x_unobs_vocal, np.full(n, -1))


def leaky(v, slope=0.2):
    return np.where(v > 0, v, slope * v)


def oracle_complete(g, params, K, raw_scores=False):
    """Straight-line per-node recomputation of the completion forward pass."""
    means = population_means(g)
    delta = (means.mean_obs_vocal - means.mean_obs_silent) @ params.w_o_to_u.values

    dist = {int(i): 0 for i in g.vocal_ids()}
    values = {int(i): g.x_unobs[i].copy() for i in g.vocal_ids()}
    calibrated = {}
    for j in g.vocal_ids():
        gate = np.tanh(np.concatenate([g.x_unobs[j], delta]) @ params.w_g.values)
        calibrated[int(j)] = g.x_unobs[j] - delta * gate

    frontier = list(g.vocal_ids())
    for k in range(1, K + 1):
        nxt = sorted({int(j) for i in frontier for j in g.neighbors(i)
                      if int(j) not in dist})
        if not nxt:
            break
        for i in nxt:
            srcs = [int(j) for j in g.neighbors(i) if dist.get(int(j)) == k - 1]
            scores = []
            for j in srcs:
                cat = np.concatenate([g.x_obs[j] @ params.w_v.values,
                                      g.x_obs[i] @ params.w_s.values])
                scores.append(leaky(cat @ params.a_vs.values[:, 0]))
            scores = np.array(scores)
            if raw_scores:
                alpha = scores
            else:
                e = np.exp(scores - scores.max())
                alpha = e / e.sum()
            acc = np.zeros(g.d_unobs)
            for j, a in zip(srcs, alpha):
                src_val = calibrated[j] if k == 1 else values[j]
                acc += src_val * a
            values[i] = acc
        for i in nxt:
            dist[i] = k
        frontier = nxt

    full = np.zeros((g.num_nodes, g.d_unobs))
    for i, v in values.items():
        full[i] = v
    iters = np.full(g.num_nodes, -1, dtype=np.int64)
    for i, k in dist.items():
        iters[i] = k
    return full, iters


def bfs_distances(g, cap):
    """Independent multi-source BFS from the vocal set."""
    from collections import deque
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    q = deque()
    for i in g.vocal_ids():
        dist[i] = 0
        q.append(int(i))
    while q:
        i = q.popleft()
        for j in g.neighbors(i):
            if dist[j] == -1:
                dist[j] = dist[i] + 1
                q.append(int(j))
    dist[dist > cap] = -1
    return dist


class TestDomainDifference:
    def test_identical_means_give_zero(self, rng):
        params = make_params(rng, 2, 3)
        means = population_means(
            build_graph([(0, 1)], [0, 1], np.array([[1.0, 2.0], [1.0, 2.0]]),
                        {0: np.zeros(3)}, np.full(2, -1)))
        delta = unobservable_domain_difference(means, params)
        np.testing.assert_allclose(delta.values, 0.0, atol=1e-15)

    def test_row_selection(self, rng):
        params = make_params(rng, 2, 2)
        params.w_o_to_u.values[...] = [[2.0, 3.0], [5.0, 7.0]]
        g = build_graph([(0, 1)], [0, 1], np.array([[1.5, 0.5], [0.5, 0.5]]),
                        {0: np.zeros(2)}, np.full(2, -1))
        delta = unobservable_domain_difference(population_means(g), params)
        np.testing.assert_allclose(delta.values, [[2.0, 3.0]], atol=1e-12)

    def test_matches_matmul_oracle(self, rng):
        g = random_vs_graph(rng, 15, d_obs=4, d_unobs=3)
        params = make_params(rng, 4, 3)
        means = population_means(g)
        expected = (means.mean_obs_vocal - means.mean_obs_silent) @ params.w_o_to_u.values
        delta = unobservable_domain_difference(means, params)
        np.testing.assert_allclose(delta.values[0], expected, atol=1e-12)


class TestCalibration:
    def test_zero_shift_is_identity(self, rng):
        params = make_params(rng, 2, 3)
        x = ad.tensor(rng.standard_normal((4, 3)))
        out = calibrate_vocal_features(x, ad.tensor(np.zeros((1, 3))), params)
        np.testing.assert_array_equal(out.values, x.values)

    def test_zero_gate_matrix_is_identity(self, rng):
        params = make_params(rng, 2, 3)
        params.w_g.values[...] = 0.0
        x = ad.tensor(rng.standard_normal((4, 3)))
        out = calibrate_vocal_features(x, ad.tensor(rng.standard_normal((1, 3))), params)
        np.testing.assert_array_equal(out.values, x.values)

    def test_matches_scalar_oracle(self, rng):
        params = make_params(rng, 2, 3)
        x = rng.standard_normal((5, 3))
        delta = rng.standard_normal(3)
        out = calibrate_vocal_features(ad.tensor(x), ad.tensor(delta.reshape(1, -1)),
                                       params)
        for r in range(5):
            gate = np.tanh(np.concatenate([x[r], delta]) @ params.w_g.values)
            assert np.abs(gate).max() < 1.0
            np.testing.assert_allclose(out.values[r], x[r] - delta * gate, atol=1e-12)


class TestImportanceScores:
    def test_zero_head_gives_zero(self, rng):
        params = make_params(rng, 3, 2, d_att=2)
        params.a_vs.values[...] = 0.0
        s = importance_scores(ad.tensor(rng.standard_normal((4, 3))),
                              ad.tensor(rng.standard_normal((4, 3))),
                              params.w_v, params.w_s, params.a_vs)
        np.testing.assert_array_equal(s.values, np.zeros((4, 1)))

    def test_positive_preactivation_passes_through(self, rng):
        params = make_params(rng, 2, 2, d_att=2)
        x_src = ad.tensor(np.abs(rng.standard_normal((3, 2))))
        x_dst = ad.tensor(np.abs(rng.standard_normal((3, 2))))
        params.w_v.values[...] = np.abs(params.w_v.values)
        params.w_s.values[...] = np.abs(params.w_s.values)
        params.a_vs.values[...] = np.abs(params.a_vs.values)
        s = importance_scores(x_src, x_dst, params.w_v, params.w_s, params.a_vs)
        raw = np.concatenate([x_src.values @ params.w_v.values,
                              x_dst.values @ params.w_s.values], axis=1) \
            @ params.a_vs.values
        np.testing.assert_allclose(s.values, raw, atol=1e-12)

    def test_matches_scalar_oracle(self, rng):
        params = make_params(rng, 3, 2, d_att=2)
        x_src = rng.standard_normal((6, 3))
        x_dst = rng.standard_normal((6, 3))
        s = importance_scores(ad.tensor(x_src), ad.tensor(x_dst),
                              params.w_v, params.w_s, params.a_vs)
        for r in range(6):
            cat = np.concatenate([x_src[r] @ params.w_v.values,
                                  x_dst[r] @ params.w_s.values])
            assert s.values[r, 0] == pytest.approx(leaky(cat @ params.a_vs.values[:, 0]))


class TestCompleteFeatures:
    def test_path_graph_depth_one(self, rng):
        g = path_graph([0, 1, 1])
        params = make_params(rng, 2, 2)
        result, _ = complete_features(g, params, K=1)
        np.testing.assert_array_equal(result.completed_at_iter, [0, 1, -1])
        np.testing.assert_array_equal(result.x_unobs_completed.values[2], [0.0, 0.0])

    def test_path_graph_depth_two(self, rng):
        g = path_graph([0, 1, 1])
        params = make_params(rng, 2, 2)
        result, _ = complete_features(g, params, K=2)
        np.testing.assert_array_equal(result.completed_at_iter, [0, 1, 2])

    def test_k_below_one_rejected(self, rng):
        g = path_graph([0, 1])
        with pytest.raises(ValueError):
            complete_features(g, make_params(rng, 2, 2), K=0)

    def test_single_vocal_neighbor_zero_shift(self, rng):
        # With a zero domain difference the one-neighbor softmax weight is 1,
        # so the completed row equals the neighbor's raw features.
        g = path_graph([0, 1])
        params = make_params(rng, 2, 2)
        params.w_o_to_u.values[...] = 0.0
        result, _ = complete_features(g, params, K=1)
        np.testing.assert_allclose(result.x_unobs_completed.values[1],
                                   g.x_unobs[0], atol=1e-12)

    def test_vocal_rows_keep_raw_features(self, rng):
        g = random_vs_graph(rng, 20)
        params = make_params(rng, g.d_obs, g.d_unobs)
        result, _ = complete_features(g, params, K=2)
        np.testing.assert_array_equal(
            result.x_unobs_completed.values[g.vocal_ids()], g.x_unobs[g.vocal_ids()])

    @pytest.mark.parametrize("raw_scores", [False, True])
    def test_matches_straight_line_oracle(self, rng, raw_scores):
        for trial in range(8):
            g = random_vs_graph(rng, int(rng.integers(6, 13)), edge_prob=0.3)
            params = make_params(rng, g.d_obs, g.d_unobs)
            result, _ = complete_features(g, params, K=3, raw_scores=raw_scores)
            expected_vals, expected_iters = oracle_complete(g, params, K=3,
                                                            raw_scores=raw_scores)
            np.testing.assert_array_equal(result.completed_at_iter, expected_iters)
            np.testing.assert_allclose(result.x_unobs_completed.values,
                                       expected_vals, atol=1e-9)

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_bfs_oracle_equivalence(self, rng, K):
        for _ in range(20):
            g = random_vs_graph(rng, int(rng.integers(5, 200)), edge_prob=0.05)
            schedule = completion_schedule(g, K)
            np.testing.assert_array_equal(schedule.completed_at_iter,
                                          bfs_distances(g, K))

    def test_completed_set_monotone_in_k(self, rng):
        for _ in range(10):
            g = random_vs_graph(rng, int(rng.integers(8, 60)), edge_prob=0.08)
            prev = None
            for K in (1, 2, 3, 4):
                done = set(np.flatnonzero(completion_schedule(g, K)
                                          .completed_at_iter >= 0).tolist())
                assert set(g.vocal_ids().tolist()) <= done
                if prev is not None:
                    assert prev <= done
                prev = done

    def test_zero_shift_matches_attention_mean(self, rng):
        # Zero domain difference: iteration-1 rows are plain attention-weighted
        # sums of the vocal neighbors' raw features.
        g = random_vs_graph(rng, 15, edge_prob=0.3)
        params = make_params(rng, g.d_obs, g.d_unobs)
        params.w_o_to_u.values[...] = 0.0
        result, _ = complete_features(g, params, K=1)
        for i in np.flatnonzero(result.completed_at_iter == 1):
            srcs = g.neighbors(i, population=VOCAL)
            scores = np.array([leaky(np.concatenate(
                [g.x_obs[j] @ params.w_v.values, g.x_obs[i] @ params.w_s.values])
                @ params.a_vs.values[:, 0]) for j in srcs])
            e = np.exp(scores - scores.max())
            alpha = e / e.sum()
            np.testing.assert_allclose(result.x_unobs_completed.values[i],
                                       alpha @ g.x_unobs[srcs], atol=1e-9)

    def test_convex_combination_bounds(self, rng):
        # Softmax weights put each completed row inside its sources' box.
        for _ in range(5):
            g = random_vs_graph(rng, 20, edge_prob=0.25)
            params = make_params(rng, g.d_obs, g.d_unobs)
            result, _ = complete_features(g, params, K=3)
            vals = result.x_unobs_completed.values
            schedule = completion_schedule(g, 3)
            means = population_means(g)
            delta = (means.mean_obs_vocal - means.mean_obs_silent) @ params.w_o_to_u.values
            cal = {int(j): g.x_unobs[j] - delta * np.tanh(
                np.concatenate([g.x_unobs[j], delta]) @ params.w_g.values)
                for j in g.vocal_ids()}
            for it, (frontier, src, dst) in enumerate(zip(
                    schedule.frontiers, schedule.sources, schedule.targets)):
                for i in frontier:
                    rows = [cal[int(j)] if it == 0 else vals[j]
                            for j, d in zip(src, dst) if d == i]
                    rows = np.stack(rows)
                    assert (vals[i] >= rows.min(axis=0) - 1e-9).all()
                    assert (vals[i] <= rows.max(axis=0) + 1e-9).all()

    def test_gradients_flow_into_params(self, rng):
        g = random_vs_graph(rng, 10, edge_prob=0.4)
        params = make_params(rng, g.d_obs, g.d_unobs)
        tensors = [t for _, t in params.named_tensors()]

        def loss():
            result, delta = complete_features(g, params, K=2)
            return distribution_consistency_loss(g, result, delta)

        if completion_schedule(g, 2).frontiers:
            check_grads(loss, tensors)


class TestDistributionConsistencyLoss:
    def _setup(self, rng):
        g = random_vs_graph(rng, 14, edge_prob=0.4)
        params = make_params(rng, g.d_obs, g.d_unobs)
        result, delta = complete_features(g, params, K=2)
        return g, result, delta

    def test_zero_when_delta_equals_gap(self, rng):
        g, result, _ = self._setup(rng)
        vals = result.x_unobs_completed.values
        completed_silent = np.flatnonzero((g.population == SILENT)
                                          & (result.completed_at_iter >= 1))
        gap = vals[g.vocal_ids()].mean(axis=0) - vals[completed_silent].mean(axis=0)
        loss = distribution_consistency_loss(g, result, ad.tensor(gap.reshape(1, -1)))
        assert loss.item() == pytest.approx(0.0, abs=1e-18)

    def test_unit_offset_gives_one(self, rng):
        g, result, _ = self._setup(rng)
        vals = result.x_unobs_completed.values
        completed_silent = np.flatnonzero((g.population == SILENT)
                                          & (result.completed_at_iter >= 1))
        gap = vals[g.vocal_ids()].mean(axis=0) - vals[completed_silent].mean(axis=0)
        offset = gap.copy()
        offset[0] += 1.0
        loss = distribution_consistency_loss(g, result, ad.tensor(offset.reshape(1, -1)))
        assert loss.item() == pytest.approx(1.0, abs=1e-12)

    def test_matches_scalar_oracle(self, rng):
        g, result, delta = self._setup(rng)
        vals = result.x_unobs_completed.values
        completed_silent = np.flatnonzero((g.population == SILENT)
                                          & (result.completed_at_iter >= 1))
        acc_v = np.zeros(g.d_unobs)
        for i in g.vocal_ids():
            acc_v += vals[i]
        acc_s = np.zeros(g.d_unobs)
        for i in completed_silent:
            acc_s += vals[i]
        gap = acc_v / g.vocal_ids().size - acc_s / completed_silent.size
        expected = float(((delta.values[0] - gap) ** 2).sum())
        assert distribution_consistency_loss(g, result, delta).item() == \
            pytest.approx(expected, rel=1e-12)

    def test_no_completed_silent_errors(self, rng):
        g = build_graph([], [0, 1], np.zeros((2, 2)), {0: np.zeros(2)},
                        np.full(2, -1))
        params = make_params(rng, 2, 2)
        result, delta = complete_features(g, params, K=1)
        with pytest.raises(ValueError, match="no silent node"):
            distribution_consistency_loss(g, result, delta)
