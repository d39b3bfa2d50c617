"""Domain-adapted feature completion.

Silent nodes lack the unobservable feature block. Completion expands from
the vocal set like a multi-source BFS: at iteration 1 every silent node
with a vocal neighbor receives an attention-weighted sum of its vocal
neighbors' unobservable features, calibrated by a learned domain-difference
vector; later iterations transfer already-completed (uncalibrated) values
outward until the hop budget K is exhausted.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import SILENT, VOCAL, population_means
from .initializers import attention_vector, glorot


@dataclass
class DAFCParams:
    """Learnable completion parameters.

    w_s / w_v project target / source observable features for scoring,
    a_vs is the scoring head, w_o_to_u maps the observable population-mean
    gap to an unobservable-space difference, and w_g gates the calibration.
    """

    w_s: ad.DTensor          # D_o x d_att
    w_v: ad.DTensor          # D_o x d_att
    a_vs: ad.DTensor         # 2*d_att x 1
    w_o_to_u: ad.DTensor     # D_o x D_u
    w_g: ad.DTensor          # 2*D_u x D_u

    @classmethod
    def init(cls, rng, d_obs, d_unobs, d_att, dtype=np.float64):
        return cls(
            w_s=glorot(rng, d_obs, d_att, dtype),
            w_v=glorot(rng, d_obs, d_att, dtype),
            a_vs=attention_vector(rng, 2 * d_att, dtype),
            w_o_to_u=glorot(rng, d_obs, d_unobs, dtype),
            w_g=glorot(rng, 2 * d_unobs, d_unobs, dtype),
        )

    def named_tensors(self):
        return [("dafc.w_s", self.w_s), ("dafc.w_v", self.w_v), ("dafc.a_vs", self.a_vs),
                ("dafc.w_o_to_u", self.w_o_to_u), ("dafc.w_g", self.w_g)]


@dataclass
class CompletionSchedule:
    """Topology-only completion plan, computed once per (graph, K).

    completed_at_iter[i] is 0 for vocal nodes, k for silent nodes first
    reachable from the vocal set in k hops (k <= K), and -1 beyond K.
    Iteration k transfers along edges (sources[k-1] -> targets[k-1]) where
    sources sit at hop k-1 and targets at hop k. Scatter plans cache the
    sort orders reused by every forward/backward pass; src_positions maps
    iteration-1 sources to their row in the vocal-feature block.
    """

    completed_at_iter: np.ndarray
    frontiers: list
    sources: list
    targets: list
    src_plans: list
    dst_plans: list
    src_positions: np.ndarray
    src_pos_plan: ad.ScatterPlan


def completion_schedule(g, K):
    """Multi-source BFS from the vocal set, capped at K iterations."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    vocal = g.vocal_ids()
    dist[vocal] = 0
    frontiers, sources, targets = [], [], []
    current = vocal
    for k in range(1, K + 1):
        nxt = []
        for i in current:
            for j in g.neighbors(i):
                if dist[j] == -1:
                    dist[j] = k
                    nxt.append(j)
        frontier = np.asarray(sorted(nxt), dtype=np.int64)
        if frontier.size == 0:
            break
        src, dst = [], []
        for i in frontier:
            for j in g.neighbors(i):
                if dist[j] == k - 1:
                    src.append(j)
                    dst.append(i)
        frontiers.append(frontier)
        sources.append(np.asarray(src, dtype=np.int64))
        targets.append(np.asarray(dst, dtype=np.int64))
        current = frontier
    completed = dist.copy()
    completed[(dist == -1) | (dist > K)] = -1
    src_plans = [ad.ScatterPlan(s, g.num_nodes) for s in sources]
    dst_plans = [ad.ScatterPlan(t, g.num_nodes) for t in targets]
    if sources:
        src_positions = np.searchsorted(vocal, sources[0])
        src_pos_plan = ad.ScatterPlan(src_positions, vocal.size)
    else:
        src_positions = np.empty(0, dtype=np.int64)
        src_pos_plan = ad.ScatterPlan(src_positions, max(vocal.size, 1))
    return CompletionSchedule(completed, frontiers, sources, targets,
                              src_plans, dst_plans, src_positions, src_pos_plan)


@dataclass
class CompletionResult:
    """Completed unobservable features plus the plan that produced them.

    x_unobs_completed holds raw features for vocal rows, transferred values
    for completed silent rows, and zeros for silent nodes beyond K hops.
    """

    x_unobs_completed: ad.DTensor
    completed_at_iter: np.ndarray
    frontier_sets: list


def unobservable_domain_difference(means, params):
    """Learned unobservable-space population gap, mapped from the observable
    mean gap: a 1 x D_u row."""
    gap = ad.tensor((means.mean_obs_vocal - means.mean_obs_silent).reshape(1, -1))
    return gap @ params.w_o_to_u


def calibrate_vocal_features(x_u, delta, params):
    """Remove the gated domain difference from vocal unobservable rows:
    x - delta * tanh([x || delta] W_g), rows independent."""
    n = x_u.shape[0]
    gate = ad.tanh(ad.concat_cols([x_u, ad.tile_rows(delta, n)]) @ params.w_g)
    return x_u - ad.mul(gate, delta)


def importance_scores(x_src_obs, x_dst_obs, w_src, w_dst, a):
    """Raw neighbor-importance scores for paired source/target rows:
    LeakyReLU([x_src W_src || x_dst W_dst] . a), an (m, 1) column."""
    cat = ad.concat_cols([x_src_obs @ w_src, x_dst_obs @ w_dst])
    return ad.leaky_relu(cat @ a)


def complete_features(g, params, K, raw_scores=False, schedule=None):
    """Fill unobservable features for silent nodes within K hops of the
    vocal set.

    Iteration 1 transfers calibrated vocal features; later iterations
    transfer completed values as-is. Scores are softmax-normalized per
    target unless raw_scores is set. The result stays inside the autodiff
    graph, so losses backpropagate into the parameters.
    """
    if schedule is None:
        schedule = completion_schedule(g, K)
    dtype = params.w_s.values.dtype
    x_obs = ad.tensor(g.x_obs.astype(dtype, copy=False))
    delta = unobservable_domain_difference(population_means(g), params)

    # Scores dot the attention head before the LeakyReLU, so the source and
    # target halves reduce to per-node columns gathered per edge.
    d_att = params.w_v.shape[1]
    s_src_all = (x_obs @ params.w_v) @ ad.slice_rows(params.a_vs, 0, d_att)
    s_dst_all = (x_obs @ params.w_s) @ ad.slice_rows(params.a_vs, d_att, 2 * d_att)

    vocal = g.vocal_ids()
    calibrated_vocal = calibrate_vocal_features(
        ad.tensor(g.x_unobs[vocal].astype(dtype, copy=False)), delta, params)

    completed = ad.tensor(g.x_unobs.astype(dtype, copy=True))
    for it, (frontier, src, dst) in enumerate(
            zip(schedule.frontiers, schedule.sources, schedule.targets)):
        scores = ad.leaky_relu(
            ad.gather_rows(s_src_all, src, plan=schedule.src_plans[it])
            + ad.gather_rows(s_dst_all, dst, plan=schedule.dst_plans[it]))
        if raw_scores:
            alpha = scores
        else:
            seg = np.searchsorted(frontier, dst)
            alpha = ad.segment_softmax(scores, seg, num_segments=frontier.size)
        if it == 0:
            src_vals = ad.gather_rows(calibrated_vocal, schedule.src_positions,
                                      plan=schedule.src_pos_plan)
        else:
            src_vals = ad.gather_rows(completed, src, plan=schedule.src_plans[it])
        agg = ad.scatter_add_rows(ad.scale_rows(src_vals, alpha), dst,
                                  g.num_nodes, plan=schedule.dst_plans[it])
        completed = completed + agg

    return CompletionResult(completed, schedule.completed_at_iter,
                            [set(f.tolist()) for f in schedule.frontiers]), delta


def distribution_consistency_loss(g, result, delta):
    """Squared distance between the learned domain difference and the
    empirical vocal-minus-completed-silent mean gap."""
    completed_silent = np.flatnonzero((g.population == SILENT)
                                      & (result.completed_at_iter >= 1))
    if completed_silent.size == 0:
        raise ValueError("no silent node was completed; cannot form the "
                         "distribution-consistency loss")
    vocal_mean = ad.mean_rows(ad.gather_rows(result.x_unobs_completed, g.vocal_ids()))
    silent_mean = ad.mean_rows(ad.gather_rows(result.x_unobs_completed, completed_silent))
    return ad.squared_norm(delta - (vocal_mean - silent_mean))
