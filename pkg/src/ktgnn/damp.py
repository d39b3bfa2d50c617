"""Domain-adapted message passing.

Attention aggregation with per-target-population projections. Sources of
cross-domain edges are additively calibrated along the current population-
mean difference direction before being projected; within-domain messages
are never calibrated.

Projections and attention dot-products are computed per node and gathered
per edge (an elementwise LeakyReLU commutes with concatenation, so the
concat-then-dot score splits into source and target halves).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import SILENT, VOCAL
from .initializers import attention_vector, glorot


@dataclass
class DAMPLayerParams:
    """One layer's parameters, indexed by target population for w_pop/a_pop
    and by source population for the calibration gate heads a_shift."""

    w_pop: list       # 2 x (d_in x d_out)
    a_pop: list       # 2 x (2*d_out x 1)
    a_shift: list     # 2 x (2*d_in x 1)

    @classmethod
    def init(cls, rng, d_in, d_out, dtype=np.float64):
        return cls(
            w_pop=[glorot(rng, d_in, d_out, dtype) for _ in range(2)],
            a_pop=[attention_vector(rng, 2 * d_out, dtype) for _ in range(2)],
            a_shift=[attention_vector(rng, 2 * d_in, dtype) for _ in range(2)],
        )

    def named_tensors(self, prefix="damp"):
        out = []
        for p in range(2):
            out.append((f"{prefix}.w_pop{p}", self.w_pop[p]))
            out.append((f"{prefix}.a_pop{p}", self.a_pop[p]))
            out.append((f"{prefix}.a_shift{p}", self.a_shift[p]))
        return out


@dataclass
class EdgeGroups:
    """Directed edges grouped by target population, dst-major order.

    seg maps each edge to a dense per-target segment id; cross marks edges
    whose endpoints belong to different populations. Scatter plans cache the
    sort orders used by gather/scatter backward passes.
    """

    src: list
    dst: list
    seg: list
    n_seg: list
    cross: list
    src_plan: list
    dst_plan: list


def edge_groups(g):
    src, dst = g.edge_arrays()
    groups = EdgeGroups([], [], [], [], [], [], [])
    for p in (VOCAL, SILENT):
        mask = g.population[dst] == p
        s, d = src[mask], dst[mask]
        uniq, seg = np.unique(d, return_inverse=True)
        groups.src.append(s)
        groups.dst.append(d)
        groups.seg.append(seg)
        groups.n_seg.append(uniq.size)
        groups.cross.append((g.population[s] != p).astype(np.float64))
        groups.src_plan.append(ad.ScatterPlan(s, g.num_nodes))
        groups.dst_plan.append(ad.ScatterPlan(d, g.num_nodes))
    return groups


def layer_population_means(h, g):
    """Population means of the current representations, kept differentiable."""
    mean_vocal = ad.mean_rows(ad.gather_rows(h, g.vocal_ids()))
    mean_silent = ad.mean_rows(ad.gather_rows(h, g.silent_ids()))
    return mean_vocal, mean_silent


def distribution_shift(h_rows, mean_diff, src_pop, dst_pop, params):
    """Per-row calibration vector added to cross-domain sources.

    Zero when source and target populations match; otherwise a tanh-gated,
    signed multiple of the population-mean difference (positive toward
    vocal targets, negative toward silent targets).
    """
    n = h_rows.shape[0]
    if src_pop == dst_pop:
        return ad.tensor(np.zeros((n, h_rows.shape[1]), dtype=h_rows.values.dtype))
    diff_n = ad.tile_rows(mean_diff, n)
    gate = ad.tanh(ad.concat_cols([h_rows, diff_n]) @ params.a_shift[src_pop])
    sign = 1.0 if dst_pop == VOCAL else -1.0
    return ad.scale_rows(diff_n, ad.mul(gate, ad.tensor([[sign]])))


def damp_layer_forward(g, h_in, params, raw_scores=False, groups=None):
    """One message-passing layer: (N, d_in) -> (N, d_out).

    Per directed edge (i -> j): the source is calibrated when the edge is
    cross-domain, projected by the target population's matrix, scored
    against the projected target, normalized per target (softmax unless
    raw_scores), and aggregated. Each node also receives its own projected
    representation before the LeakyReLU update.
    """
    if h_in.shape[0] != g.num_nodes:
        raise ValueError(f"h_in has {h_in.shape[0]} rows for {g.num_nodes} nodes")
    if groups is None:
        groups = edge_groups(g)
    dtype = h_in.values.dtype
    n = g.num_nodes
    d_out = params.w_pop[0].shape[1]
    pop = g.population.astype(np.float64)
    mask_vocal = ad.tensor((1.0 - pop).reshape(-1, 1).astype(dtype))
    mask_silent = ad.tensor(pop.reshape(-1, 1).astype(dtype))

    # Calibrated variant of every node, used only where an edge crosses
    # domains. The gate head and the sign both follow from the source's
    # population (cross targets have the opposite one). With a single
    # population (or no cross edges) calibration cannot apply anywhere and
    # is skipped entirely, so a_shift can never influence the output.
    has_cross = any(groups.cross[p].any() for p in (0, 1))
    if has_cross:
        mean_vocal, mean_silent = layer_population_means(h_in, g)
        diff = mean_vocal - mean_silent
        diff_n = ad.tile_rows(diff, n)
        gates = [ad.tanh(ad.concat_cols([h_in, diff_n]) @ params.a_shift[p])
                 for p in (0, 1)]
        gate = ad.mul(gates[VOCAL], mask_vocal) + ad.mul(gates[SILENT], mask_silent)
        sign = ad.tensor(np.where(g.population == VOCAL, -1.0, 1.0)
                         .reshape(-1, 1).astype(dtype))
        h_cross = h_in + ad.scale_rows(diff_n, ad.mul(gate, sign))
    else:
        h_cross = h_in

    proj = [h_in @ params.w_pop[p] for p in (0, 1)]
    proj_cross = [h_cross @ params.w_pop[p] for p in (0, 1)] if has_cross else proj

    agg = None
    for p in (VOCAL, SILENT):
        src, dst = groups.src[p], groups.dst[p]
        if src.size == 0:
            continue
        a_src = ad.slice_rows(params.a_pop[p], 0, d_out)
        a_dst = ad.slice_rows(params.a_pop[p], d_out, 2 * d_out)
        act = ad.leaky_relu(proj[p])
        s_dst = act @ a_dst

        # Within this group an edge is cross-domain iff its source sits in
        # the other population, so the same/cross choice collapses to a
        # per-node combine before any edge gathers.
        if has_cross:
            node_same = ad.tensor((pop == p).astype(dtype).reshape(-1, 1))
            node_cross = ad.tensor((pop != p).astype(dtype).reshape(-1, 1))
            s_src = ad.mul(act @ a_src, node_same) \
                + ad.mul(ad.leaky_relu(proj_cross[p]) @ a_src, node_cross)
            proj_eff = ad.scale_rows(proj[p], node_same) \
                + ad.scale_rows(proj_cross[p], node_cross)
        else:
            s_src = act @ a_src
            proj_eff = proj[p]

        scores = ad.gather_rows(s_src, src, plan=groups.src_plan[p]) \
            + ad.gather_rows(s_dst, dst, plan=groups.dst_plan[p])
        if raw_scores:
            alpha = scores
        else:
            alpha = ad.segment_softmax(scores, groups.seg[p],
                                       num_segments=groups.n_seg[p])
        src_rows = ad.gather_rows(proj_eff, src, plan=groups.src_plan[p])
        part = ad.scatter_add_rows(ad.scale_rows(src_rows, alpha), dst, n,
                                   plan=groups.dst_plan[p])
        agg = part if agg is None else agg + part

    self_term = ad.scale_rows(proj[VOCAL], mask_vocal) \
        + ad.scale_rows(proj[SILENT], mask_silent)
    out = self_term if agg is None else agg + self_term
    return ad.leaky_relu(out)
