"""Reference models: a 2-layer MLP and a symmetric-normalized GCN, each
combined with a heuristic completion strategy for the missing unobservable
block. They train through the same loop and metrics as the full model; the
loss is a single binary cross-entropy over all labeled train nodes.
"""

import numpy as np

from . import autodiff as ad
from . import dtc
from .graph import SILENT, SPLIT_TRAIN, VOCAL
from .initializers import glorot, zeros
from .model import ForwardResult, SUBCLASSIFIERS

COMPLETION_STRATEGIES = ("none", "zero", "mean")


def apply_completion(g, strategy):
    """Deterministic feature assembly for models without learned completion.

    none: observable block only. zero: stored features (silent unobservable
    rows stay zero). mean: silent rows take the mean of their vocal
    neighbors' unobservable features (zero when there is no vocal neighbor).
    """
    if strategy == "none":
        return g.x_obs.copy()
    if strategy == "zero":
        return np.concatenate([g.x_obs, g.x_unobs], axis=1)
    if strategy == "mean":
        filled = g.x_unobs.copy()
        for i in g.silent_ids():
            vocal_nbrs = g.neighbors(i, population=VOCAL)
            if vocal_nbrs.size:
                filled[i] = g.x_unobs[vocal_nbrs].mean(axis=0)
        return np.concatenate([g.x_obs, filled], axis=1)
    raise ValueError(f"unknown completion strategy {strategy!r}")


def gcn_normalization(g):
    """Edge weights of D^-1/2 (A + I) D^-1/2 with self-loops added, as
    (src, dst, coeff) arrays in dst-major order."""
    src, dst = g.edge_arrays()
    loops = np.arange(g.num_nodes)
    src = np.concatenate([src, loops])
    dst = np.concatenate([dst, loops])
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    deg = np.bincount(dst, minlength=g.num_nodes).astype(np.float64)
    coeff = 1.0 / np.sqrt(deg[src] * deg[dst])
    return src, dst, coeff.reshape(-1, 1)


def gcn_layer(h, src, dst, coeff, w, num_nodes, activate=True, plans=None):
    """H' = act(A_hat H W) for one precomputed normalized adjacency."""
    src_plan, dst_plan = plans if plans is not None else (None, None)
    propagated = ad.scatter_add_rows(
        ad.scale_rows(ad.gather_rows(h @ w, src, plan=src_plan), ad.tensor(coeff)),
        dst, num_nodes, plan=dst_plan)
    return ad.leaky_relu(propagated) if activate else propagated


class GCNBaseline:
    """Two-layer GCN over completed features, two-logit output."""

    def __init__(self, g, completion="mean", hidden_dim=64, seed=0, dtype=np.float64):
        self.g = g
        rng = np.random.default_rng(seed)
        x = apply_completion(g, completion).astype(dtype)
        self.x = ad.tensor(x)
        self.src, self.dst, coeff = gcn_normalization(g)
        self.coeff = coeff.astype(dtype)
        self.plans = (ad.ScatterPlan(self.src, g.num_nodes),
                      ad.ScatterPlan(self.dst, g.num_nodes))
        self.w1 = glorot(rng, x.shape[1], hidden_dim, dtype)
        self.w2 = glorot(rng, hidden_dim, 2, dtype)

    def parameters(self):
        return [("gcn.w1", self.w1), ("gcn.w2", self.w2)]

    def state(self):
        return {name: t.values.copy() for name, t in self.parameters()}

    def load_state(self, state):
        for name, t in self.parameters():
            t.values[...] = state[name]

    def _logits(self):
        n = self.g.num_nodes
        h = gcn_layer(self.x, self.src, self.dst, self.coeff, self.w1, n,
                      plans=self.plans)
        return gcn_layer(h, self.src, self.dst, self.coeff, self.w2, n,
                         activate=False, plans=self.plans)

    def forward(self, training=True):
        return _single_classifier_result(self.g, self._logits())


class MLPBaseline:
    """Two-layer perceptron on completed features, graph ignored."""

    def __init__(self, g, completion="none", hidden_dim=64, seed=0, dtype=np.float64):
        self.g = g
        rng = np.random.default_rng(seed)
        x = apply_completion(g, completion).astype(dtype)
        self.x = ad.tensor(x)
        self.w1 = glorot(rng, x.shape[1], hidden_dim, dtype)
        self.b1 = zeros(1, hidden_dim, dtype)
        self.w2 = glorot(rng, hidden_dim, 2, dtype)
        self.b2 = zeros(1, 2, dtype)

    def parameters(self):
        return [("mlp.w1", self.w1), ("mlp.b1", self.b1),
                ("mlp.w2", self.w2), ("mlp.b2", self.b2)]

    def state(self):
        return {name: t.values.copy() for name, t in self.parameters()}

    def load_state(self, state):
        for name, t in self.parameters():
            t.values[...] = state[name]

    def forward(self, training=True):
        logits = ad.leaky_relu(self.x @ self.w1 + self.b1) @ self.w2 + self.b2
        return _single_classifier_result(self.g, logits)


def mlp_forward(x, w1, b1, w2, b2):
    """Functional 2-layer perceptron: LeakyReLU hidden, linear output."""
    return ad.leaky_relu(x @ w1 + b1) @ w2 + b2


def _single_classifier_result(g, logits):
    probs = ad.row_softmax(logits)
    pos = np.flatnonzero((g.split == SPLIT_TRAIN) & (g.labels != -1))
    loss = dtc._bce(ad.slice_cols(ad.gather_rows(probs, pos), 1, 2),
                    g.labels[pos].astype(np.float64))
    silent = g.silent_ids()
    silent_pos = probs.values[silent, 1].copy()
    scores = {name: silent_pos for name in SUBCLASSIFIERS}
    return ForwardResult(loss=loss, loss_clf=loss.item(), loss_kl=0.0, loss_dist=0.0,
                         silent_scores=scores, silent_ids=silent)
