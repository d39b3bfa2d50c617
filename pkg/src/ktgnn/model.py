"""Full model: feature completion, message passing, classifier transfer.

Ablation switches degrade individual stages: ``no_dafc`` feeds the stored
(zero-filled) unobservable block straight through, ``no_damp`` replaces
message passing with per-layer dense transforms, ``no_dtc`` trains a single
classifier on all labeled train nodes, and ``no_kl_loss`` / ``no_dist_loss``
zero the corresponding loss weights while still recording the terms.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dafc, damp, dtc
from .graph import SPLIT_TRAIN
from .initializers import glorot, zeros

ABLATIONS = ("no_dafc", "no_damp", "no_dtc", "no_dist_loss", "no_kl_loss")
SUBCLASSIFIERS = ("clf_s", "clf_t", "gen")


@dataclass
class ForwardResult:
    loss: ad.DTensor
    loss_clf: float
    loss_kl: float
    loss_dist: float
    silent_scores: dict
    silent_ids: np.ndarray
    completion: dafc.CompletionResult | None = None
    h: ad.DTensor | None = None


def _softmax_rows(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class KTGNNModel:
    """Bundles parameters and the end-to-end forward pass on one graph."""

    def __init__(self, g, hidden_dim=64, K=2, num_layers=2, seed=0,
                 lam=1.0, gamma=1.0, ablations=(), raw_scores=False,
                 dropout=0.0, detach_kl_teachers=True, dtype=np.float64):
        unknown = set(ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")
        self.g = g
        self.K = K
        self.raw_scores = raw_scores
        self.dropout = dropout
        self.detach_kl_teachers = detach_kl_teachers
        self.dtype = dtype
        self.no_dafc = "no_dafc" in ablations
        self.no_damp = "no_damp" in ablations
        self.no_dtc = "no_dtc" in ablations
        self.lam = 0.0 if ("no_kl_loss" in ablations or self.no_dtc) else lam
        self.gamma = 0.0 if ("no_dist_loss" in ablations or self.no_dafc) else gamma

        rng = np.random.default_rng(seed)
        d_obs, d_unobs = g.d_obs, g.d_unobs
        d_in = d_obs + d_unobs

        self.dafc_params = None
        self.schedule = None
        if not self.no_dafc:
            self.dafc_params = dafc.DAFCParams.init(rng, d_obs, d_unobs, hidden_dim, dtype)
            self.schedule = dafc.completion_schedule(g, K)

        dims = [d_in] + [hidden_dim] * num_layers
        if self.no_damp:
            self.plain_layers = [glorot(rng, dims[i], dims[i + 1], dtype)
                                 for i in range(num_layers)]
            self.damp_layers = None
            self.groups = None
        else:
            self.damp_layers = [damp.DAMPLayerParams.init(rng, dims[i], dims[i + 1], dtype)
                                for i in range(num_layers)]
            self.plain_layers = None
            self.groups = damp.edge_groups(g)

        if self.no_dtc:
            self.w_clf = glorot(rng, hidden_dim, 2, dtype)
            self.b_clf = zeros(1, 2, dtype)
            self.dtc_params = None
        else:
            self.dtc_params = dtc.DTCParams.init(rng, hidden_dim, 2, dtype)

        self._dropout_rng = np.random.default_rng(seed + 1)
        self._x_obs = ad.tensor(g.x_obs.astype(dtype, copy=False))
        self._warned_no_completion = False

    def parameters(self):
        out = []
        if self.dafc_params is not None:
            out.extend(self.dafc_params.named_tensors())
        if self.damp_layers is not None:
            for i, layer in enumerate(self.damp_layers):
                out.extend(layer.named_tensors(prefix=f"damp{i}"))
        else:
            out.extend((f"plain{i}.w", w) for i, w in enumerate(self.plain_layers))
        if self.dtc_params is not None:
            out.extend(self.dtc_params.named_tensors())
        else:
            out.extend([("clf.w", self.w_clf), ("clf.b", self.b_clf)])
        return out

    def state(self):
        return {name: t.values.copy() for name, t in self.parameters()}

    def load_state(self, state):
        for name, t in self.parameters():
            if name not in state:
                raise ValueError(f"checkpoint missing parameter {name}")
            if state[name].shape != t.values.shape:
                raise ValueError(f"parameter {name} shape {state[name].shape} != "
                                 f"{t.values.shape}")
            t.values[...] = state[name]

    def _completion(self):
        if self.no_dafc:
            completed = ad.tensor(self.g.x_unobs.astype(self.dtype, copy=True))
            return None, None, completed
        result, delta = dafc.complete_features(
            self.g, self.dafc_params, self.K,
            raw_scores=self.raw_scores, schedule=self.schedule)
        return result, delta, result.x_unobs_completed

    def _dist_loss(self, result, delta):
        if result is None:
            return ad.tensor([[0.0]])
        if not result.frontier_sets:
            if not self._warned_no_completion:
                warnings.warn("no silent node reachable from the vocal set; "
                              "distribution-consistency loss is zero")
                self._warned_no_completion = True
            return ad.tensor([[0.0]])
        return dafc.distribution_consistency_loss(self.g, result, delta)

    def _layers(self, h, training):
        layers = self.damp_layers if self.damp_layers is not None else self.plain_layers
        for i, layer in enumerate(layers):
            if self.damp_layers is not None:
                h = damp.damp_layer_forward(self.g, h, layer,
                                            raw_scores=self.raw_scores, groups=self.groups)
            else:
                h = ad.leaky_relu(h @ layer)
            last = i == len(layers) - 1
            if training and self.dropout > 0.0 and not last:
                keep = (self._dropout_rng.random(h.shape) >= self.dropout)
                mask = keep.astype(self.dtype) / (1.0 - self.dropout)
                h = ad.mul(h, ad.tensor(mask))
        return h

    def forward(self, training=True):
        g = self.g
        result, delta, completed = self._completion()
        h = self._layers(ad.concat_cols([self._x_obs, completed]), training)

        silent = g.silent_ids()
        if self.no_dtc:
            probs = ad.row_softmax(ad.gather_rows(h, np.arange(g.num_nodes)) @ self.w_clf
                                   + self.b_clf)
            train_mask = (g.split == SPLIT_TRAIN) & (g.labels != -1)
            pos = np.flatnonzero(train_mask)
            clf = dtc._bce(ad.slice_cols(ad.gather_rows(probs, pos), 1, 2),
                           g.labels[pos].astype(np.float64))
            kl = ad.tensor([[0.0]])
            silent_pos = probs.values[silent, 1].copy()
            scores = {name: silent_pos for name in SUBCLASSIFIERS}
        else:
            outputs = dtc.dtc_forward(h, g, self.dtc_params)
            clf = dtc.classification_loss(outputs, g)
            kl = dtc.kl_loss(outputs, detach_teachers=self.detach_kl_teachers)
            hs = h.values[silent]
            p = self.dtc_params
            scores = {
                "clf_s": _softmax_rows(hs @ p.w_clf_s.values + p.b_clf_s.values)[:, 1],
                "clf_t": outputs.p_t.values[:, 1].copy(),
                "gen": outputs.p_hat_t.values[:, 1].copy(),
            }

        dist = self._dist_loss(result, delta)
        loss = dtc.total_loss(clf, kl, dist, self.lam, self.gamma)
        return ForwardResult(loss=loss, loss_clf=clf.item(), loss_kl=kl.item(),
                             loss_dist=dist.item(), silent_scores=scores,
                             silent_ids=silent, completion=result, h=h)
