"""Domain-transferable classification.

A source classifier scores vocal nodes, a target classifier scores silent
nodes, and a transfer MLP maps the source classifier's flattened weights to
a third, generated classifier that is pulled toward both via KL terms. The
generated classifier is the inference head for silent nodes.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import SILENT, SPLIT_TRAIN, VOCAL
from .initializers import glorot, zeros

PROB_EPS = 1e-12


@dataclass
class DTCParams:
    """Source/target linear classifiers plus the weight-transfer MLP.

    The MLP acts on the flattened (weights || bias) vector of the source
    classifier; its hidden width equals that vector's length, with a tanh
    hidden layer and linear output.
    """

    w_clf_s: ad.DTensor
    b_clf_s: ad.DTensor
    w_clf_t: ad.DTensor
    b_clf_t: ad.DTensor
    trans_w1: ad.DTensor
    trans_b1: ad.DTensor
    trans_w2: ad.DTensor
    trans_b2: ad.DTensor

    @classmethod
    def init(cls, rng, d, num_classes=2, dtype=np.float64):
        flat = d * num_classes + num_classes
        return cls(
            w_clf_s=glorot(rng, d, num_classes, dtype),
            b_clf_s=zeros(1, num_classes, dtype),
            w_clf_t=glorot(rng, d, num_classes, dtype),
            b_clf_t=zeros(1, num_classes, dtype),
            trans_w1=glorot(rng, flat, flat, dtype),
            trans_b1=zeros(1, flat, dtype),
            trans_w2=glorot(rng, flat, flat, dtype),
            trans_b2=zeros(1, flat, dtype),
        )

    @property
    def num_classes(self):
        return self.w_clf_s.shape[1]

    def named_tensors(self):
        return [("dtc.w_clf_s", self.w_clf_s), ("dtc.b_clf_s", self.b_clf_s),
                ("dtc.w_clf_t", self.w_clf_t), ("dtc.b_clf_t", self.b_clf_t),
                ("dtc.trans_w1", self.trans_w1), ("dtc.trans_b1", self.trans_b1),
                ("dtc.trans_w2", self.trans_w2), ("dtc.trans_b2", self.trans_b2)]


@dataclass
class DTCOutputs:
    """Per-population probability rows of the three classifiers.

    p_s / p_hat_s align with vocal_ids; p_t / p_hat_t align with silent_ids.
    Every row is a softmax over the two logits.
    """

    p_s: ad.DTensor
    p_t: ad.DTensor
    p_hat_s: ad.DTensor
    p_hat_t: ad.DTensor
    vocal_ids: np.ndarray
    silent_ids: np.ndarray


def generated_classifier(params):
    """Run the transfer MLP on the source classifier's parameters."""
    d, c = params.w_clf_s.shape
    flat = ad.concat_cols([ad.reshape(params.w_clf_s, 1, d * c), params.b_clf_s])
    hidden = ad.tanh(flat @ params.trans_w1 + params.trans_b1)
    gen = hidden @ params.trans_w2 + params.trans_b2
    w_hat = ad.reshape(ad.slice_cols(gen, 0, d * c), d, c)
    b_hat = ad.slice_cols(gen, d * c, d * c + c)
    return w_hat, b_hat


def _probs(h_rows, w, b):
    return ad.row_softmax(h_rows @ w + b)


def dtc_forward(h, g, params):
    """Score vocal rows with the source classifier, silent rows with the
    target classifier, and both with the generated classifier."""
    vocal = g.vocal_ids()
    silent = g.silent_ids()
    h_vocal = ad.gather_rows(h, vocal)
    h_silent = ad.gather_rows(h, silent)
    w_hat, b_hat = generated_classifier(params)
    return DTCOutputs(
        p_s=_probs(h_vocal, params.w_clf_s, params.b_clf_s),
        p_t=_probs(h_silent, params.w_clf_t, params.b_clf_t),
        p_hat_s=_probs(h_vocal, w_hat, b_hat),
        p_hat_t=_probs(h_silent, w_hat, b_hat),
        vocal_ids=vocal,
        silent_ids=silent,
    )


def _kl_term(p, q):
    n = p.shape[0]
    pc = ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    qc = ad.clip(q, PROB_EPS, 1.0 - PROB_EPS)
    rows = ad.mul(pc, ad.log(pc) - ad.log(qc))
    return ad.mul(ad.sum_all(rows), ad.tensor([[1.0 / n]]))


def kl_loss(outputs, detach_teachers=True):
    """Mean row-wise KL from each population's classifier to the generated
    one, summed over both populations.

    By default the teachers are gradient-stopped so only the generated
    classifier is pulled toward them.
    """
    p_s = outputs.p_s.detach() if detach_teachers else outputs.p_s
    p_t = outputs.p_t.detach() if detach_teachers else outputs.p_t
    return _kl_term(p_s, outputs.p_hat_s) + _kl_term(p_t, outputs.p_hat_t)


def _bce(probs_pos, y):
    yt = ad.tensor(y.reshape(-1, 1))
    one_minus_y = ad.tensor((1.0 - y).reshape(-1, 1))
    p = ad.clip(probs_pos, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.mul(yt, ad.log(p)) + ad.mul(one_minus_y, ad.log(ad.tensor([[1.0]]) - p))
    return ad.mul(ad.mean_all(ll), ad.tensor([[-1.0]]))


def _train_positions(g, ids):
    mask = (g.split[ids] == SPLIT_TRAIN) & (g.labels[ids] != -1)
    return np.flatnonzero(mask)


def classification_loss(outputs, g):
    """Binary cross-entropy over labeled train nodes: source classifier on
    vocal, target and generated classifiers on silent. A population with no
    labeled train nodes contributes zero (with a warning)."""
    loss = ad.tensor([[0.0]])
    pos_v = _train_positions(g, outputs.vocal_ids)
    if pos_v.size:
        y = g.labels[outputs.vocal_ids[pos_v]].astype(np.float64)
        loss = loss + _bce(ad.slice_cols(ad.gather_rows(outputs.p_s, pos_v), 1, 2), y)
    else:
        warnings.warn("no labeled vocal train nodes; source BCE term skipped")
    pos_s = _train_positions(g, outputs.silent_ids)
    if pos_s.size:
        y = g.labels[outputs.silent_ids[pos_s]].astype(np.float64)
        loss = loss + _bce(ad.slice_cols(ad.gather_rows(outputs.p_t, pos_s), 1, 2), y)
        loss = loss + _bce(ad.slice_cols(ad.gather_rows(outputs.p_hat_t, pos_s), 1, 2), y)
    else:
        warnings.warn("no labeled silent train nodes; target BCE terms skipped")
    return loss


def total_loss(clf, kl, dist, lam, gamma):
    """clf + lam * kl + gamma * dist."""
    if lam < 0 or gamma < 0:
        raise ValueError("loss weights must be nonnegative")
    return clf + ad.mul(kl, ad.tensor([[lam]])) + ad.mul(dist, ad.tensor([[gamma]]))


def predict_silent(h, g, params):
    """Positive-class probability of the generated classifier for every
    silent node, aligned with g.silent_ids()."""
    outputs = dtc_forward(h, g, params)
    return outputs.p_hat_t.values[:, 1].copy()
