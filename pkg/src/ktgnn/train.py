"""Full-batch training loop, splits, Adam, and per-epoch metric traces."""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import GCNBaseline, MLPBaseline
from .errors import NumericalError
from .graph import (SILENT, SPLIT_NONE, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL,
                    VOCAL, drop_cross_domain_edges)
from .metrics import compute_auc, compute_f1
from .model import ABLATIONS, KTGNNModel, SUBCLASSIFIERS

MODELS = ("ktgnn", "gcn", "mlp")


@dataclass(frozen=True)
class TrainConfig:
    model: str = "ktgnn"
    completion: str = "mean"          # baselines only
    hidden_dim: int = 64
    epochs: int = 300
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    lam: float = 1.0
    gamma: float = 1.0
    K: int = 2
    num_damp_layers: int = 2
    dropout: float = 0.0
    seed: int = 0
    ablations: tuple = ()
    raw_scores: bool = False
    cross_edge_drop: float = 0.0
    detach_kl_teachers: bool = True
    f1_average: str = "macro"
    float32: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}, expected one of {MODELS}")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.cross_edge_drop <= 1.0:
            raise ValueError("cross_edge_drop must lie in [0, 1]")

    def to_dict(self):
        d = self.__dict__.copy()
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "ablations" in d:
            d["ablations"] = tuple(d["ablations"])
        return cls(**d)


def split_dataset(g, ratios=(0.6, 0.2, 0.2), seed=0):
    """Assign labeled silent nodes to train/val/test at the given ratios
    (floor for train and val, remainder to test) and every labeled vocal
    node to train."""
    if not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"split ratios {ratios} must sum to 1")
    labeled_silent = np.flatnonzero((g.population == SILENT) & (g.labels != -1))
    if labeled_silent.size < 5:
        raise ValueError(f"need at least 5 labeled silent nodes, got {labeled_silent.size}")
    labeled_vocal = np.flatnonzero((g.population == VOCAL) & (g.labels != -1))
    if labeled_vocal.size == 0:
        warnings.warn("no labeled vocal nodes; training set holds silent nodes only")

    rng = np.random.default_rng(seed)
    perm = labeled_silent[rng.permutation(labeled_silent.size)]
    n = perm.size
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    split = np.full(g.num_nodes, SPLIT_NONE, dtype=np.int8)
    split[perm[:n_train]] = SPLIT_TRAIN
    split[perm[n_train:n_train + n_val]] = SPLIT_VAL
    split[perm[n_train + n_val:]] = SPLIT_TEST
    split[labeled_vocal] = SPLIT_TRAIN
    return g.replace_split(split)


class Adam:
    """Adam with bias correction; weight decay enters through the gradient."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(t.values) for _, t in self.params]
        self.v = [np.zeros_like(t.values) for _, t in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            if self.weight_decay:
                g = g + self.weight_decay * p.values
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def build_model(g, cfg):
    dtype = np.float32 if cfg.float32 else np.float64
    if cfg.model == "ktgnn":
        return KTGNNModel(g, hidden_dim=cfg.hidden_dim, K=cfg.K,
                          num_layers=cfg.num_damp_layers, seed=cfg.seed,
                          lam=cfg.lam, gamma=cfg.gamma, ablations=cfg.ablations,
                          raw_scores=cfg.raw_scores, dropout=cfg.dropout,
                          detach_kl_teachers=cfg.detach_kl_teachers, dtype=dtype)
    if cfg.model == "gcn":
        return GCNBaseline(g, completion=cfg.completion, hidden_dim=cfg.hidden_dim,
                           seed=cfg.seed, dtype=dtype)
    return MLPBaseline(g, completion=cfg.completion, hidden_dim=cfg.hidden_dim,
                       seed=cfg.seed, dtype=dtype)


@dataclass
class TrainResult:
    config: TrainConfig
    history: list                 # one dict per epoch
    best_epoch: int
    best_state: dict
    test_f1: float
    test_auc: float
    silent_ids: np.ndarray = None
    silent_scores: np.ndarray = None


def _split_metrics(g, silent_ids, scores, split_code, f1_average):
    mask = (g.split[silent_ids] == split_code) & (g.labels[silent_ids] != -1)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return float("nan"), float("nan")
    labels = g.labels[silent_ids[idx]]
    s = scores[idx]
    f1 = compute_f1(labels, s, average=f1_average)
    auc = compute_auc(labels, s) if len(set(labels.tolist())) == 2 else float("nan")
    return f1, auc


def _epoch_row(epoch, result, g, f1_average):
    row = {"epoch": epoch, "loss_clf": result.loss_clf, "loss_kl": result.loss_kl,
           "loss_dist": result.loss_dist, "loss_total": result.loss.item()}
    for split_name, code in (("train", SPLIT_TRAIN), ("val", SPLIT_VAL),
                             ("test", SPLIT_TEST)):
        for clf in SUBCLASSIFIERS:
            f1, auc = _split_metrics(g, result.silent_ids,
                                     result.silent_scores[clf], code, f1_average)
            row[f"{split_name}_{clf}_f1"] = f1
            row[f"{split_name}_{clf}_auc"] = auc
    return row


def _check_finite(result, epoch):
    for name, value in (("loss_clf", result.loss_clf), ("loss_kl", result.loss_kl),
                        ("loss_dist", result.loss_dist),
                        ("loss_total", result.loss.item())):
        if not math.isfinite(value):
            raise NumericalError(f"{name} became non-finite at epoch {epoch}")


def train(g, cfg):
    """Train on the graph's assigned split; model selection is highest
    validation F1 of the inference head, earliest epoch on ties."""
    if not ((g.split == SPLIT_VAL).any() and (g.split == SPLIT_TEST).any()):
        raise ValueError("graph has no val/test split; call split_dataset first")
    if cfg.cross_edge_drop > 0.0:
        g = drop_cross_domain_edges(g, cfg.cross_edge_drop, cfg.seed)

    model = build_model(g, cfg)
    opt = Adam(model.parameters(), lr=cfg.learning_rate,
               weight_decay=cfg.weight_decay)

    history = []
    best_val = -np.inf
    best_epoch = -1
    best_state = None
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        result = model.forward(training=True)
        _check_finite(result, epoch)
        result.loss.backward()
        opt.step()

        row = _epoch_row(epoch, result, g, cfg.f1_average)
        history.append(row)
        val_f1 = row["val_gen_f1"]
        if math.isfinite(val_f1) and val_f1 > best_val:
            best_val = val_f1
            best_epoch = epoch
            best_state = model.state()

    if best_state is None:       # no usable validation signal; keep final
        best_epoch = cfg.epochs - 1
        best_state = model.state()

    model.load_state(best_state)
    final = model.forward(training=False)
    test_f1, test_auc = _split_metrics(g, final.silent_ids, final.silent_scores["gen"],
                                       SPLIT_TEST, cfg.f1_average)
    return TrainResult(config=cfg, history=history, best_epoch=best_epoch,
                       best_state=best_state, test_f1=test_f1, test_auc=test_auc,
                       silent_ids=final.silent_ids,
                       silent_scores=final.silent_scores["gen"])


def evaluate(g, cfg, state):
    """Recompute test metrics for a saved parameter state."""
    if cfg.cross_edge_drop > 0.0:
        g = drop_cross_domain_edges(g, cfg.cross_edge_drop, cfg.seed)
    model = build_model(g, cfg)
    model.load_state(state)
    result = model.forward(training=False)
    test_f1, test_auc = _split_metrics(g, result.silent_ids, result.silent_scores["gen"],
                                       SPLIT_TEST, cfg.f1_average)
    return test_f1, test_auc, result
