"""Vocal/silent graph data model.

Nodes split into a vocal population (complete features, labels) and a
silent population (observable features only, labels rare). Topology is an
undirected edge set stored as CSR with both directions materialized and
per-row neighbor lists sorted ascending.
"""

from dataclasses import dataclass

import numpy as np

VOCAL = 0
SILENT = 1

SPLIT_NONE = 0
SPLIT_TRAIN = 1
SPLIT_VAL = 2
SPLIT_TEST = 3

SPLIT_NAMES = {SPLIT_NONE: "none", SPLIT_TRAIN: "train", SPLIT_VAL: "val", SPLIT_TEST: "test"}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}


@dataclass(frozen=True)
class VSGraph:
    """Immutable vocal/silent graph.

    x_unobs rows are valid only where unobs_valid is set (all vocal nodes at
    load time); invalid rows are zeros. labels use -1 for unavailable.
    """

    num_nodes: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    population: np.ndarray
    x_obs: np.ndarray
    x_unobs: np.ndarray
    unobs_valid: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    @property
    def d_obs(self):
        return self.x_obs.shape[1]

    @property
    def d_unobs(self):
        return self.x_unobs.shape[1]

    @property
    def num_directed_edges(self):
        return int(self.csr_offsets[-1])

    def vocal_ids(self):
        return np.flatnonzero(self.population == VOCAL)

    def silent_ids(self):
        return np.flatnonzero(self.population == SILENT)

    def neighbors(self, i, population=None):
        """CSR neighbors of node i in stored (ascending) order, optionally
        restricted to one population."""
        if not 0 <= i < self.num_nodes:
            raise ValueError(f"node id {i} out of range [0, {self.num_nodes})")
        nbrs = self.csr_targets[self.csr_offsets[i]:self.csr_offsets[i + 1]]
        if population is None:
            return nbrs
        return nbrs[self.population[nbrs] == population]

    def edge_arrays(self):
        """Directed edge list (src, dst) implied by the CSR, dst-major order."""
        dst = np.repeat(np.arange(self.num_nodes), np.diff(self.csr_offsets))
        return self.csr_targets.copy(), dst

    def replace_split(self, split):
        split = np.asarray(split, dtype=np.int8)
        _check_split(self.population, self.labels, split)
        return VSGraph(self.num_nodes, self.csr_offsets, self.csr_targets,
                       self.population, self.x_obs, self.x_unobs,
                       self.unobs_valid, self.labels, split)


@dataclass(frozen=True)
class PopulationMeans:
    """Per-population feature means; full-feature means exist only once the
    unobservable block is available for every node."""

    mean_obs_vocal: np.ndarray
    mean_obs_silent: np.ndarray
    mean_full_vocal: np.ndarray | None = None
    mean_full_silent: np.ndarray | None = None


def _dedupe_and_symmetrize(edges, num_nodes):
    """Canonicalize an undirected edge list: dedupe, keep self-loops once,
    emit both directions for proper edges."""
    pairs = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise ValueError(f"edge ({u}, {v}) references a node outside [0, {num_nodes})")
        pairs.add((u, v) if u <= v else (v, u))
    src, dst = [], []
    for u, v in pairs:
        src.append(u)
        dst.append(v)
        if u != v:
            src.append(v)
            dst.append(u)
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def _build_csr(src, dst, num_nodes):
    counts = np.bincount(src, minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    order = np.lexsort((dst, src))
    return offsets, dst[order]


def _check_split(population, labels, split):
    eval_mask = (split == SPLIT_VAL) | (split == SPLIT_TEST)
    bad = eval_mask & (population == VOCAL)
    if bad.any():
        raise ValueError(f"vocal node {int(np.flatnonzero(bad)[0])} assigned to val/test; "
                         "evaluation splits hold silent nodes only")
    bad = eval_mask & (labels == -1)
    if bad.any():
        raise ValueError(f"unlabeled node {int(np.flatnonzero(bad)[0])} assigned to val/test")
    labeled_vocal = (population == VOCAL) & (labels != -1)
    bad = labeled_vocal & ~((split == SPLIT_TRAIN) | (split == SPLIT_NONE))
    if bad.any():
        raise ValueError(f"labeled vocal node {int(np.flatnonzero(bad)[0])} must be in the "
                         "train split or unassigned")


def build_graph(edges, population, x_obs, x_unobs_vocal, labels, split=None):
    """Assemble a VSGraph from raw parts.

    edges: iterable of (u, v) node-id pairs (undirected, duplicates allowed).
    x_unobs_vocal: dict node_id -> row covering exactly the vocal nodes.
    split: optional per-node tag array (defaults to all none).
    """
    population = np.asarray(population, dtype=np.int8)
    num_nodes = population.shape[0]
    x_obs = np.ascontiguousarray(np.asarray(x_obs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if x_obs.shape[0] != num_nodes:
        raise ValueError(f"x_obs has {x_obs.shape[0]} rows for {num_nodes} nodes")
    if labels.shape[0] != num_nodes:
        raise ValueError(f"labels length {labels.shape[0]} != {num_nodes}")
    if not np.isin(population, (VOCAL, SILENT)).all():
        raise ValueError("population entries must be 0 (vocal) or 1 (silent)")
    if not np.isin(labels, (-1, 0, 1)).all():
        raise ValueError("labels must be 0, 1, or -1 (unavailable)")

    vocal = np.flatnonzero(population == VOCAL)
    vocal_set = set(vocal.tolist())
    extra = set(int(k) for k in x_unobs_vocal) - vocal_set
    if extra:
        raise ValueError(f"x_unobs_vocal contains non-vocal node {min(extra)}")
    missing = vocal_set - set(int(k) for k in x_unobs_vocal)
    if missing:
        raise ValueError(f"vocal node {min(missing)} missing from x_unobs_vocal")

    widths = {np.asarray(row).reshape(-1).shape[0] for row in x_unobs_vocal.values()}
    if len(widths) > 1:
        raise ValueError(f"inconsistent unobservable widths {sorted(widths)}")
    d_unobs = widths.pop() if widths else 0
    x_unobs = np.zeros((num_nodes, d_unobs), dtype=np.float64)
    unobs_valid = np.zeros(num_nodes, dtype=bool)
    for node, row in x_unobs_vocal.items():
        x_unobs[int(node)] = np.asarray(row, dtype=np.float64).reshape(-1)
        unobs_valid[int(node)] = True

    if split is None:
        split = np.full(num_nodes, SPLIT_NONE, dtype=np.int8)
    else:
        split = np.asarray(split, dtype=np.int8)
        if split.shape[0] != num_nodes:
            raise ValueError(f"split length {split.shape[0]} != {num_nodes}")
    _check_split(population, labels, split)

    src, dst = _dedupe_and_symmetrize(edges, num_nodes)
    offsets, targets = _build_csr(src, dst, num_nodes)
    return VSGraph(num_nodes, offsets, targets, population, x_obs, x_unobs,
                   unobs_valid, labels, split)


def population_means(g, completed_unobs=None, full=False):
    """Arithmetic feature means over each full population (transductive).

    With ``full=True`` the concatenated [obs || unobs] means are included;
    that requires ``completed_unobs`` (an N x D_u matrix valid for every
    node), since stored silent rows are structural zeros.
    """
    vocal = g.vocal_ids()
    silent = g.silent_ids()
    if vocal.size == 0:
        raise ValueError("graph has no vocal nodes")
    if silent.size == 0:
        raise ValueError("graph has no silent nodes")
    mean_obs_vocal = g.x_obs[vocal].mean(axis=0)
    mean_obs_silent = g.x_obs[silent].mean(axis=0)
    if not full:
        return PopulationMeans(mean_obs_vocal, mean_obs_silent)
    if completed_unobs is None:
        raise ValueError("full means need completed unobservable features for silent nodes")
    completed_unobs = np.asarray(completed_unobs, dtype=np.float64)
    if completed_unobs.shape != (g.num_nodes, g.d_unobs):
        raise ValueError(f"completed_unobs shape {completed_unobs.shape} != "
                         f"({g.num_nodes}, {g.d_unobs})")
    full_vocal = np.concatenate([mean_obs_vocal, completed_unobs[vocal].mean(axis=0)])
    full_silent = np.concatenate([mean_obs_silent, completed_unobs[silent].mean(axis=0)])
    return PopulationMeans(mean_obs_vocal, mean_obs_silent, full_vocal, full_silent)


def cross_domain_pairs(g):
    """Unique undirected vocal-silent pairs (u < v), sorted."""
    src, dst = g.edge_arrays()
    mask = (g.population[src] != g.population[dst]) & (src < dst)
    pairs = np.stack([src[mask], dst[mask]], axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def silent_subgraph(g):
    """Induced subgraph on the silent nodes (all vocal nodes and their
    incident edges removed), ids compacted."""
    silent = g.silent_ids()
    remap = -np.ones(g.num_nodes, dtype=np.int64)
    remap[silent] = np.arange(silent.size)
    src, dst = g.edge_arrays()
    keep = (remap[src] >= 0) & (remap[dst] >= 0) & (src <= dst)
    edges = list(zip(remap[src[keep]].tolist(), remap[dst[keep]].tolist()))
    new_src, new_dst = _dedupe_and_symmetrize(edges, silent.size)
    offsets, targets = _build_csr(new_src, new_dst, silent.size)
    return VSGraph(silent.size, offsets, targets, g.population[silent],
                   g.x_obs[silent], g.x_unobs[silent], g.unobs_valid[silent],
                   g.labels[silent], g.split[silent])


def drop_cross_domain_edges(g, fraction, seed):
    """Remove floor(fraction * count) vocal-silent edges uniformly at random;
    within-domain edges are untouched."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    pairs = cross_domain_pairs(g)
    n_drop = int(np.floor(fraction * len(pairs)))
    rng = np.random.default_rng(seed)
    drop = set(map(tuple, pairs[rng.permutation(len(pairs))[:n_drop]].tolist()))

    src, dst = g.edge_arrays()
    keep_edges = []
    for u, v in zip(src.tolist(), dst.tolist()):
        if u <= v and (u, v) not in drop:
            keep_edges.append((u, v))
    new_src, new_dst = _dedupe_and_symmetrize(keep_edges, g.num_nodes)
    offsets, targets = _build_csr(new_src, new_dst, g.num_nodes)
    return VSGraph(g.num_nodes, offsets, targets, g.population, g.x_obs,
                   g.x_unobs, g.unobs_valid, g.labels, g.split)
