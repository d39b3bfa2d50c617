"""On-disk dataset format, loaders, and the synthetic graph generator.

A dataset is a JSON manifest naming TSV matrices (edges, observable
features, vocal-only unobservable features, population, labels, optional
split). All numerics are written with 9 significant digits, so a saved
dataset round-trips to identical bytes.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import SILENT, SPLIT_CODES, SPLIT_NAMES, VOCAL, build_graph

FORMAT_VERSION = 1
FLOAT_FMT = "%.9g"


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    num_nodes: int
    d_obs: int
    d_unobs: int
    files: dict
    format_version: int = FORMAT_VERSION

    REQUIRED_FILES = ("edges", "features_obs", "features_unobs_vocal",
                      "population", "labels")

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}")
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON ({e})")
        try:
            manifest = cls(name=raw["name"], num_nodes=int(raw["num_nodes"]),
                           d_obs=int(raw["d_obs"]), d_unobs=int(raw["d_unobs"]),
                           files=dict(raw["files"]),
                           format_version=int(raw.get("format_version", FORMAT_VERSION)))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: malformed manifest ({e})")
        for key in cls.REQUIRED_FILES:
            if key not in manifest.files:
                raise DataError(f"{path}: manifest missing file entry {key!r}")
        return manifest

    def to_json(self):
        return {"name": self.name, "format_version": self.format_version,
                "num_nodes": self.num_nodes, "d_obs": self.d_obs,
                "d_unobs": self.d_unobs, "files": self.files}


def _read_tsv(path, expected_cols=None):
    """Parse a TSV with a header row; returns (header, rows of str)."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    if expected_cols is not None and len(header) != expected_cols:
        raise DataError(f"{path}:1: expected {expected_cols} columns, "
                        f"found {len(header)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split("\t")
        if len(cells) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, "
                            f"found {len(cells)}")
        rows.append((lineno, cells))
    return header, rows


def _parse_int(path, lineno, cell):
    try:
        return int(cell)
    except ValueError:
        raise DataError(f"{path}:{lineno}: not an integer: {cell!r}")


def _parse_float(path, lineno, cell):
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}:{lineno}: not a number: {cell!r}")


def _node_table(path, num_nodes, width, id_map):
    """Read a node-keyed numeric table into a dense (num_nodes, width) array."""
    _, rows = _read_tsv(path, expected_cols=width + 1)
    out = np.zeros((num_nodes, width), dtype=np.float64)
    seen = np.zeros(num_nodes, dtype=bool)
    for lineno, cells in rows:
        ext = _parse_int(path, lineno, cells[0])
        if ext not in id_map:
            raise DataError(f"{path}:{lineno}: unknown node id {ext}")
        i = id_map[ext]
        if seen[i]:
            raise DataError(f"{path}:{lineno}: duplicate node id {ext}")
        seen[i] = True
        out[i] = [_parse_float(path, lineno, c) for c in cells[1:]]
    if not seen.all():
        raise DataError(f"{path}: missing row for node id "
                        f"{int(np.flatnonzero(~seen)[0])}")
    return out


def load_dataset(manifest_path):
    """Load a manifest-rooted dataset directory into a VSGraph.

    External node ids may be arbitrary integers; they are remapped to dense
    0..N-1 in ascending order of the population file's ids.
    """
    manifest = DatasetManifest.from_json(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))

    def fpath(key):
        return os.path.join(root, manifest.files[key])

    pop_path = fpath("population")
    _, rows = _read_tsv(pop_path, expected_cols=2)
    ext_ids, pops = [], []
    for lineno, cells in rows:
        ext_ids.append(_parse_int(pop_path, lineno, cells[0]))
        pops.append(_parse_int(pop_path, lineno, cells[1]))
    if len(ext_ids) != manifest.num_nodes:
        raise DataError(f"{pop_path}: {len(ext_ids)} nodes, manifest declares "
                        f"{manifest.num_nodes}")
    if len(set(ext_ids)) != len(ext_ids):
        raise DataError(f"{pop_path}: duplicate node ids")
    order = sorted(range(len(ext_ids)), key=lambda k: ext_ids[k])
    id_map = {ext_ids[k]: i for i, k in enumerate(order)}
    population = np.array([pops[k] for k in order], dtype=np.int8)
    if not np.isin(population, (VOCAL, SILENT)).all():
        raise DataError(f"{pop_path}: population values must be 0 or 1")

    x_obs = _node_table(fpath("features_obs"), manifest.num_nodes,
                        manifest.d_obs, id_map)

    unobs_path = fpath("features_unobs_vocal")
    _, rows = _read_tsv(unobs_path, expected_cols=manifest.d_unobs + 1)
    x_unobs_vocal = {}
    for lineno, cells in rows:
        ext = _parse_int(unobs_path, lineno, cells[0])
        if ext not in id_map:
            raise DataError(f"{unobs_path}:{lineno}: unknown node id {ext}")
        x_unobs_vocal[id_map[ext]] = [_parse_float(unobs_path, lineno, c)
                                      for c in cells[1:]]

    labels_path = fpath("labels")
    _, rows = _read_tsv(labels_path, expected_cols=2)
    labels = np.full(manifest.num_nodes, -1, dtype=np.int64)
    for lineno, cells in rows:
        ext = _parse_int(labels_path, lineno, cells[0])
        if ext not in id_map:
            raise DataError(f"{labels_path}:{lineno}: unknown node id {ext}")
        labels[id_map[ext]] = _parse_int(labels_path, lineno, cells[1])

    edges_path = fpath("edges")
    _, rows = _read_tsv(edges_path, expected_cols=2)
    edges = []
    for lineno, cells in rows:
        u = _parse_int(edges_path, lineno, cells[0])
        v = _parse_int(edges_path, lineno, cells[1])
        if u not in id_map or v not in id_map:
            raise DataError(f"{edges_path}:{lineno}: unknown node id in edge "
                            f"({u}, {v})")
        edges.append((id_map[u], id_map[v]))

    split = None
    if "split" in manifest.files:
        split_path = fpath("split")
        _, rows = _read_tsv(split_path, expected_cols=2)
        split = np.zeros(manifest.num_nodes, dtype=np.int8)
        for lineno, cells in rows:
            ext = _parse_int(split_path, lineno, cells[0])
            if ext not in id_map:
                raise DataError(f"{split_path}:{lineno}: unknown node id {ext}")
            tag = cells[1]
            if tag not in SPLIT_CODES:
                raise DataError(f"{split_path}:{lineno}: unknown split tag {tag!r}")
            split[id_map[ext]] = SPLIT_CODES[tag]

    try:
        return build_graph(edges, population, x_obs, x_unobs_vocal, labels, split)
    except ValueError as e:
        raise DataError(f"{manifest_path}: {e}")


def _write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")


def _fmt(x):
    return FLOAT_FMT % x


def save_dataset(g, out_dir, name="dataset"):
    """Write a VSGraph as a manifest-rooted directory; returns the manifest
    path. Node ids are written densely as 0..N-1."""
    os.makedirs(out_dir, exist_ok=True)
    files = {"edges": "edges.tsv", "features_obs": "features_obs.tsv",
             "features_unobs_vocal": "features_unobs_vocal.tsv",
             "population": "population.tsv", "labels": "labels.tsv",
             "split": "split.tsv"}

    src, dst = g.edge_arrays()
    keep = src <= dst
    _write_tsv(os.path.join(out_dir, files["edges"]), ["src", "dst"],
               [[str(u), str(v)] for u, v in zip(src[keep], dst[keep])])
    _write_tsv(os.path.join(out_dir, files["features_obs"]),
               ["node_id"] + [f"x{j}" for j in range(g.d_obs)],
               [[str(i)] + [_fmt(v) for v in g.x_obs[i]] for i in range(g.num_nodes)])
    _write_tsv(os.path.join(out_dir, files["features_unobs_vocal"]),
               ["node_id"] + [f"u{j}" for j in range(g.d_unobs)],
               [[str(i)] + [_fmt(v) for v in g.x_unobs[i]] for i in g.vocal_ids()])
    _write_tsv(os.path.join(out_dir, files["population"]), ["node_id", "population"],
               [[str(i), str(int(g.population[i]))] for i in range(g.num_nodes)])
    _write_tsv(os.path.join(out_dir, files["labels"]), ["node_id", "label"],
               [[str(i), str(int(g.labels[i]))] for i in range(g.num_nodes)])
    _write_tsv(os.path.join(out_dir, files["split"]), ["node_id", "split"],
               [[str(i), SPLIT_NAMES[int(g.split[i])]] for i in range(g.num_nodes)])

    manifest = DatasetManifest(name=name, num_nodes=g.num_nodes, d_obs=g.d_obs,
                               d_unobs=g.d_unobs, files=files)
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


@dataclass(frozen=True)
class SynthConfig:
    """Two-block generator with controllable population shift.

    Observable features are unit Gaussians, shifted by ``shift_obs`` per
    dimension for vocal nodes. Unobservable features are a linear map of
    the observables plus a vocal-only ``shift_unobs`` and Gaussian noise.
    ``homophily`` > 0 biases edge placement toward feature-similar pairs
    (block-level densities still follow the configured probabilities);
    0 gives a plain two-block random graph. Labels are Bernoulli draws of a
    logistic model over the true full features; ``label_weights`` defaults
    to seeded weights that emphasize the unobservable block.
    """

    n_vocal: int = 300
    n_silent: int = 1200
    d_obs: int = 8
    d_unobs: int = 16
    intra_edge_prob: float = 0.01
    cross_edge_prob: float = 0.004
    shift_obs: float = 1.0
    shift_unobs: float = 2.0
    unobs_noise: float = 1.0
    homophily: float = 2.0
    label_weights: tuple | None = None
    label_rate_silent: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.intra_edge_prob <= 1.0:
            raise ValueError("intra_edge_prob must lie in [0, 1]")
        if not 0.0 <= self.cross_edge_prob <= 1.0:
            raise ValueError("cross_edge_prob must lie in [0, 1]")
        if not 0.0 < self.label_rate_silent <= 1.0:
            raise ValueError("label_rate_silent must lie in (0, 1]")

    def to_dict(self):
        d = self.__dict__.copy()
        if d["label_weights"] is not None:
            d["label_weights"] = list(d["label_weights"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("label_weights") is not None:
            d["label_weights"] = tuple(d["label_weights"])
        return cls(**d)


def default_benchmark_config(seed=0):
    """The frozen configuration used by the acceptance benchmark."""
    return SynthConfig(seed=seed)


def _sample_pairs(rng, pairs, prob, features, homophily):
    """Pick round(prob * len(pairs)) distinct pairs; with homophily > 0 the
    draw is weighted toward feature-similar endpoints (Gumbel top-k)."""
    n = len(pairs[0])
    k = int(round(prob * n))
    if k == 0 or n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if homophily > 0.0:
        d2 = ((features[pairs[0]] - features[pairs[1]]) ** 2).sum(axis=1)
        logw = -homophily * d2 / (2.0 * features.shape[1])
    else:
        logw = np.zeros(n)
    keys = logw + rng.gumbel(size=n)
    top = np.argpartition(-keys, k - 1)[:k]
    return pairs[0][top], pairs[1][top]


def generate_synthetic(cfg, return_truth=False):
    """Generate a VSGraph per the config; seed-deterministic.

    With return_truth=True also returns the unmasked unobservable feature
    matrix (useful for oracle models)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_vocal + cfg.n_silent
    population = np.concatenate([np.zeros(cfg.n_vocal, dtype=np.int8),
                                 np.ones(cfg.n_silent, dtype=np.int8)])
    vocal_mask = (population == VOCAL).astype(np.float64).reshape(-1, 1)

    x_obs = rng.standard_normal((n, cfg.d_obs))
    x_obs += cfg.shift_obs * vocal_mask

    unobs_map = rng.normal(0.0, 1.0 / np.sqrt(cfg.d_obs), (cfg.d_obs, cfg.d_unobs))
    x_unobs_true = (x_obs @ unobs_map
                    + cfg.shift_unobs * vocal_mask
                    + rng.normal(0.0, cfg.unobs_noise, (n, cfg.d_unobs)))

    if cfg.label_weights is not None:
        w = np.asarray(cfg.label_weights, dtype=np.float64)
        if w.shape != (cfg.d_obs + cfg.d_unobs,):
            raise ValueError(f"label_weights must have length "
                             f"{cfg.d_obs + cfg.d_unobs}, got {w.shape}")
    else:
        w = np.concatenate([0.4 * rng.standard_normal(cfg.d_obs),
                            1.5 * rng.standard_normal(cfg.d_unobs)])
    z = np.concatenate([x_obs, x_unobs_true], axis=1) @ w
    z -= np.median(z)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-z))).astype(np.int64)

    full = np.concatenate([x_obs, x_unobs_true], axis=1)
    vocal_ids = np.arange(cfg.n_vocal)
    silent_ids = np.arange(cfg.n_vocal, n)
    edges = []
    for ids_a, ids_b, prob in ((vocal_ids, vocal_ids, cfg.intra_edge_prob),
                               (silent_ids, silent_ids, cfg.intra_edge_prob),
                               (vocal_ids, silent_ids, cfg.cross_edge_prob)):
        if ids_a is ids_b:
            iu, ju = np.triu_indices(len(ids_a), k=1)
            pairs = (ids_a[iu], ids_a[ju])
        else:
            grid_a, grid_b = np.meshgrid(ids_a, ids_b, indexing="ij")
            pairs = (grid_a.ravel(), grid_b.ravel())
        u, v = _sample_pairs(rng, pairs, prob, full, cfg.homophily)
        edges.extend(zip(u.tolist(), v.tolist()))

    labels = y.copy()
    hidden = rng.random(cfg.n_silent) >= cfg.label_rate_silent
    labels[silent_ids[hidden]] = -1

    x_unobs_vocal = {int(i): x_unobs_true[i] for i in vocal_ids}
    g = build_graph(edges, population, x_obs, x_unobs_vocal, labels)
    if return_truth:
        return g, x_unobs_true
    return g


def export_stats(g):
    """Summary tables over observable features.

    Returns (feature_stats, projection), each as a (header, rows) pair:
    per-feature quartiles/mean/std for every population x label group, and
    a 2-D PCA projection of the observable features (zero empirical mean).
    """
    stats_header = ["feature", "population", "label", "count", "mean", "std",
                    "q1", "median", "q3"]
    stats_rows = []
    for j in range(g.d_obs):
        col = g.x_obs[:, j]
        for pop in (VOCAL, SILENT):
            for label in (-1, 0, 1):
                mask = (g.population == pop) & (g.labels == label)
                if not mask.any():
                    continue
                vals = col[mask]
                q1, med, q3 = np.percentile(vals, (25, 50, 75))
                stats_rows.append([str(j), str(pop), str(label), str(int(mask.sum())),
                                   _fmt(vals.mean()), _fmt(vals.std()),
                                   _fmt(q1), _fmt(med), _fmt(q3)])

    centered = g.x_obs - g.x_obs.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # Fix each component's sign so projections are reproducible.
    for r in range(components.shape[0]):
        lead = components[r, np.argmax(np.abs(components[r]))]
        if lead < 0:
            components[r] = -components[r]
    proj = centered @ components.T
    proj_header = ["node_id", "pc1", "pc2", "population", "label"]
    proj_rows = [[str(i), _fmt(proj[i, 0]), _fmt(proj[i, 1]),
                  str(int(g.population[i])), str(int(g.labels[i]))]
                 for i in range(g.num_nodes)]
    return (stats_header, stats_rows), (proj_header, proj_rows)


def write_table(path, table, sep=","):
    header, rows = table
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sep.join(header) + "\n")
        for row in rows:
            fh.write(sep.join(row) + "\n")
