"""Attributed graphs, dataset I/O, synthetic SBM graphs, splits and homophily."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .sparse import SparseCSR


class DatasetError(ValueError):
    """A dataset directory could not be parsed."""


class SplitError(ValueError):
    """A split leaves some class without training nodes."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-labelled graph.

    ``edges`` holds each undirected edge once as a row ``(u, v)`` with ``u < v``.
    Self-loops are never stored; they are a normalization-time option.
    """

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = x.shape[0]
        if x.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        if y.shape != (n,):
            raise ValueError(f"expected {n} labels, got {y.shape}")
        if n and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise ValueError(f"edge endpoint outside [0, {n})")
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loops are not stored in a Graph")
        e = np.sort(e, axis=1)
        e = e[np.lexsort((e[:, 1], e[:, 0]))]
        if len(e) > 1 and np.any(np.all(np.diff(e, axis=0) == 0, axis=1)):
            raise ValueError("duplicate undirected edge")
        for name, val in (("features", x), ("labels", y), ("edges", e)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def directed_edges(self, self_loops: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge as (src, dst), optionally with i->i."""
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        if self_loops:
            loop = np.arange(self.num_nodes)
            src, dst = np.concatenate([src, loop]), np.concatenate([dst, loop])
        return src, dst

    def adjacency(self) -> SparseCSR:
        """Raw symmetric 0/1 adjacency."""
        src, dst = self.directed_edges()
        return SparseCSR.from_coo(self.num_nodes, self.num_nodes, src, dst, np.ones(len(src)))

    def permute(self, perm) -> Graph:
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.features[inv], perm[self.edges], self.labels[inv], self.num_classes)

    def with_edges(self, edges) -> Graph:
        return Graph(self.features, edges, self.labels, self.num_classes)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def masks(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = []
        for ids in (self.train, self.val, self.test):
            m = np.zeros(n, dtype=bool)
            m[ids] = True
            out.append(m)
        return tuple(out)


@dataclass(frozen=True)
class SplitSet:
    splits: tuple[Split, ...]

    def __len__(self):
        return len(self.splits)

    def __getitem__(self, i) -> Split:
        return self.splits[i]

    def __iter__(self):
        return iter(self.splits)

    def validate(self, g: Graph) -> None:
        for k, s in enumerate(self.splits):
            tr, va, te = (set(map(int, a)) for a in (s.train, s.val, s.test))
            if tr & va or tr & te or va & te:
                raise SplitError(f"split {k}: masks overlap")
            if not tr:
                raise SplitError(f"split {k}: empty train set")
            if len(set(g.labels[s.train].tolist())) < 2:
                raise SplitError(f"split {k}: train set covers fewer than 2 classes")

    def to_json(self) -> list[dict]:
        return [
            {"train": s.train.tolist(), "val": s.val.tolist(), "test": s.test.tolist()}
            for s in self.splits
        ]


@dataclass
class SbmSpec:
    n: int = 400
    C: int = 4
    p_in: float = 0.05
    p_out: float = 0.005
    f: int = 16
    mu_sig: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.C < 1 or self.n < self.C:
            raise ValueError("need n >= C >= 1")
        if self.mu_sig < 0:
            raise ValueError("mu_sig must be nonnegative")
        if self.f < 1:
            raise ValueError("f must be positive")

    @classmethod
    def from_json(cls, path) -> SbmSpec:
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


# ---------------------------------------------------------------------------
# dataset directory format


def _read_rows(path: Path):
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            yield lineno, [c.strip() for c in row]


def _parse_int(tok, path, lineno) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: expected integer, got {tok!r}") from None


def load_dataset(directory, n_splits: int = 10, seed: int = 0) -> tuple[Graph, SplitSet]:
    """Read ``features.csv``, ``edges.csv``, ``labels.csv`` and optional ``splits.json``.

    Without ``splits.json`` a stratified 60/20/20 split set is generated.
    """
    root = Path(directory)
    feat_path = root / "features.csv"
    rows = []
    width = None
    for lineno, row in _read_rows(feat_path):
        node = _parse_int(row[0], feat_path, lineno)
        if node != len(rows):
            raise DatasetError(f"{feat_path}:{lineno}: node ids must be contiguous and sorted, expected {len(rows)}")
        vals = row[1:]
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DatasetError(f"{feat_path}:{lineno}: ragged row with {len(vals)} features, expected {width}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise DatasetError(f"{feat_path}:{lineno}: non-numeric feature") from None
    n = len(rows)
    x = np.array(rows, dtype=np.float64).reshape(n, width or 0)
    if not np.all(np.isfinite(x)):
        raise DatasetError(f"{feat_path}: non-finite feature value")

    lab_path = root / "labels.csv"
    y = np.full(n, -1, dtype=np.int64)
    for lineno, row in _read_rows(lab_path):
        if len(row) != 2:
            raise DatasetError(f"{lab_path}:{lineno}: expected node_id,label")
        node, lab = _parse_int(row[0], lab_path, lineno), _parse_int(row[1], lab_path, lineno)
        if not 0 <= node < n:
            raise DatasetError(f"{lab_path}:{lineno}: unknown node {node}")
        if lab < 0:
            raise DatasetError(f"{lab_path}:{lineno}: label out of range")
        y[node] = lab
    if np.any(y < 0):
        raise DatasetError(f"{lab_path}: node {int(np.argmax(y < 0))} has no label")
    num_classes = int(y.max()) + 1 if n else 0

    edge_path = root / "edges.csv"
    seen = set()
    edges = []
    for lineno, row in _read_rows(edge_path):
        if len(row) != 2:
            raise DatasetError(f"{edge_path}:{lineno}: expected src,dst")
        u, v = _parse_int(row[0], edge_path, lineno), _parse_int(row[1], edge_path, lineno)
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"{edge_path}:{lineno}: endpoint outside [0, {n})")
        if u == v:
            raise DatasetError(f"{edge_path}:{lineno}: self-loop {u} {v}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DatasetError(f"{edge_path}:{lineno}: duplicate edge {u} {v}")
        seen.add(key)
        edges.append(key)

    g = Graph(x, np.array(edges, dtype=np.int64).reshape(-1, 2), y, num_classes)

    split_path = root / "splits.json"
    if split_path.exists():
        with open(split_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        splits = SplitSet(tuple(
            Split(*(np.asarray(s[k], dtype=np.int64) for k in ("train", "val", "test")))
            for s in raw
        ))
        splits.validate(g)
    else:
        splits = make_splits(g, n_splits=n_splits, seed=seed)
    return g, splits


def save_dataset(g: Graph, directory, splits: SplitSet | None = None) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(g.features):
            w.writerow([i] + [repr(float(v)) for v in row])
    with open(root / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(g.edges.tolist())
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(enumerate(g.labels.tolist()))
    if splits is not None:
        with open(root / "splits.json", "w", encoding="utf-8") as fh:
            json.dump(splits.to_json(), fh)


# ---------------------------------------------------------------------------


def normalize_adjacency(g: Graph, self_loops: bool = False) -> SparseCSR:
    """Symmetric normalization D^-1/2 A D^-1/2 (A + I when ``self_loops``).

    Isolated nodes without self-loops get all-zero rows.
    """
    src, dst = g.directed_edges(self_loops=self_loops)
    n = g.num_nodes
    deg = np.bincount(src, minlength=n).astype(np.float64)
    inv_sqrt = np.zeros(n)
    inv_sqrt[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    vals = inv_sqrt[src] * inv_sqrt[dst]
    return SparseCSR.from_coo(n, n, src, dst, vals)


def generate_sbm(spec: SbmSpec) -> Graph:
    """Stochastic block model with Gaussian class-offset features.

    Labels are assigned round-robin. Each unordered pair is an edge with
    probability ``p_in`` (same label) or ``p_out``. Features are
    ``mu_sig * u_c + N(0, I)`` with a random unit direction ``u_c`` per class.
    """
    rng = np.random.default_rng(spec.seed)
    n, C = spec.n, spec.C
    y = np.arange(n) % C
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(y[iu] == y[ju], spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    dirs = rng.standard_normal((C, spec.f))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x = spec.mu_sig * dirs[y] + rng.standard_normal((n, spec.f))
    return Graph(x, edges, y, C)


def edge_label_homophily(g: Graph) -> float:
    """Fraction of edges whose endpoints share a label."""
    if g.num_edges == 0:
        raise ValueError("homophily is undefined for a graph without edges")
    same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    return float(same.mean())


def make_splits(
    g: Graph, fractions=(0.6, 0.2, 0.2), n_splits: int = 10, seed: int = 0
) -> SplitSet:
    """Seeded class-stratified train/val/test splits.

    Nodes are shuffled within their class and given the key
    ``(rank + 0.5) / class_size``; sorting by key interleaves the classes
    proportionally, and the sorted order is cut at the global fraction sizes.
    Nodes beyond the three fractions stay unassigned.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or fr.sum() > 1 + 1e-12:
        raise ValueError("fractions must be three nonnegative numbers summing to at most 1")
    n = g.num_nodes
    sizes = np.floor(fr * n + 0.5).astype(int)
    sizes[2] = min(sizes[2], n - sizes[0] - sizes[1])
    cuts = np.cumsum(sizes)
    counts = np.bincount(g.labels, minlength=g.num_classes)
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_splits):
        key = np.empty(n)
        for c in np.flatnonzero(counts):
            members = rng.permutation(np.flatnonzero(g.labels == c))
            key[members] = (np.arange(len(members)) + 0.5) / len(members)
        order = np.lexsort((rng.random(n), key))
        train, val, test = (np.sort(order[a:b]) for a, b in zip((0, cuts[0], cuts[1]), cuts))
        missing = set(np.flatnonzero(counts).tolist()) - set(g.labels[train].tolist())
        if missing:
            raise SplitError(f"split {k}: classes {sorted(missing)} have no training nodes")
        out.append(Split(train, val, test))
    return SplitSet(tuple(out))
