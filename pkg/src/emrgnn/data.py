"""Datasets: on-disk manifests and a synthetic multi-relational block model.

Manifest grammar (one entry per line, ``#`` starts a comment)::

    name        = <text>
    n           = <int>
    relation    = <relation-name> <path>     # repeatable; order = relation index
    features    = <path>                     # optional CSV, one row per node
    labels      = <path>                     # "node_id,label" lines
    splits      = <path>                     # [train] / [val] / [test] sections of ids
    featureless = true | false               # identity features when true

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import RelationalGraph, build_graph, read_edge_list, write_edge_list

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        sets = {}
        for name in SPLIT_NAMES:
            a = np.asarray(getattr(self, name), dtype=np.int64).ravel()
            if np.unique(a).size != a.size:
                raise ValidationError(f"{name} split lists a node twice")
            object.__setattr__(self, name, a)
            sets[name] = set(a.tolist())
        for i, a in enumerate(SPLIT_NAMES):
            for b in SPLIT_NAMES[i + 1:]:
                both = sets[a] & sets[b]
                if both:
                    raise ValidationError(f"{a} and {b} splits overlap (e.g. node {min(both)})")

    def __getitem__(self, name):
        return getattr(self, name)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    n: int
    relations: tuple[tuple[str, Path], ...]
    labels: Path
    splits: Path
    features: Path | None = None
    featureless: bool = False
    source: Path | None = None


@dataclass
class Dataset:
    graph: RelationalGraph
    features: np.ndarray
    labels: np.ndarray
    splits: Splits
    name: str = "dataset"

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


# ---------------------------------------------------------------------------
# manifest parsing


def _parse_bool(text: str, where: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValidationError(f"{where}: expected true/false, got {text!r}")


def parse_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest; errors carry ``path:line:col``."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    base = path.parent
    fields: dict[str, tuple[str, str]] = {}
    relations: list[tuple[str, Path]] = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            if "=" not in line:
                col = len(line) - len(line.lstrip()) + 1
                raise ValidationError(f"{path}:{lineno}:{col}: expected 'key = value'")
            key_part, value_part = line.split("=", 1)
            key = key_part.strip()
            value = value_part.strip()
            where = f"{path}:{lineno}:{line.index('=') + 2}"
            if not value:
                raise ValidationError(f"{where}: empty value for {key!r}")
            if key == "relation":
                parts = value.split()
                if len(parts) != 2:
                    raise ValidationError(f"{where}: relation needs '<name> <path>'")
                relations.append((parts[0], base / parts[1]))
            elif key in ("name", "n", "features", "labels", "splits", "featureless"):
                if key in fields:
                    raise ValidationError(f"{path}:{lineno}:1: duplicate key {key!r}")
                fields[key] = (value, where)
            else:
                raise ValidationError(f"{path}:{lineno}:{len(key_part) - len(key_part.lstrip()) + 1}: unknown key {key!r}")

    for req in ("n", "labels", "splits"):
        if req not in fields:
            raise ValidationError(f"{path}: missing required key {req!r}")
    if not relations:
        raise ValidationError(f"{path}: no relation entries")
    n_text, n_where = fields["n"]
    try:
        n = int(n_text)
    except ValueError:
        raise ValidationError(f"{n_where}: n must be an integer, got {n_text!r}") from None
    if n <= 0:
        raise ValidationError(f"{n_where}: n must be positive")
    featureless = _parse_bool(*fields["featureless"]) if "featureless" in fields else False
    features = base / fields["features"][0] if "features" in fields else None
    if features is None and not featureless:
        raise ValidationError(f"{path}: give a features file or set featureless = true")
    names = [r[0] for r in relations]
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: duplicate relation names")
    manifest = DatasetManifest(
        name=fields.get("name", (path.stem, ""))[0],
        n=n,
        relations=tuple(relations),
        labels=base / fields["labels"][0],
        splits=base / fields["splits"][0],
        features=features,
        featureless=featureless,
        source=path,
    )
    for label, p in [("labels", manifest.labels), ("splits", manifest.splits)] + [
        (f"relation {nm}", p) for nm, p in manifest.relations
    ] + ([("features", manifest.features)] if manifest.features is not None and not featureless else []):
        if not p.is_file():
            raise ValidationError(f"{path}: {label} file not found: {p}")
    return manifest


def read_labels(path, n: int) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    with Path(path).open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'node_id,label'")
            try:
                node, lab = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-integer entry in {line!r}") from None
            if not 0 <= node < n:
                raise ValidationError(f"{path}:{lineno}: node id {node} out of range [0, {n})")
            if lab < 0:
                raise ValidationError(f"{path}:{lineno}: negative label {lab}")
            labels[node] = lab
    return labels


def read_splits(path, n: int) -> Splits:
    sections: dict[str, list[int]] = {}
    current = None
    with Path(path).open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                name = line.strip("[] ").lower()
                if name not in SPLIT_NAMES:
                    raise ValidationError(f"{path}:{lineno}: unknown split section {line!r}")
                if name in sections:
                    raise ValidationError(f"{path}:{lineno}: section [{name}] repeated")
                current = sections.setdefault(name, [])
                continue
            if current is None:
                raise ValidationError(f"{path}:{lineno}: node ids before any [train]/[val]/[test] header")
            for tok in line.replace(",", " ").split():
                try:
                    v = int(tok)
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: non-integer node id {tok!r}") from None
                if not 0 <= v < n:
                    raise ValidationError(f"{path}:{lineno}: node id {v} out of range [0, {n})")
                current.append(v)
    missing = [s for s in SPLIT_NAMES if s not in sections]
    if missing:
        raise ValidationError(f"{path}: missing split sections {missing}")
    try:
        return Splits(*(np.array(sections[s], dtype=np.int64) for s in SPLIT_NAMES))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def read_features(path, n: int) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter=",", comments="#", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed feature file ({exc})") from None
    if X.shape[0] != n:
        raise ValidationError(f"{path}: {X.shape[0]} feature rows for n={n}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{path}: non-finite feature values")
    return X


def load_dataset(manifest) -> Dataset:
    """Load a manifest (object or path) into graph, features, labels, splits."""
    if not isinstance(manifest, DatasetManifest):
        manifest = parse_manifest(manifest)
    n = manifest.n
    edge_lists = []
    for name, p in manifest.relations:
        e = read_edge_list(p)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValidationError(f"{p}: node index {int(e.max()) if e.max() >= n else int(e.min())} out of range [0, {n})")
        edge_lists.append(e)
    graph = build_graph(edge_lists, n, [nm for nm, _ in manifest.relations])
    X = np.eye(n) if manifest.featureless else read_features(manifest.features, n)
    labels = read_labels(manifest.labels, n)
    splits = read_splits(manifest.splits, n)
    for s in SPLIT_NAMES:
        idx = splits[s]
        if idx.size and np.any(labels[idx] < 0):
            raise ValidationError(f"{manifest.labels}: {s} split contains unlabelled nodes")
    return Dataset(graph, X, labels, splits, manifest.name)


def write_dataset(directory, ds: Dataset, name: str | None = None) -> Path:
    """Write ``ds`` in manifest format under ``directory``; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    name = name or ds.name
    lines = [f"name = {name}", f"n = {ds.graph.n}"]
    for r, rel_name in enumerate(ds.graph.relation_names):
        fname = f"rel_{r:02d}_{rel_name}.txt"
        write_edge_list(d / fname, ds.graph.edge_list(r), header=f"relation {rel_name}")
        lines.append(f"relation = {rel_name} {fname}")
    np.savetxt(d / "features.csv", ds.features, delimiter=",", fmt="%.17g")
    lines.append("features = features.csv")
    with (d / "labels.csv").open("w") as fh:
        for i, y in enumerate(ds.labels):
            if y >= 0:
                fh.write(f"{i},{int(y)}\n")
    lines.append("labels = labels.csv")
    with (d / "splits.txt").open("w") as fh:
        for s in SPLIT_NAMES:
            fh.write(f"[{s}]\n")
            ids = ds.splits[s]
            for start in range(0, ids.size, 20):
                fh.write(" ".join(str(int(v)) for v in ids[start:start + 20]) + "\n")
    lines.append("splits = splits.txt")
    lines.append("featureless = false")
    manifest = d / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# synthetic block model


@dataclass(frozen=True)
class SbmSpec:
    """Multi-relational stochastic block model.

    ``relations`` holds one ``(p_in, p_out)`` pair per relation. Features are
    ``separation * m_y + N(0, I)`` with random unit class means ``m_c``.
    """

    n: int = 600
    classes: int = 3
    relations: tuple[tuple[float, float], ...] = ((0.05, 0.005), (0.01, 0.01), (0.01, 0.01))
    relation_names: tuple[str, ...] = ()
    feature_dim: int = 16
    separation: float = 2.5
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.1, 0.1, 0.8)

    def __post_init__(self):
        if self.classes < 2:
            raise ValidationError("sbm.classes must be >= 2")
        if self.classes > self.n:
            raise ValidationError(f"sbm.classes={self.classes} exceeds n={self.n}")
        if not self.relations:
            raise ValidationError("sbm needs at least one relation")
        for r, (p_in, p_out) in enumerate(self.relations):
            if not 0.0 <= p_out <= p_in <= 1.0:
                raise ValidationError(f"relation {r}: need 0 <= p_out <= p_in <= 1, got ({p_in}, {p_out})")
        if self.relation_names and len(self.relation_names) != len(self.relations):
            raise ValidationError("sbm.relation_names must match the relations")
        if self.feature_dim < 1:
            raise ValidationError("sbm.feature_dim must be >= 1")
        fr = self.split_fractions
        if len(fr) != 3 or min(fr) < 0 or sum(fr) > 1.0 + 1e-12:
            raise ValidationError("split fractions must be three nonnegative numbers summing to <= 1")


def triangular_pair(k, m: int):
    """Decode linear indices ``k`` into pairs ``(i, j)``, ``i < j < m``, in row-major order."""
    k = np.asarray(k, dtype=np.int64)
    total = m * (m - 1) // 2
    i = m - 2 - np.floor(np.sqrt(-8.0 * k + 4.0 * m * (m - 1) - 7) / 2.0 - 0.5).astype(np.int64)
    j = k + i + 1 - total + (m - i) * (m - i - 1) // 2
    return i, j


def _sample_pairs(rng, count: int, p: float) -> np.ndarray:
    m = rng.binomial(count, p) if p < 1.0 else count
    return rng.choice(count, size=m, replace=False) if m else np.zeros(0, dtype=np.int64)


def _sample_relation(rng, members: list[np.ndarray], p_in: float, p_out: float) -> np.ndarray:
    edges = []
    for a, ma in enumerate(members):
        if p_in > 0 and ma.size > 1:
            i, j = triangular_pair(_sample_pairs(rng, ma.size * (ma.size - 1) // 2, p_in), ma.size)
            edges.append(np.stack([ma[i], ma[j]], axis=1))
        for mb in members[a + 1:]:
            if p_out > 0:
                i, j = np.divmod(_sample_pairs(rng, ma.size * mb.size, p_out), mb.size)
                edges.append(np.stack([ma[i], mb[j]], axis=1))
    return np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)


def stratified_splits(labels: np.ndarray, fractions, rng) -> Splits:
    parts = {s: [] for s in SPLIT_NAMES}
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * idx.size))
        n_va = int(round(fractions[1] * idx.size))
        n_te = min(idx.size - n_tr - n_va, int(round(fractions[2] * idx.size)))
        parts["train"].append(idx[:n_tr])
        parts["val"].append(idx[n_tr:n_tr + n_va])
        parts["test"].append(idx[n_tr + n_va:n_tr + n_va + n_te])
    return Splits(*(np.sort(np.concatenate(parts[s])) for s in SPLIT_NAMES))


def generate_sbm(spec: SbmSpec) -> Dataset:
    """Sample graph, Gaussian class-mean features, labels and stratified splits."""
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.n) % spec.classes).astype(np.int64)
    members = [np.flatnonzero(labels == c) for c in range(spec.classes)]
    edge_lists = [_sample_relation(rng, members, p_in, p_out) for p_in, p_out in spec.relations]
    names = spec.relation_names or tuple(f"rel{r}" for r in range(len(spec.relations)))
    graph = build_graph(edge_lists, spec.n, names)
    means = rng.normal(size=(spec.classes, spec.feature_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    X = spec.separation * means[labels] + rng.normal(size=(spec.n, spec.feature_dim))
    splits = stratified_splits(labels, spec.split_fractions, rng)
    return Dataset(graph, X, labels, splits, "sbm")
