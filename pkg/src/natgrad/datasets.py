"""Dataset container, CSV ingestion, and desk-scale synthetic data.

CSV layout: a header row with feature columns prefixed "x", plus either
a single integer class column "y" (classification) or regression columns
"y0".."y{k}". Parsing is strict: every malformed value names its line.
"""

import numpy as np

from . import model
from .errors import CsvParseError, DimensionMismatchError, SchemaMismatchError

SYNTHETIC_KINDS = ("two-moons", "gaussian-regression", "teacher-net")
TASKS = ("regression", "classification")


class Dataset:
    def __init__(self, features, targets, task, name="", n_classes=0,
                 val_fraction=0.25, teacher=None):
        features = np.asarray(features, dtype=np.float64)
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite entries")
        if task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if not 0 <= val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if task == "classification":
            targets = np.asarray(targets, dtype=np.int64).reshape(-1)
            if n_classes < 2:
                raise ValueError("classification needs n_classes >= 2")
            if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
                raise ValueError("class index out of range")
        else:
            targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
            if not np.all(np.isfinite(targets)):
                raise ValueError("targets contain non-finite entries")
        if targets.shape[0] != features.shape[0]:
            raise DimensionMismatchError("feature/target row counts differ")
        self.features = features
        self.targets = targets
        self.task = task
        self.name = name
        self.n_classes = int(n_classes)
        self.val_fraction = float(val_fraction)
        self.teacher = teacher

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_outputs(self):
        return self.n_classes if self.task == "classification" else self.targets.shape[1]

    def subset(self, idx):
        return Dataset(
            self.features[idx], self.targets[idx], self.task, self.name,
            self.n_classes, self.val_fraction, self.teacher,
        )


def split_train_val(dataset, rng):
    """Deterministic shuffled split; the validation share is the tail."""
    perm = rng.permutation(dataset.n_samples)
    n_val = int(round(dataset.n_samples * dataset.val_fraction))
    n_val = min(n_val, dataset.n_samples - 1)
    return dataset.subset(perm[: dataset.n_samples - n_val]), dataset.subset(
        perm[dataset.n_samples - n_val:]
    )


def _header_layout(header, schema):
    cols = [c.strip() for c in header.split(",")]
    feature_idx = [i for i, c in enumerate(cols) if c.startswith("x")]
    if not feature_idx:
        raise SchemaMismatchError("no feature columns (prefix 'x') in header")
    has_class = "y" in cols
    reg_cols = sorted(
        (c for c in cols if c.startswith("y") and c != "y" and c[1:].isdigit()),
        key=lambda c: int(c[1:]),
    )
    if schema == "classification" or (schema == "auto" and has_class):
        if not has_class:
            raise SchemaMismatchError("classification schema needs a 'y' column")
        return feature_idx, [cols.index("y")], "classification"
    if not reg_cols:
        raise SchemaMismatchError("regression schema needs 'y0'..'yK' columns")
    if [int(c[1:]) for c in reg_cols] != list(range(len(reg_cols))):
        raise SchemaMismatchError("regression label columns must be contiguous y0..yK")
    return feature_idx, [cols.index(c) for c in reg_cols], "regression"


def load_csv(path, schema="auto"):
    """Parse a dataset file; schema is 'auto', 'regression' or 'classification'."""
    if schema not in ("auto",) + TASKS:
        raise ValueError(f"schema must be 'auto' or one of {TASKS}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise CsvParseError(f"{path}: empty file")
    feature_idx, label_idx, task = _header_layout(lines[0], schema)
    n_cols = len(lines[0].split(","))
    features, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != n_cols:
            raise CsvParseError(
                f"{path}:{lineno}: expected {n_cols} fields, got {len(parts)}"
            )
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise CsvParseError(f"{path}:{lineno}: {exc}") from exc
        features.append([values[i] for i in feature_idx])
        row_labels = [values[i] for i in label_idx]
        if task == "classification":
            if row_labels[0] != int(row_labels[0]):
                raise CsvParseError(
                    f"{path}:{lineno}: class index {row_labels[0]} is not integral"
                )
            labels.append(int(row_labels[0]))
        else:
            labels.append(row_labels)
    if task == "classification":
        n_classes = max(labels) + 1 if labels else 2
        return Dataset(np.array(features), np.array(labels), task,
                       name=str(path), n_classes=max(n_classes, 2))
    return Dataset(np.array(features), np.array(labels), task, name=str(path))


def save_csv(dataset, path):
    """Write a dataset back out at full precision (round-trip safe)."""
    header = [f"x{i}" for i in range(dataset.n_features)]
    if dataset.task == "classification":
        header.append("y")
    else:
        header.extend(f"y{i}" for i in range(dataset.targets.shape[1]))
    rows = [",".join(header)]
    for i in range(dataset.n_samples):
        cells = [f"{v:.17g}" for v in dataset.features[i]]
        if dataset.task == "classification":
            cells.append(str(int(dataset.targets[i])))
        else:
            cells.extend(f"{v:.17g}" for v in dataset.targets[i])
        rows.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def make_synthetic(kind, m, seed, noise=None):
    """Reproducible desk-scale datasets.

    two-moons: interleaved half circles, binary classification.
    gaussian-regression: linear map of gaussian inputs plus small noise.
    teacher-net: inputs labeled exactly by a random two-layer tanh net
    (zero noise); the teacher rides along for reproducibility checks.
    """
    if m < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    if kind == "two-moons":
        sigma = 0.08 if noise is None else noise
        n0 = m // 2
        n1 = m - n0
        t0 = rng.uniform(0.0, np.pi, n0)
        t1 = rng.uniform(0.0, np.pi, n1)
        upper = np.column_stack([np.cos(t0), np.sin(t0)])
        lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        x = np.vstack([upper, lower]) + rng.normal(0.0, sigma, (m, 2))
        y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
        return Dataset(x, y, "classification", name="two-moons", n_classes=2)
    if kind == "gaussian-regression":
        sigma = 0.05 if noise is None else noise
        d_i, d_o = 4, 2
        x = rng.standard_normal((m, d_i))
        w = rng.standard_normal((d_o, d_i))
        b = rng.standard_normal(d_o)
        y = x @ w.T + b + rng.normal(0.0, sigma, (m, d_o))
        return Dataset(x, y, "regression", name="gaussian-regression")
    if kind == "teacher-net":
        x = rng.standard_normal((m, 2))
        teacher = model.init_network([2, 16, 1], rng=rng)
        y = model.forward(teacher, x)[0].outputs
        return Dataset(x, y, "regression", name="teacher-net", teacher=teacher)
    raise ValueError(f"unknown synthetic dataset {kind!r}; choices: {SYNTHETIC_KINDS}")
