"""Run configuration, the training loop, and metrics persistence.

A run is fully determined by its RunConfig: the same config and seed
produce identical metric streams (wall-clock excluded from record
equality by construction). Metrics serialize one self-describing
key:value record per line; floats round-trip exactly through repr.
"""

import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import model
from .datasets import load_csv, make_synthetic, split_train_val, SYNTHETIC_KINDS
from .errors import InversionFailedError, NonFiniteLossError
from .kalman import KalmanConfig, RKalmanOptimizer
from .optim import OptimizerConfig, make_optimizer

OPTIMIZER_NAMES = ("sgd", "adaptive-baseline", "ngd", "ring", "reng", "rkalman")


@dataclass(frozen=True)
class RunConfig:
    optimizer: str = "ring"
    dataset: str = "two-moons"
    learning_rate: float = 1.0
    rho: float = 1e-4
    phi: float = 0.995
    skip_freq: int = 4
    grad_reg: float = 0.01
    beta: float = 0.98
    sigma0: float = 0.1
    batch_size: int = 100
    epochs: int = 1
    seed: int = 0
    hidden: int = 32
    samples: int = 400
    val_fraction: float = 0.25

    def __post_init__(self):
        if self.optimizer not in OPTIMIZER_NAMES:
            raise ValueError(f"optimizer must be one of {OPTIMIZER_NAMES}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def run_id(self):
        stem = self.dataset.replace("/", "_").replace(" ", "_")
        return f"{stem}-{self.optimizer}-s{self.seed}"


def save_run_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(config):
            fh.write(f"{f.name} = {getattr(config, f.name)}\n")


def load_run_config(path, overrides=None):
    """Flat key = value file; unknown keys are rejected loudly."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key] = raw
    return build_run_config(values, overrides)


def build_run_config(values, overrides=None):
    merged = dict(values)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    by_name = {f.name: f for f in fields(RunConfig)}
    for key, raw in merged.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r}")
        typ = by_name[key].type
        if typ == "int" or typ is int:
            kwargs[key] = int(raw)
        elif typ == "float" or typ is float:
            kwargs[key] = float(raw)
        else:
            kwargs[key] = str(raw)
    return RunConfig(**kwargs)


@dataclass
class MetricsRecord:
    run_id: str
    iteration: int
    epoch: int
    phase: str  # train | val
    loss: float
    grad_norm: float
    damping: float
    metric: float = None  # accuracy or pearson; val records only
    wall_ms: float = field(default=0.0, compare=False)


def format_record(rec):
    parts = [
        f"run:{rec.run_id}",
        f"iter:{rec.iteration}",
        f"epoch:{rec.epoch}",
        f"phase:{rec.phase}",
        f"loss:{rec.loss!r}",
        f"grad_norm:{rec.grad_norm!r}",
        f"damping:{rec.damping!r}",
    ]
    if rec.metric is not None:
        parts.append(f"metric:{rec.metric!r}")
    parts.append(f"wall_ms:{rec.wall_ms!r}")
    return " ".join(parts)


def parse_record(line):
    kv = dict(item.split(":", 1) for item in line.split())
    return MetricsRecord(
        run_id=kv["run"],
        iteration=int(kv["iter"]),
        epoch=int(kv["epoch"]),
        phase=kv["phase"],
        loss=float(kv["loss"]),
        grad_norm=float(kv["grad_norm"]),
        damping=float(kv["damping"]),
        metric=float(kv["metric"]) if "metric" in kv else None,
        wall_ms=float(kv["wall_ms"]),
    )


def write_metrics(records, path):
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def read_metrics(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [parse_record(ln) for ln in fh if ln.strip()]


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return 0.0
    a_c = a - a.mean()
    b_c = b - b.mean()
    with np.errstate(over="ignore"):
        denom = np.sqrt((a_c @ a_c) * (b_c @ b_c))
        if denom == 0.0 or not np.isfinite(denom):
            return 0.0
        return float(np.clip((a_c @ b_c) / denom, -1.0, 1.0))


def evaluate(net, dataset):
    """(mean loss, task metric): accuracy or pearson correlation."""
    pred, _ = model.forward(net, dataset.features)
    loss = model.loss(pred, dataset.targets)
    if dataset.task == "classification":
        metric = float(np.mean(np.argmax(pred.outputs, axis=1) == dataset.targets))
    else:
        metric = pearson(pred.outputs, dataset.targets)
    return loss, metric


def resolve_dataset(name, samples, seed):
    if name in SYNTHETIC_KINDS:
        return make_synthetic(name, samples, seed)
    return load_csv(name)


def build_network(config, dataset, rng):
    head = "categorical" if dataset.task == "classification" else "gaussian"
    dims = [dataset.n_features, config.hidden, dataset.n_outputs]
    return model.init_network(dims, head=head, rng=rng)


def _build_optimizer(net, config):
    if config.optimizer == "rkalman":
        kcfg = KalmanConfig(rho=config.rho, beta=config.beta, sigma0=config.sigma0)
        return RKalmanOptimizer(net, kcfg)
    ocfg = OptimizerConfig(
        algorithm=config.optimizer,
        learning_rate=config.learning_rate,
        rho=config.rho,
        lm_discount=config.phi,
        skip_frequency=config.skip_freq,
        grad_reg_coeff=config.grad_reg,
        seed=config.seed,
    )
    return make_optimizer(net, ocfg)


@dataclass
class TrainResult:
    net: object
    records: list
    final_loss: float
    final_metric: float
    diverged: bool
    total_ms: float

    @property
    def summary(self):
        state = "diverged" if self.diverged else "ok"
        return (
            f"{state} loss={self.final_loss:.6g} metric={self.final_metric:.4f} "
            f"time_ms={self.total_ms:.1f}"
        )


def train(config, dataset=None):
    """Run epochs x batches of the configured optimizer.

    Emits one train record per step and one validation record per epoch.
    A non-finite loss stops the run; everything recorded so far survives
    in the result, flagged diverged.
    """
    t_start = time.perf_counter()
    if dataset is None:
        dataset = resolve_dataset(config.dataset, config.samples, config.seed)
    rng = np.random.default_rng(config.seed)
    train_set, val_set = split_train_val(dataset, rng)
    net = build_network(config, dataset, rng)
    batch_size = 1 if config.optimizer == "rkalman" else config.batch_size
    opt = _build_optimizer(net, config)

    records = []
    diverged = False
    iteration = 0
    run_id = config.run_id
    for epoch in range(config.epochs):
        perm = rng.permutation(train_set.n_samples)
        for start in range(0, train_set.n_samples, batch_size):
            idx = perm[start: start + batch_size]
            x, y = train_set.features[idx], train_set.targets[idx]
            try:
                report = opt.step(x, y)
            except (NonFiniteLossError, InversionFailedError):
                # InversionFailedError here means curvature degenerated
                # (typically saturated predictions); same abort policy
                diverged = True
                break
            records.append(
                MetricsRecord(
                    run_id, iteration, epoch, "train",
                    report.loss, report.grad_norm, report.damping,
                    wall_ms=report.duration_ms,
                )
            )
            iteration += 1
        if diverged:
            break
        val_loss, val_metric = evaluate(net, val_set)
        records.append(
            MetricsRecord(
                run_id, iteration, epoch, "val", val_loss, 0.0,
                records[-1].damping if records else 0.0, metric=val_metric,
            )
        )
    if records and not diverged:
        final_loss = records[-1].loss
        final_metric = records[-1].metric if records[-1].metric is not None else 0.0
    elif records:
        final_loss, final_metric = records[-1].loss, 0.0
    else:
        final_loss, final_metric = float("nan"), 0.0
    return TrainResult(
        net, records, final_loss, final_metric, diverged,
        (time.perf_counter() - t_start) * 1e3,
    )
