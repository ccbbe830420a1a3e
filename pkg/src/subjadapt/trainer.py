"""Joint training, evaluation and multi-run aggregation.

Three training modes share one loop:

* ``ours``: cross-entropy over the whole batch plus ``lambda`` times the mean
  pairwise subject MMD of the chosen features.
* ``vanilla``: the same batches with the discrepancy term dropped.
* ``kshot_only``: cross-entropy on the target's k-shot rows alone.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import alignment
from . import diffcore as dc
from .dataio import BatchSpec, EpisodeSplit, build_episode, compose_batch, crop_all, stack
from .errors import ContractError, DimensionError, DivergenceError, NumericError, ValidationError
from .model import ModelDims, ModelParams, forward_batch, init_params, predict_logits

MODES = ("kshot_only", "vanilla", "ours")
LOCATIONS = ("after_f", "after_g")
SUMMARY_COLUMNS = ("mode", "k", "target", "split", "top1_mean", "top1_std", "top3_mean", "top3_std")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lam: float = 1.0
    epochs: int = 200
    mmd_location: str = "after_f"
    mode: str = "ours"
    per_source_count: int = 200
    seed: int = 0
    deterministic: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    d_seq: int | None = None  # None: same as the number of input channels
    d_emb: int | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mmd_location not in LOCATIONS:
            raise ValidationError(f"mmd_location must be one of {LOCATIONS}, got {self.mmd_location!r}")
        if self.per_source_count < 1:
            raise ValidationError("per_source_count must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# -- loss ---------------------------------------------------------------------

def feature_bank(fwd, config: TrainConfig) -> alignment.KernelBank:
    """Bandwidth ladder from the pooled batch features, held constant."""
    feats = fwd.z_features if config.mmd_location == "after_f" else fwd.w_features
    return alignment.pooled_bank(feats.value)


def total_loss(tape: dc.Tape, fwd, config: TrainConfig, bank: alignment.KernelBank | None = None,
               target_subject: int | None = None):
    """Return ``(L_total, L_cls, L_disc)`` nodes for one batch."""
    if config.mode == "kshot_only" and target_subject is not None:
        rows = np.flatnonzero(fwd.subjects == target_subject)
        if rows.size == 0:
            raise ContractError(f"batch has no rows from target subject {target_subject}")
        logits = dc.take_rows(tape, fwd.logits, rows)
        labels = fwd.labels[rows]
    else:
        logits, labels = fwd.logits, fwd.labels
    l_cls = dc.softmax_cross_entropy(tape, logits, labels)

    if config.mode != "ours":
        return l_cls, l_cls, tape.leaf(0.0)

    if len(np.unique(fwd.subjects)) < 2:
        raise ContractError("mode 'ours' needs at least two subjects in the batch")
    feats = fwd.z_features if config.mmd_location == "after_f" else fwd.w_features
    if bank is None:
        bank = alignment.pooled_bank(feats.value)
    groups = alignment.group_rows(tape, feats, fwd.subjects)
    l_disc = alignment.discrepancy_loss(tape, groups, bank)
    l_total = dc.add(tape, l_cls, dc.scale(tape, l_disc, config.lam))
    return l_total, l_cls, l_disc


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Parameters without a gradient entry are
    left untouched."""
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m_prev = m.get(name, np.zeros_like(p))
        v_prev = v.get(name, np.zeros_like(p))
        m[name] = b1 * m_prev + (1 - b1) * g
        v[name] = b2 * v_prev + (1 - b2) * (g * g)
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        new_params[name] = p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return new_params, AdamState(m, v, t)


# -- evaluation ---------------------------------------------------------------

def topk_accuracy(logits, labels, ks=(1, 3)) -> dict[int, float]:
    """Percentage of rows whose label ranks within the top k.

    A label's rank counts the classes with a strictly larger logit plus the
    lower-indexed classes tying with it.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    if logits.ndim != 2 or len(logits) == 0:
        raise ContractError("top-k accuracy needs a non-empty set of records")
    true = logits[np.arange(len(labels)), labels][:, None]
    cls = np.arange(logits.shape[1])[None, :]
    rank = ((logits > true) | ((logits == true) & (cls < labels[:, None]))).sum(axis=1)
    return {k: 100.0 * int(np.count_nonzero(rank < k)) / len(labels) for k in ks}


def evaluate(params: ModelParams, records, ks=(1, 3)) -> dict[int, float]:
    if len(records) == 0:
        raise ContractError("cannot evaluate on an empty record set")
    X, _, labels = stack(records)
    return topk_accuracy(predict_logits(params, X), labels, ks)


# -- fitting ------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    l_cls: float
    l_disc: float
    val_top1: float


def _dims_for(split: EpisodeSplit, config: TrainConfig, n_classes: int) -> ModelDims:
    d_in, t_len = split.target_train[0].signal.shape
    return ModelDims(d_in, t_len, config.d_seq or d_in, config.d_emb or d_in, n_classes)


def fit(split: EpisodeSplit, config: TrainConfig, n_classes: int | None = None):
    """Train on one episode; return the best-validation parameters and history."""
    if not split.target_train:
        raise ContractError("episode has no target training records")
    if n_classes is None:
        every = split.target_train + split.target_val + split.target_test
        every += [r for pool in split.source.values() for r in pool]
        n_classes = max(r.label for r in every) + 1
    dims = _dims_for(split, config, n_classes)
    init_seed, batch_seed = np.random.SeedSequence(config.seed).generate_state(2)
    params = init_params(dims, int(init_seed))
    batch_rng = np.random.default_rng(int(batch_seed))
    spec = BatchSpec(per_source_count=config.per_source_count, seed=config.seed)
    use_sources = config.mode != "kshot_only" and bool(split.source)
    if config.mode == "ours" and not split.source:
        raise ContractError("mode 'ours' needs at least one source subject")
    if use_sources:
        largest = max(len(pool) for pool in split.source.values())
        steps = math.ceil(largest / config.per_source_count)
    else:
        steps = 1
        target_batch = stack(split.target_train)

    named = params.named()
    state = AdamState()
    history: list[EpochStats] = []
    best = (-1.0, params.copy())
    for epoch in range(1, config.epochs + 1):
        cls_sum = disc_sum = 0.0
        for step in range(1, steps + 1):
            X, subjects, labels = stack(compose_batch(split, spec, batch_rng)) if use_sources \
                else target_batch
            tape = dc.Tape()
            bound = {name: tape.leaf(arr) for name, arr in named.items()}
            try:
                fwd = forward_batch(tape, bound, X, subjects, labels, dims)
                l_total, l_cls, l_disc = total_loss(tape, fwd, config,
                                                    target_subject=split.target_subject)
            except NumericError:
                raise DivergenceError(epoch, step, float("nan")) from None
            if not np.isfinite(l_total.value):
                raise DivergenceError(epoch, step, float(l_total.value))
            grads = tape.backward(l_total)
            named, state = adam_step(named, {n: grads[node.id] for n, node in bound.items()},
                                     state, config)
            cls_sum += l_cls.item()
            disc_sum += l_disc.item()
        params = ModelParams.from_named(named, dims)
        val_top1 = evaluate(params, split.target_val, ks=(1,))[1] if split.target_val else float("nan")
        history.append(EpochStats(epoch, cls_sum / steps, disc_sum / steps, val_top1))
        if not split.target_val or val_top1 > best[0]:
            best = (val_top1, params)
    return best[1], history


# -- experiments --------------------------------------------------------------

@dataclass(frozen=True)
class Protocol:
    target_subject: int = 0
    k: int = 1
    modes: tuple[str, ...] = MODES
    n_runs: int = 5
    base_seed: int = 0
    val_fraction: float = 1 / 6
    test_fraction: float = 1 / 6
    crop_ms: tuple[float, float] | None = (320, 480)
    sampling_rate_hz: int = 1000

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValidationError("n_runs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        d["crop_ms"] = list(self.crop_ms) if self.crop_ms else None
        return d


@dataclass
class MetricsReport:
    runs: list[dict]
    config: dict

    def summary_rows(self, splits=("val", "test")) -> list[dict]:
        groups: dict[tuple, list[dict]] = {}
        for run in self.runs:
            groups.setdefault((run["mode"], run["k"], run["target"]), []).append(run)
        rows = []
        for (mode, k, target), runs in groups.items():
            for split in splits:
                top1 = np.array([r[f"{split}_top1"] for r in runs])
                top3 = np.array([r[f"{split}_top3"] for r in runs])
                rows.append({
                    "mode": mode, "k": k, "target": target, "split": split,
                    "top1_mean": float(top1.mean()), "top1_std": float(top1.std()),
                    "top3_mean": float(top3.mean()), "top3_std": float(top3.std()),
                    "n_runs": len(runs),
                })
        return rows

    def to_csv(self, splits=("val", "test")) -> str:
        return summary_csv(self.summary_rows(splits))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.runs)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([row["mode"], row["k"], row["target"], row["split"]]
                        + [f"{row[c]:.4f}" for c in SUMMARY_COLUMNS[4:]])
    return buf.getvalue()


def best_epoch(history) -> int:
    """Epoch picked by :func:`fit`: first maximum of validation top-1."""
    vals = [h.val_top1 for h in history]
    if any(math.isnan(v) for v in vals):
        return history[-1].epoch
    return history[int(np.argmax(vals))].epoch


def run_record(label: str, split: EpisodeSplit, config: TrainConfig, params, history,
               run_index: int, n_classes: int) -> dict:
    val = evaluate(params, split.target_val) if split.target_val else {1: float("nan"), 3: float("nan")}
    test = evaluate(params, split.target_test) if split.target_test else {1: float("nan"), 3: float("nan")}
    return {
        "mode": label, "k": split.k, "target": split.target_subject,
        "run": run_index, "seed": split.seed,
        "val_top1": val[1], "val_top3": val[3], "test_top1": test[1], "test_top3": test[3],
        "best_epoch": best_epoch(history),
        "selection": "best target-validation top-1, ties to earlier epoch",
        "first_l_disc": history[0].l_disc, "final_l_disc": history[-1].l_disc,
        "history": [[h.epoch, h.l_cls, h.l_disc, h.val_top1] for h in history],
        "config": config.to_dict(), "n_classes": n_classes,
    }


def prepare_records(records, protocol: Protocol):
    if protocol.crop_ms is None:
        return list(records)
    start, end = protocol.crop_ms
    return crop_all(records, start, end, protocol.sampling_rate_hz)


def run_experiment(records, protocol: Protocol, config: TrainConfig,
                   variants=None, n_classes: int | None = None, progress=None) -> MetricsReport:
    """Fit every variant on ``n_runs`` seeded episodes and collect metrics.

    ``variants`` is a list of ``(label, TrainConfig)``; by default one entry per
    mode in ``protocol.modes``. Run ``r`` uses episode and model seed
    ``base_seed + r``.
    """
    records = prepare_records(records, protocol)
    if n_classes is None:
        n_classes = max(r.label for r in records) + 1
    if variants is None:
        variants = [(m, replace(config, mode=m)) for m in protocol.modes]
    runs = []
    for r in range(protocol.n_runs):
        seed = protocol.base_seed + r
        split = build_episode(records, protocol.target_subject, protocol.k, seed,
                              protocol.val_fraction, protocol.test_fraction, n_classes)
        for label, cfg in variants:
            cfg = replace(cfg, seed=seed)
            params, history = fit(split, cfg, n_classes)
            runs.append(run_record(label, split, cfg, params, history, r, n_classes))
            if progress is not None:
                progress(runs[-1])
    return MetricsReport(runs, {"protocol": protocol.to_dict(), "train": config.to_dict()})
