"""Two-stage training: inherited k-fold cross-validation, then whole-pool fine-tuning.

Stage 1 walks the folds in order. Fold ``i`` trains on every other fold,
starting from whatever fold ``i-1`` left behind (weights and Adam moments),
and is then scored on its held-out part. Stage 2 keeps the optimizer state and
trains on the whole pool at a smaller learning rate.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import data as data_mod
from .data import Dataset, Metal
from .model import ModelConfig, ModelParams, combined_loss, init_params, load_checkpoint, loss_and_grad
from .numcore import ContractError, Rng, derive_seed, loss_db_floored
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

MAX_EPOCHS = 1100
DEFAULT_STAGE1_LR = 5e-4
AG_TRANSFER_LR = 3e-4
STAGE_KFOLD = 1
STAGE_FINETUNE = 2


@dataclass
class TrainConfig:
    k: int = 10
    epochs_per_fold: int = 100
    stage1_lr: float | None = None  # None: 5e-4, or 3e-4 when transferring onto Ag
    finetune_lr: float = 1e-4
    finetune_epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    init: str | None = None  # checkpoint path for transfer; None = fresh
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.k < 2:
            raise ContractError("k must be at least 2")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")
        if self.epochs_per_fold < 0 or self.finetune_epochs < 0:
            raise ContractError("epoch counts must be non-negative")
        if self.stage1_lr is not None and self.stage1_lr < 0:
            raise ContractError("learning rates must be non-negative")
        if self.finetune_lr < 0:
            raise ContractError("learning rates must be non-negative")

    @property
    def epochs_total(self) -> int:
        return self.k * self.epochs_per_fold + self.finetune_epochs

    @property
    def within_budget(self) -> bool:
        return self.epochs_total <= MAX_EPOCHS

    def resolved_stage1_lr(self, metal: Metal, transferring: bool) -> float:
        if self.stage1_lr is not None:
            return self.stage1_lr
        if transferring and metal is Metal.AG:
            return AG_TRANSFER_LR
        return DEFAULT_STAGE1_LR

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["model"] = asdict(self.model)
        return d


@dataclass
class RunReport:
    metal: str
    init: str
    stage1_lr: float
    finetune_lr: float
    per_fold_val_db: list[float]
    initial_train_db: float
    stage1_final_train_db: float
    finetune_train_db: float
    test_db: float
    epochs_run: int
    wall_time: float
    config: dict[str, Any]
    dataset_fingerprint: str
    fold_sizes: list[int]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class Observer:
    """Hooks for instrumentation; the default does nothing."""

    def on_fold_start(self, fold: int, params: ModelParams) -> None:
        pass

    def on_fold_end(self, fold: int, params: ModelParams) -> None:
        pass

    def on_fold_scored(self, fold: int, val_db: float) -> None:
        pass

    def on_batch(self, stage: int, fold: int, epoch: int, ids: np.ndarray) -> None:
        pass

    def on_epoch(self, stage: int, fold: int, epoch: int) -> None:
        pass


def fold_sizes(n: int, k: int) -> list[int]:
    """Contiguous fold sizes; the remainder goes to the earliest folds."""
    if k < 1 or k > n:
        raise ContractError(f"cannot cut {n} samples into {k} folds")
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def fold_slices(n: int, k: int) -> list[slice]:
    out, start = [], 0
    for size in fold_sizes(n, k):
        out.append(slice(start, start + size))
        start += size
    return out


def _run_epochs(
    params: ModelParams,
    state: AdamState,
    x: np.ndarray,
    re: np.ndarray,
    im: np.ndarray,
    ids: np.ndarray,
    rows: np.ndarray,
    *,
    lr: float,
    epochs: int,
    batch_size: int,
    seed: int,
    stage: int,
    fold: int,
    observer: Observer,
) -> None:
    for epoch in range(epochs):
        order = rows[Rng(derive_seed(seed, stage, fold, epoch)).permutation(rows.size)]
        for start in range(0, order.size, batch_size):
            b = order[start : start + batch_size]
            observer.on_batch(stage, fold, epoch, ids[b])
            _, grads = loss_and_grad(params, x[b], re[b], im[b])
            adam_step(params, grads, state, lr)
        observer.on_epoch(stage, fold, epoch)


def evaluate_linear(params: ModelParams, samples: Dataset, chunk: int = 2048) -> float:
    """Mean combined SmoothL1 over ``samples`` in one fixed-order pass."""
    n = len(samples)
    if n == 0:
        raise ContractError("cannot evaluate on an empty sample set")
    x = params.normalize(samples.geoms)
    total = 0.0
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        total += combined_loss(params, x[sl], samples.re[sl], samples.im[sl]) * x[sl].shape[0]
    return total / n


def evaluate(params: ModelParams, samples: Dataset) -> float:
    """Loss on ``samples`` in dB; a zero loss is floored at -300 dB."""
    return loss_db_floored(evaluate_linear(params, samples))


def kfold_train(
    pool: Dataset,
    config: TrainConfig,
    params: ModelParams,
    state: AdamState | None = None,
    *,
    lr: float | None = None,
    observer: Observer | None = None,
) -> tuple[ModelParams, list[float], AdamState]:
    """Inherited k-fold stage. Updates ``params`` in place and returns per-fold validation dB."""
    if config.k > len(pool):
        raise ContractError(f"k={config.k} exceeds pool size {len(pool)}")
    observer = observer or Observer()
    state = state or AdamState.zeros_like(params)
    lr = config.resolved_stage1_lr(pool.metal, False) if lr is None else lr
    x = params.normalize(pool.geoms)
    all_rows = np.arange(len(pool))
    val_db = []
    for i, sl in enumerate(fold_slices(len(pool), config.k)):
        observer.on_fold_start(i, params)
        train_rows = np.concatenate([all_rows[: sl.start], all_rows[sl.stop :]])
        _run_epochs(
            params, state, x, pool.re, pool.im, pool.ids, train_rows,
            lr=lr, epochs=config.epochs_per_fold, batch_size=config.batch_size,
            seed=config.seed, stage=STAGE_KFOLD, fold=i, observer=observer,
        )
        observer.on_fold_end(i, params)
        val_db.append(evaluate(params, pool.subset(all_rows[sl])))
        observer.on_fold_scored(i, val_db[-1])
        log.info("fold %d/%d validation %.2f dB", i + 1, config.k, val_db[-1])
    return params, val_db, state


def finetune(
    pool: Dataset,
    params: ModelParams,
    lr: float,
    epochs: int,
    state: AdamState | None = None,
    *,
    batch_size: int = 128,
    seed: int = 0,
    observer: Observer | None = None,
) -> tuple[ModelParams, AdamState]:
    """Train on the whole pool at a constant learning rate."""
    state = state or AdamState.zeros_like(params)
    _run_epochs(
        params, state, params.normalize(pool.geoms), pool.re, pool.im, pool.ids, np.arange(len(pool)),
        lr=lr, epochs=epochs, batch_size=batch_size, seed=seed,
        stage=STAGE_FINETUNE, fold=0, observer=observer or Observer(),
    )
    return params, state


def load_source(path, config: TrainConfig) -> ModelParams:
    params, _, _ = load_checkpoint(path, expected_config=config.model)
    return params


def train(
    dataset: Dataset,
    config: TrainConfig,
    *,
    source: ModelParams | None = None,
    observer: Observer | None = None,
) -> tuple[ModelParams, AdamState, RunReport]:
    """Full recipe: split, normalize, k-fold stage, fine-tune, test evaluation.

    ``source`` (or ``config.init``) switches on transfer: weights start from the
    source model, Adam moments start from zero, and normalization statistics are
    refitted on the new pool.
    """
    t0 = time.perf_counter()
    if source is None and config.init is not None:
        source = load_source(config.init, config)
    transferring = source is not None
    pool, test = data_mod.split(dataset, config.seed)
    stats = data_mod.fit_normalizer(pool.geoms)
    if transferring:
        if source.config != config.model:
            raise ContractError("source model shape differs from the configured model")
        params = source.copy()
    else:
        params = init_params(config.model, config.seed)
    params.norm_stats = stats
    state = AdamState.zeros_like(params)
    lr1 = config.resolved_stage1_lr(dataset.metal, transferring)

    initial_db = evaluate(params, pool)
    params, val_db, state = kfold_train(pool, config, params, state, lr=lr1, observer=observer)
    stage1_db = evaluate(params, pool)
    params, state = finetune(
        pool, params, config.finetune_lr, config.finetune_epochs, state,
        batch_size=config.batch_size, seed=config.seed, observer=observer,
    )
    ft_db = evaluate(params, pool)
    test_db = evaluate(params, test)
    report = RunReport(
        metal=dataset.metal.value,
        init="from_checkpoint" if transferring else "fresh",
        stage1_lr=lr1,
        finetune_lr=config.finetune_lr,
        per_fold_val_db=val_db,
        initial_train_db=initial_db,
        stage1_final_train_db=stage1_db,
        finetune_train_db=ft_db,
        test_db=test_db,
        epochs_run=config.epochs_total,
        wall_time=time.perf_counter() - t0,
        config=config.to_dict(),
        dataset_fingerprint=dataset.fingerprint(),
        fold_sizes=fold_sizes(len(pool), config.k),
    )
    return params, state, report


def transfer(source_checkpoint, target: Dataset, config: TrainConfig, *, observer: Observer | None = None):
    """Train on ``target`` starting from the weights stored in ``source_checkpoint``."""
    source = load_source(source_checkpoint, config)
    params, _, report = train(target, config, source=source, observer=observer)
    return params, report
