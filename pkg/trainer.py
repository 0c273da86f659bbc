"""Mean Teacher training loop with supervised contrastive loss."""
import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from augment import AugmentPolicy, augment
from dataset import Dataset, encode_batch
from errors import ConfigInvalid, EmptyLabeledSet, UnlabeledInput
from layers import DTYPE
from losses import (
    LossBreakdown,
    LossConfig,
    LossParts,
    consistency_loss,
    softmax_cross_entropy,
    supcon_loss,
    total_loss,
)
from metrics import MetricsReport, compute_metrics, confusion
from model import (
    Checkpoint,
    ModelConfig,
    OutputGrads,
    ParamSet,
    backward,
    ema_update,
    forward,
    init_params,
    save_checkpoint,
    sgd_step,
    update_running_stats,
)
from utils import derive_seed, progress_disabled

logger = logging.getLogger(__name__)

# independent random streams derived from the run seed
STREAM_INIT, STREAM_LABELED, STREAM_UNLABELED, STREAM_AUGMENT = range(4)
STUDENT_PATH, TEACHER_PATH = 0, 1


HISTORY_COLUMNS = [
    "epoch", "classification", "consistency", "supcontrast", "total",
    "val_accuracy", "val_macro_precision", "val_macro_recall", "val_macro_f1",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_labeled: int = 32
    batch_unlabeled: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    ema_alpha: float = 0.99
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    eval_every: int = 1
    consistency_on_labeled: bool = True
    augment_teacher: bool = True
    prefetch: bool = True

    def validate(self):
        if self.epochs < 0:
            raise ConfigInvalid(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_labeled < 1 or self.batch_unlabeled < 1:
            raise ConfigInvalid("batch sizes must be >= 1")
        if not self.lr > 0:
            raise ConfigInvalid(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigInvalid(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigInvalid(f"ema_alpha must be in [0, 1], got {self.ema_alpha}")
        if self.eval_every < 1:
            raise ConfigInvalid(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    validation: Optional[MetricsReport]
    seconds: float


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def rows(self) -> List[dict]:
        rows = []
        for record in self.epochs:
            row = {
                "epoch": record.epoch,
                "classification": record.losses.classification,
                "consistency": record.losses.consistency,
                "supcontrast": record.losses.supcontrast,
                "total": record.losses.total,
            }
            o = record.validation.overall if record.validation else None
            row["val_accuracy"] = o.accuracy if o else None
            row["val_macro_precision"] = o.macro_precision if o else None
            row["val_macro_recall"] = o.macro_recall if o else None
            row["val_macro_f1"] = o.macro_f1 if o else None
            rows.append(row)
        return rows


@dataclass
class TrainState:
    student: ParamSet
    teacher: ParamSet
    velocity: Optional[Dict[str, torch.Tensor]]
    step: int = 0


@dataclass
class StepPlan:
    epoch: int
    step: int
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray


@dataclass
class Batch:
    x_student: torch.Tensor
    x_teacher: torch.Tensor
    labels: List[int]

    @property
    def n_labeled(self) -> int:
        return len(self.labels)


class _IndexStream:
    """Endless stream of indices into range(n), reshuffled every full pass."""

    def __init__(self, n: int, seed: int):
        self.n = n
        self.seed = seed
        self.cycle = 0
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def take(self, count: int) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        out = []
        while count > 0:
            if self.pos >= self.order.size:
                rng = np.random.default_rng(derive_seed(self.seed, STREAM_UNLABELED, self.cycle))
                self.order = rng.permutation(self.n)
                self.cycle += 1
                self.pos = 0
            chunk = self.order[self.pos:self.pos + count]
            out.append(chunk)
            self.pos += chunk.size
            count -= chunk.size
        return np.concatenate(out)


def _check_labeled(dataset: Dataset, what: str):
    if not dataset.is_fully_labeled():
        raise UnlabeledInput(f"{what} must be fully labeled")


def assemble_batch(plan: StepPlan, labeled: Dataset, unlabeled: Dataset,
                   model_config: ModelConfig, train_config: TrainConfig) -> Batch:
    """Augment every record independently for the two networks and encode them."""
    records = [labeled[i] for i in plan.labeled_idx] + [unlabeled[i] for i in plan.unlabeled_idx]
    policy = train_config.augment
    student_view, teacher_view = [], []
    for slot, wafer in enumerate(records):
        student_view.append(augment(wafer, policy, derive_seed(
            train_config.seed, STREAM_AUGMENT, plan.step, slot, STUDENT_PATH)))
        if train_config.augment_teacher:
            teacher_view.append(augment(wafer, policy, derive_seed(
                train_config.seed, STREAM_AUGMENT, plan.step, slot, TEACHER_PATH)))
        else:
            teacher_view.append(wafer)
    height, width = model_config.input_height, model_config.input_width
    return Batch(
        x_student=torch.from_numpy(encode_batch(student_view, height, width)),
        x_teacher=torch.from_numpy(encode_batch(teacher_view, height, width)),
        labels=[int(labeled[i].label) for i in plan.labeled_idx],
    )


def train_step(state: TrainState, batch: Batch, train_config: TrainConfig) -> Tuple[TrainState, LossBreakdown]:
    """
    One optimisation step: composite loss on the student, SGD on the student
    only, then the EMA update of the teacher. Inputs are never mutated.
    """
    loss_config = train_config.loss
    n_labeled = batch.n_labeled
    student_out, student_cache = forward(state.student, batch.x_student, train_mode=True)
    teacher_out, _ = forward(state.teacher, batch.x_teacher, train_mode=True)
    batch_size = student_out.logits.shape[0]

    cls_value, cls_grad = softmax_cross_entropy(student_out.logits[:n_labeled], batch.labels)
    if n_labeled >= 2:
        sup_value, sup_grad = supcon_loss(student_out.projections[:n_labeled], batch.labels, loss_config)
    else:
        sup_value, sup_grad = 0.0, torch.zeros_like(student_out.projections[:n_labeled])
    rows = slice(0, batch_size) if train_config.consistency_on_labeled else slice(n_labeled, batch_size)
    cons_value, cons_grad = consistency_loss(student_out.logits[rows], teacher_out.logits[rows])

    breakdown = total_loss(LossParts(cls_value, cons_value, sup_value), loss_config, state.step)

    d_logits = torch.zeros_like(student_out.logits)
    d_logits[:n_labeled] += loss_config.classification_weight * cls_grad
    d_logits[rows] += breakdown.consistency_weight * cons_grad
    d_proj = torch.zeros_like(student_out.projections)
    d_proj[:n_labeled] = loss_config.supcon_weight * sup_grad

    grads = backward(state.student, student_cache, OutputGrads(projections=d_proj, logits=d_logits))
    student, velocity = sgd_step(state.student, grads, train_config.lr, train_config.momentum, state.velocity)
    student = update_running_stats(student, student_cache)
    teacher = ema_update(state.teacher, student, train_config.ema_alpha)
    return TrainState(student, teacher, velocity, state.step + 1), breakdown


def _plan_epoch(epoch: int, first_step: int, n_labeled: int, stream: _IndexStream,
                train_config: TrainConfig) -> List[StepPlan]:
    rng = np.random.default_rng(derive_seed(train_config.seed, STREAM_LABELED, epoch))
    order = rng.permutation(n_labeled)
    steps = math.ceil(n_labeled / train_config.batch_labeled)
    plans = []
    for s in range(steps):
        idx = order[s * train_config.batch_labeled:(s + 1) * train_config.batch_labeled]
        plans.append(StepPlan(epoch, first_step + s, idx, stream.take(train_config.batch_unlabeled)))
    return plans


def _mean_breakdown(items: List[LossBreakdown]) -> LossBreakdown:
    return LossBreakdown(
        classification=float(np.mean([b.classification for b in items])),
        consistency=float(np.mean([b.consistency for b in items])),
        supcontrast=float(np.mean([b.supcontrast for b in items])),
        total=float(np.mean([b.total for b in items])),
        consistency_weight=items[-1].consistency_weight,
    )


def train(labeled: Dataset, unlabeled: Dataset, val: Dataset, model_config: ModelConfig,
          train_config: TrainConfig, out_dir=None,
          step_callback: Optional[Callable[[TrainState, TrainState, LossBreakdown], None]] = None,
          ) -> Tuple[ParamSet, ParamSet, TrainHistory]:
    """
    Train student and teacher networks.

    The teacher starts as a copy of the student and only ever changes
    through ema_update. Validation runs the teacher in eval mode every
    eval_every epochs and after the last epoch; checkpoints are written to
    out_dir at the same points when out_dir is given.

    Returns:
        (student params, teacher params, history)
    """
    train_config.validate()
    if len(labeled) == 0:
        raise EmptyLabeledSet("labeled training set is empty")
    _check_labeled(labeled, "labeled training set")
    _check_labeled(val, "validation set")

    student = init_params(model_config, derive_seed(train_config.seed, STREAM_INIT))
    state = TrainState(student, student.copy(), None, 0)
    history = TrainHistory()
    stream = _IndexStream(len(unlabeled), train_config.seed)
    out_dir = Path(out_dir) if out_dir is not None else None

    logger.info(f"Training on {len(labeled)} labeled / {len(unlabeled)} unlabeled records "
                f"for {train_config.epochs} epochs")
    executor = ThreadPoolExecutor(max_workers=1) if train_config.prefetch else None
    try:
        for epoch in tqdm(range(1, train_config.epochs + 1), desc="epochs", disable=progress_disabled()):
            started = time.perf_counter()
            plans = _plan_epoch(epoch, state.step, len(labeled), stream, train_config)
            breakdowns = []
            for batch in _batches(plans, labeled, unlabeled, model_config, train_config, executor):
                previous = state
                state, breakdown = train_step(state, batch, train_config)
                breakdowns.append(breakdown)
                if step_callback is not None:
                    step_callback(previous, state, breakdown)

            final = epoch == train_config.epochs
            validation = None
            if (epoch % train_config.eval_every == 0 or final) and len(val):
                validation = evaluate_checkpoint(state.teacher, val, model_config)
            record = EpochRecord(epoch, _mean_breakdown(breakdowns), validation,
                                 time.perf_counter() - started)
            history.epochs.append(record)
            _log_epoch(record)

            if out_dir is not None and (epoch % train_config.eval_every == 0 or final):
                _write_checkpoints(out_dir, state, epoch, model_config, labeled)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    return state.student, state.teacher, history


def _batches(plans, labeled, unlabeled, model_config, train_config, executor):
    """Yield assembled batches in plan order, preparing the next one in the background."""
    if executor is None:
        for plan in plans:
            yield assemble_batch(plan, labeled, unlabeled, model_config, train_config)
        return
    pending = None
    for plan in plans:
        future = executor.submit(assemble_batch, plan, labeled, unlabeled, model_config, train_config)
        if pending is not None:
            yield pending.result()
        pending = future
    if pending is not None:
        yield pending.result()


def _log_epoch(record: EpochRecord):
    losses = record.losses
    message = (f"Epoch {record.epoch}: cls={losses.classification:.4f} "
               f"cons={losses.consistency:.4f} supcon={losses.supcontrast:.4f} "
               f"total={losses.total:.4f}")
    if record.validation is not None:
        message += f" val_macro_f1={record.validation.overall.macro_f1:.4f}"
    logger.info(f"{message} ({record.seconds:.1f}s)")


def _write_checkpoints(out_dir: Path, state: TrainState, epoch: int,
                       model_config: ModelConfig, labeled: Dataset):
    checkpoint = Checkpoint(model_config, state.student, state.teacher, state.velocity or {},
                            state.step, epoch, (labeled.height, labeled.width))
    save_checkpoint(checkpoint, out_dir / f"checkpoint_epoch{epoch:04d}.pt")
    save_checkpoint(checkpoint, out_dir / "checkpoint_last.pt")


def predict(params: ParamSet, dataset: Dataset, model_config: ModelConfig) -> np.ndarray:
    """
    Eval-mode argmax predictions.

    Each record runs through the network on its own, so its prediction is
    bitwise independent of the other records and their order.
    """
    preds = np.zeros(len(dataset), dtype=np.int64)
    for i, rec in enumerate(dataset.records):
        x = torch.from_numpy(encode_batch([rec], model_config.input_height, model_config.input_width))
        out, _ = forward(params, x.to(DTYPE), train_mode=False)
        preds[i] = int(torch.argmax(out.logits, dim=1)[0])
    return preds


def evaluate_checkpoint(params: ParamSet, dataset: Dataset, model_config: ModelConfig) -> MetricsReport:
    _check_labeled(dataset, "evaluation set")
    if params.config is None:
        params = replace(params, config=model_config)
    preds = predict(params, dataset, model_config)
    truths = [int(label) for label in dataset.labels]
    return compute_metrics(confusion(preds, truths))


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_history(history: TrainHistory, path) -> None:
    """One CSV row per epoch with the loss terms and validation macro metrics."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history.rows():
            writer.writerow([_csv_value(row[c]) for c in HISTORY_COLUMNS])


def read_history(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = []
        for row in csv.DictReader(f):
            rows.append({k: (int(v) if k == "epoch" else float(v) if v else None) for k, v in row.items()})
        return rows
