"""Accuracy-matrix algebra: plasticity, forgetting, their bound, and the
entropy / nearest-class-mean diagnostics.

The matrix holds a[task j][stage i] = accuracy on the test set of task j
after training through task i, defined exactly for j <= i (both 0-based
internally, 1-based in the CSV rendering). All values are fractions in
[0, 1]; percent formatting happens only at report boundaries.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .augment import ChainSpec, build_chain
from .errors import MetricDomainError
from .nn import rng_from

_ENTROPY_STREAM = 301


class AccuracyMatrix:
    """Staircase table of per-task accuracies over training stages."""

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError(f"n_tasks must be >= 1, got {n_tasks}")
        self.n_tasks = n_tasks
        self._values = np.full((n_tasks, n_tasks), np.nan)

    def set(self, task: int, stage: int, value: float) -> None:
        self._check_cell(task, stage)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy must be a fraction in [0, 1], got {value}")
        self._values[task, stage] = value

    def get(self, task: int, stage: int) -> float:
        self._check_cell(task, stage)
        v = self._values[task, stage]
        if np.isnan(v):
            raise ValueError(f"cell (task={task}, stage={stage}) has not been filled")
        return float(v)

    def _check_cell(self, task: int, stage: int) -> None:
        if not (0 <= task < self.n_tasks and 0 <= stage < self.n_tasks):
            raise IndexError(f"cell (task={task}, stage={stage}) outside {self.n_tasks} tasks")
        if task > stage:
            raise IndexError(f"cell (task={task}, stage={stage}) undefined: task must be <= stage")

    def is_complete(self) -> bool:
        j, i = np.triu_indices(self.n_tasks)
        return not np.isnan(self._values[j, i]).any()

    def scale(self, c: float) -> "AccuracyMatrix":
        out = AccuracyMatrix(self.n_tasks)
        out._values = self._values * c
        return out

    @classmethod
    def from_stage_rows(cls, rows) -> "AccuracyMatrix":
        """Build from staircase rows: rows[i] lists accuracies of tasks
        0..i after training stage i."""
        m = cls(len(rows))
        for stage, row in enumerate(rows):
            if len(row) != stage + 1:
                raise ValueError(f"stage {stage} row must have {stage + 1} entries, got {len(row)}")
            for task, value in enumerate(row):
                m.set(task, stage, value)
        return m

    def to_csv(self, path=None) -> str:
        """CSV schema: header ``task,i1..iT``; row j holds a_j^i for i >= j
        (6 fractional digits) and empty cells elsewhere."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["task"] + [f"i{i + 1}" for i in range(self.n_tasks)])
        for task in range(self.n_tasks):
            row: list[str] = [str(task + 1)]
            for stage in range(self.n_tasks):
                row.append(f"{self._values[task, stage]:.6f}" if stage >= task else "")
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "AccuracyMatrix":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty accuracy-matrix CSV")
        header = lines[0].split(",")
        if header[0] != "task":
            raise ValueError("line 1: header must start with 'task'")
        n_tasks = len(header) - 1
        if n_tasks < 1 or header[1:] != [f"i{i + 1}" for i in range(n_tasks)]:
            raise ValueError("line 1: header columns must be i1..iT")
        if len(lines) - 1 != n_tasks:
            raise ValueError(f"expected {n_tasks} rows after the header, found {len(lines) - 1}")
        m = cls(n_tasks)
        for lineno, line in enumerate(lines[1:], start=2):
            cells = line.split(",")
            if len(cells) != n_tasks + 1:
                raise ValueError(f"line {lineno}: expected {n_tasks + 1} cells, found {len(cells)}")
            task = lineno - 2
            if cells[0].strip() != str(task + 1):
                raise ValueError(f"line {lineno}: expected task label {task + 1}, found {cells[0]!r}")
            for stage in range(n_tasks):
                cell = cells[stage + 1].strip()
                if stage < task:
                    if cell:
                        raise ValueError(f"line {lineno}: cell i{stage + 1} must be empty for task {task + 1}")
                    continue
                try:
                    value = float(cell)
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: bad accuracy value {cell!r}") from exc
                m.set(task, stage, value)
        return m


def learning_accuracy(m: AccuracyMatrix) -> tuple[list[float], float]:
    """Diagonal accuracies and their mean."""
    diag = [m.get(j, j) for j in range(m.n_tasks)]
    return diag, float(np.mean(diag))


def forgetting_measure(m: AccuracyMatrix, k: int | None = None) -> tuple[list[float], float]:
    """Absolute drop from past peak, per task, after stage k (1-based count,
    default all tasks); averaged over the k-1 earlier tasks."""
    k = m.n_tasks if k is None else k
    if k < 2:
        raise MetricDomainError("forgetting measure is undefined with fewer than two stages")
    per_task = []
    for j in range(k - 1):
        past = [m.get(j, i) for i in range(j, k - 1)]
        per_task.append(max(past) - m.get(j, k - 1))
    return per_task, float(np.mean(per_task))


def relative_forgetting(m: AccuracyMatrix, k: int | None = None) -> tuple[list[float], float]:
    """Largest proportional drop from past peak, per task, after stage k;
    averaged over all k tasks (the stage-k task contributes 0)."""
    k = m.n_tasks if k is None else k
    per_task = []
    for j in range(k):
        f = 0.0
        current = m.get(j, k - 1)
        for i in range(j, k):
            past = m.get(j, i)
            if past <= 0.0:
                raise MetricDomainError(
                    f"relative forgetting undefined: accuracy 0 at (task={j + 1}, stage={i + 1})"
                )
            f = max(f, 1.0 - current / past)
        per_task.append(f)
    return per_task, float(np.mean(per_task))


def average_accuracy(m: AccuracyMatrix) -> float:
    """Mean accuracy over all tasks after the final stage."""
    return float(np.mean([m.get(j, m.n_tasks - 1) for j in range(m.n_tasks)]))


@dataclass
class BoundReport:
    slack: np.ndarray          # slack[j, i] = a_j^i - l_j * (1 - f_j^i), NaN above the staircase
    min_slack: float
    holds: bool                # every defined cell has slack >= -1e-12
    equality_cells: list[tuple[int, int]]
    aa: float
    la: float
    rf: float
    aggregate_gap: float       # AA - LA * (1 - RF); sign reported, never asserted


def bound_check(m: AccuracyMatrix) -> BoundReport:
    """Per-cell check of accuracy >= diagonal * (1 - proportional drop)."""
    T = m.n_tasks
    diag, la = learning_accuracy(m)
    slack = np.full((T, T), np.nan)
    equality = []
    for i in range(T):
        f_at_i, _ = relative_forgetting(m, k=i + 1)
        for j in range(i + 1):
            s = m.get(j, i) - diag[j] * (1.0 - f_at_i[j])
            slack[j, i] = s
            if abs(s) <= 1e-12:
                equality.append((j, i))
    min_slack = float(np.nanmin(slack))
    _, rf = relative_forgetting(m)
    aa = average_accuracy(m)
    return BoundReport(
        slack=slack,
        min_slack=min_slack,
        holds=bool(min_slack >= -1e-12),
        equality_cells=equality,
        aa=aa,
        la=la,
        rf=rf,
        aggregate_gap=aa - la * (1.0 - rf),
    )


def metric_report(m: AccuracyMatrix) -> dict:
    """LA/FM/RF/AA plus per-task values and the aggregate bound gap.

    FM is null for a single-task matrix (it needs at least two stages).
    """
    la_per_task, la = learning_accuracy(m)
    aa = average_accuracy(m)
    try:
        rf_per_task, rf = relative_forgetting(m)
    except MetricDomainError:
        # a zero accuracy makes the proportional drop undefined
        rf_per_task, rf = [], None
    if m.n_tasks >= 2:
        fm_per_task, fm = forgetting_measure(m)
    else:
        fm_per_task, fm = [], None
    return {
        "LA": la,
        "FM": fm,
        "RF": rf,
        "AA": aa,
        "per_task": {"la": la_per_task, "fm": fm_per_task, "rf": rf_per_task},
        "bound_slack": (aa - la * (1.0 - rf)) if rf is not None else None,
    }


def entropy_of_logits(logits: np.ndarray) -> np.ndarray:
    """Per-row entropy of softmax(logits), in nats."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    return -(p * logp).sum(axis=-1)


def prediction_entropy(
    model,
    images: np.ndarray,
    stage: int | None = None,
    chain_spec: ChainSpec | None = None,
    seed: int = 0,
    batch: int = 256,
) -> float:
    """Mean prediction entropy over a dataset.

    ``stage`` selects a deterministic (seeded) point of the difficulty
    chain as the input view; stage 0 / None is the raw image.
    """
    if stage:
        spec = chain_spec or ChainSpec()
        spec = ChainSpec(
            n_stages=stage,
            crop_pad=spec.crop_pad,
            crop_prob=spec.crop_prob,
            flip_prob=spec.flip_prob,
            policy=spec.policy,
        )
        rng = rng_from((seed, _ENTROPY_STREAM, stage))
        images = np.stack([build_chain(img, spec, rng)[stage] for img in images])
    total = 0.0
    for start in range(0, len(images), batch):
        logits = model.logits(images[start : start + batch])
        total += float(entropy_of_logits(logits).sum())
    return total / len(images)


def ncm_evaluate(
    model,
    reference_images: np.ndarray,
    reference_labels: np.ndarray,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    batch: int = 256,
) -> float:
    """Nearest-class-mean accuracy in the model's penultimate feature space.

    Class means come from the reference set (typically the replay buffer);
    prediction is the nearest mean by Euclidean distance, ties toward the
    lowest class index.
    """
    ref_classes = np.unique(reference_labels)
    missing = np.setdiff1d(np.unique(test_labels), ref_classes)
    if missing.size:
        raise MetricDomainError(f"reference set is missing class {int(missing[0])}")
    ref_feats = np.concatenate(
        [model.feature_array(reference_images[s : s + batch]) for s in range(0, len(reference_images), batch)]
    )
    means = np.stack([ref_feats[reference_labels == c].mean(axis=0) for c in ref_classes])
    correct = 0
    for start in range(0, len(test_images), batch):
        feats = model.feature_array(test_images[start : start + batch])
        d2 = ((feats[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        pred = ref_classes[np.argmin(d2, axis=1)]
        correct += int((pred == test_labels[start : start + batch]).sum())
    return correct / len(test_images)
