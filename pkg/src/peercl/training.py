"""The online training loop: one pass over the task stream, replay from a
reservoir, and symmetric peer updates with pre-update teacher logits."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .augment import ChainSpec, baseline_augment, build_chain
from .autodiff import Tensor, backward, no_grad
from .buffer import ReplayBuffer
from .config import PAIR_MODES, RunConfig
from .data import LabeledSet, gen_synthetic, load_idx
from .errors import ConfigError
from .losses import (
    cross_entropy,
    frozen_teacher_loss,
    full_peer_loss,
    multiview_ce,
    self_chain_loss,
)
from .metrics import AccuracyMatrix, metric_report, prediction_entropy, ncm_evaluate
from .nn import Mlp, MlpSpec, PeerPair, build_optimizer, rng_from

_MODEL1_STREAM = 11
_MODEL2_STREAM = 12
_AUG_STREAM = 7
_CHAIN_STREAM = 21
_MEMORY_STREAM = 22
_BUFFER_STREAM = 23
_TASK_ORDER_STREAM = 24
_SCHEDULE_STREAM = 25

CHAIN_MODES = ("ccl_dc", "sdc", "er_multiview")


def derive_int_seed(*key) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


@dataclass
class StepRecord:
    step: int
    task: int
    terms: dict[str, float]
    wall: float


class TrainingAborted(RuntimeError):
    """A step produced a non-finite loss; carries the offending record."""

    def __init__(self, message: str, record: StepRecord):
        super().__init__(message)
        self.record = record


@dataclass
class Learner:
    """One model plus its optimizer and its private augmentation streams.

    Both streams derive from the model's own seed, so swapping the two
    peers' seeds swaps their entire training trajectories.
    """

    model: Mlp
    optimizer: object
    seed: int
    aug_rng: np.random.Generator
    chain_rng: np.random.Generator

    @classmethod
    def build(cls, arch: MlpSpec, seed: int, opt_spec) -> "Learner":
        model = Mlp(arch, seed)
        return cls(
            model=model,
            optimizer=build_optimizer(opt_spec, model.parameters()),
            seed=seed,
            aug_rng=rng_from((seed, _AUG_STREAM)),
            chain_rng=rng_from((seed, _CHAIN_STREAM)),
        )


@dataclass
class ExperimentResult:
    seed: int
    mode: str
    matrices: dict[str, AccuracyMatrix]
    primary: str
    reports: dict[str, dict]
    records: list[StepRecord]
    class_groups: list[list[int]]
    stream_consumed: int
    learners: list[Learner]
    probe: Optional[list[dict]] = None
    entropy: Optional[dict[str, float]] = None
    ncm: Optional[float] = None

    @property
    def primary_report(self) -> dict:
        return self.reports[self.primary]


def schedule_tasks(classes: Sequence[int], n_tasks: int, seed: int) -> list[list[int]]:
    """Seeded class-to-task allocation followed by a seeded task order."""
    classes = [int(c) for c in classes]
    if n_tasks < 1:
        raise ConfigError(f"n_tasks must be >= 1, got {n_tasks}")
    if len(classes) % n_tasks != 0:
        raise ConfigError(f"{len(classes)} classes cannot split into {n_tasks} equal tasks")
    rng = rng_from((seed, _SCHEDULE_STREAM))
    shuffled = [classes[i] for i in rng.permutation(len(classes))]
    per = len(classes) // n_tasks
    groups = [shuffled[i * per : (i + 1) * per] for i in range(n_tasks)]
    return [groups[i] for i in rng.permutation(n_tasks)]


def _ce_sum(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].sum())


def probe_cross_entropy(model: Mlp, images: np.ndarray, labels: np.ndarray, batch: int = 512) -> float:
    """Full-pass mean cross-entropy on raw images, without touching training state."""
    total = 0.0
    for start in range(0, len(images), batch):
        total += _ce_sum(model.logits(images[start : start + batch]), labels[start : start + batch])
    return total / len(images)


def _chain_views(images: np.ndarray, spec: ChainSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Per-image chains, stacked per stage so each stage forwards as one batch."""
    chains = [build_chain(img, spec, rng) for img in images]
    return [np.stack([c[s] for c in chains]) for s in range(spec.n_stages + 1)]


def _augment_batch(images: np.ndarray, strategy: str, rng: np.random.Generator) -> np.ndarray:
    return np.stack([baseline_augment(img, strategy, rng) for img in images])


class _Session:
    """State for one seeded run of one mode."""

    def __init__(self, cfg: RunConfig, seed: int, arch: MlpSpec):
        self.cfg = cfg
        self.seed = seed
        seed1 = derive_int_seed(seed, _MODEL1_STREAM)
        seed2 = derive_int_seed(seed, _MODEL2_STREAM)
        self.learners = [Learner.build(arch, seed1, cfg.optimizer)]
        self.frozen: Optional[Mlp] = None
        if cfg.mode in PAIR_MODES:
            self.learners.append(Learner.build(arch, seed2, cfg.optimizer))
        elif cfg.mode == "er_untrained_distill":
            self.frozen = Mlp(arch, seed2)
        self.buffer = ReplayBuffer(cfg.memory_size, seed=(seed, _BUFFER_STREAM))
        self.memory_rng = rng_from((seed, _MEMORY_STREAM))
        self.global_step = 0
        self.stream_consumed = 0

    def chain_spec_for_mode(self) -> Optional[ChainSpec]:
        if self.cfg.mode in CHAIN_MODES:
            return self.cfg.chain
        if self.cfg.mode == "ccl_only":
            return replace(self.cfg.chain, n_stages=0)
        return None

    def train_step(self, stream_images: np.ndarray, stream_labels: np.ndarray, task_idx: int) -> StepRecord:
        cfg = self.cfg
        t0 = time.perf_counter()
        if len(self.buffer):
            mem_images, mem_labels = self.buffer.sample(cfg.memory_batch, self.memory_rng)
            images = np.concatenate([stream_images, mem_images])
            labels = np.concatenate([stream_labels, mem_labels])
        else:
            images, labels = stream_images, stream_labels

        base_views = [_augment_batch(images, cfg.aug_strategy, lrn.aug_rng) for lrn in self.learners]
        chain_spec = self.chain_spec_for_mode()
        # each learner owns one chain per image per step; within a peer's
        # loss the same chain images feed both the student and the teacher
        stages = (
            [_chain_views(images, chain_spec, lrn.chain_rng) for lrn in self.learners]
            if chain_spec is not None
            else None
        )

        losses: list[Tensor] = []
        terms: dict[str, float] = {}
        if cfg.mode == "er_baseline":
            lrn = self.learners[0]
            loss = cross_entropy(lrn.model(Tensor(base_views[0])), labels)
            losses.append(loss)
            terms["baseline"] = loss.item()
        elif cfg.mode == "er_untrained_distill":
            lrn = self.learners[0]
            student = lrn.model(Tensor(base_views[0]))
            with no_grad():
                frozen = self.frozen(Tensor(base_views[0]))
            losses.append(frozen_teacher_loss(student, frozen, labels, cfg.weights))
        elif cfg.mode == "er_multiview":
            lrn = self.learners[0]
            base = cross_entropy(lrn.model(Tensor(base_views[0])), labels)
            chain_logits = [lrn.model(Tensor(stage)) for stage in stages[0]]
            losses.append(base + multiview_ce(chain_logits, labels, cfg.weights.lam_cls))
            terms["baseline"] = base.item()
        elif cfg.mode == "sdc":
            lrn = self.learners[0]
            base = cross_entropy(lrn.model(Tensor(base_views[0])), labels)
            chain_logits = [lrn.model(Tensor(stage)) for stage in stages[0]]
            losses.append(base + self_chain_loss(chain_logits, labels, cfg.weights, cfg.scheme))
            terms["baseline"] = base.item()
        else:  # ccl_only / ccl_dc: symmetric peer losses with pre-update teachers
            for k, lrn in enumerate(self.learners):
                other = self.learners[1 - k]
                base = cross_entropy(lrn.model(Tensor(base_views[k])), labels)
                student = [lrn.model(Tensor(stage)) for stage in stages[k]]
                with no_grad():
                    teacher = [other.model(Tensor(stage)) for stage in stages[k]]
                losses.append(full_peer_loss(base, student, teacher, labels, cfg.weights, cfg.scheme))
                terms[f"baseline{k + 1}"] = base.item()

        for k, loss in enumerate(losses):
            value = loss.item()
            terms[f"total{k + 1}" if len(losses) > 1 else "total"] = value
            if not np.isfinite(value):
                record = StepRecord(self.global_step, task_idx, terms, time.perf_counter() - t0)
                raise TrainingAborted(f"non-finite loss at step {self.global_step}", record)

        for loss in losses:
            backward(loss)
        for lrn in self.learners:
            lrn.optimizer.step()
            lrn.optimizer.zero_grad()

        self.buffer.insert_batch(stream_images, stream_labels)
        self.stream_consumed += len(stream_images)
        self.global_step += 1
        return StepRecord(self.global_step - 1, task_idx, terms, time.perf_counter() - t0)


def train_task(
    session: _Session,
    task_set: LabeledSet,
    task_idx: int,
    probe: Optional[list[dict]] = None,
) -> list[StepRecord]:
    """Stream one task once, in seeded order, updating every learner per step."""
    cfg = session.cfg
    records: list[StepRecord] = []
    if len(task_set) == 0:
        return records
    order = rng_from((session.seed, _TASK_ORDER_STREAM, task_idx)).permutation(len(task_set))
    step_in_task = 0
    for start in range(0, len(order), cfg.stream_batch):
        idx = order[start : start + cfg.stream_batch]
        records.append(session.train_step(task_set.images[idx], task_set.labels[idx], task_idx))
        step_in_task += 1
        if probe is not None and step_in_task % cfg.probe_every == 0:
            value = probe_cross_entropy(session.learners[0].model, task_set.images, task_set.labels)
            probe.append({"step": session.global_step, "task": task_idx, "ce": value})
    return records


def _matrix_keys(cfg: RunConfig) -> tuple[list[str], str]:
    if cfg.mode in PAIR_MODES:
        if cfg.eval_mode == "independent":
            return ["model1", "model2"], "model1"
        if cfg.eval_mode == "ensemble":
            return ["ensemble"], "ensemble"
        return ["model1", "model2", "ensemble"], "model1"
    return ["model"], "model"


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((np.argmax(logits, axis=1) == labels).mean())


def _evaluate_stage(
    session: _Session, task_test: list[LabeledSet], stage: int, matrices: dict[str, AccuracyMatrix]
) -> None:
    pair = len(session.learners) == 2
    for j in range(stage + 1):
        ts = task_test[j]
        logits1 = session.learners[0].model.logits(ts.images)
        if pair:
            logits2 = session.learners[1].model.logits(ts.images)
            values = {
                "model1": _accuracy(logits1, ts.labels),
                "model2": _accuracy(logits2, ts.labels),
                "ensemble": _accuracy((logits1 + logits2) * 0.5, ts.labels),
            }
        else:
            values = {"model": _accuracy(logits1, ts.labels)}
        for key, matrix in matrices.items():
            matrix.set(j, stage, values[key])


def _load_dataset(cfg: RunConfig) -> tuple[LabeledSet, LabeledSet]:
    if cfg.synthetic is not None:
        return gen_synthetic(cfg.synthetic)
    train = load_idx(cfg.idx.train_images, cfg.idx.train_labels)
    test = load_idx(cfg.idx.test_images, cfg.idx.test_labels)
    return train, test


def run_experiment(cfg: RunConfig, seed: int) -> ExperimentResult:
    """Train through all tasks once and fill the accuracy staircase."""
    cfg.validate()
    train, test = _load_dataset(cfg)
    groups = schedule_tasks(sorted(int(c) for c in np.unique(train.labels)), cfg.n_tasks, seed)
    task_train = [train.for_classes(g) for g in groups]
    task_test = [test.for_classes(g) for g in groups]
    n_classes = int(train.labels.max()) + 1
    arch = MlpSpec(in_shape=train.image_shape, hidden=cfg.hidden, n_classes=n_classes)

    session = _Session(cfg, seed, arch)
    keys, primary = _matrix_keys(cfg)
    matrices = {key: AccuracyMatrix(cfg.n_tasks) for key in keys}
    records: list[StepRecord] = []
    probe: Optional[list[dict]] = [] if cfg.diagnostics.loss_probe else None

    for t in range(cfg.n_tasks):
        records.extend(train_task(session, task_train[t], t, probe))
        _evaluate_stage(session, task_test, t, matrices)

    entropy = None
    if cfg.diagnostics.entropy:
        model = session.learners[0].model
        entropy = {
            f"stage_{s}": prediction_entropy(model, train.images, stage=s, chain_spec=cfg.chain, seed=seed)
            for s in range(cfg.chain.n_stages + 1)
        }
    ncm = None
    if cfg.diagnostics.ncm and len(session.buffer):
        ref_images, ref_labels = session.buffer.contents()
        ncm = ncm_evaluate(session.learners[0].model, ref_images, ref_labels, test.images, test.labels)

    reports = {key: metric_report(m) for key, m in matrices.items()}
    return ExperimentResult(
        seed=seed,
        mode=cfg.mode,
        matrices=matrices,
        primary=primary,
        reports=reports,
        records=records,
        class_groups=groups,
        stream_consumed=session.stream_consumed,
        learners=session.learners,
        probe=probe,
        entropy=entropy,
        ncm=ncm,
    )
