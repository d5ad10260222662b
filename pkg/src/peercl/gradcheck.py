"""Finite-difference validation of every differentiable op and loss
composition.

Each registered check builds random inputs and a scalar-valued function of
them; the runner compares analytic gradients from ``backward`` against
central finite differences, and asserts that detached (teacher) inputs
receive no gradient at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import losses
from .autodiff import Tensor, backward, flatten, log_softmax, no_grad, relu, reshape, softmax
from .nn import Mlp, MlpSpec

FD_STEP = 1e-5
REL_TOL = 1e-6

# ops with a registered gradient rule; the check registry must cover all of them
DIFFERENTIABLE_OPS = (
    "add",
    "sub",
    "mul",
    "mul_broadcast",
    "matmul",
    "relu",
    "sum",
    "sum_axis",
    "mean",
    "mean_axis",
    "reshape",
    "flatten",
    "softmax",
    "softmax_temperature",
    "log_softmax",
)


@dataclass
class CheckCase:
    """One random instance: differentiable inputs, frozen (teacher) inputs,
    and the scalar function under test.

    ``fd_fn`` overrides the function used for finite differences; it is
    needed when the loss itself re-derives a stop-gradient target from its
    inputs (self-distillation), where the numeric probe must hold that
    target fixed at the unperturbed values.
    """

    inputs: list[Tensor]
    fn: Callable[[], Tensor]
    frozen: list[Tensor] = field(default_factory=list)
    fd_fn: Callable[[], Tensor] | None = None


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_err: float
    instances: int
    detail: str = ""


def finite_diff_grads(case: CheckCase, h: float = FD_STEP) -> list[np.ndarray]:
    fn = case.fd_fn or case.fn
    grads = []
    with no_grad():
        for t in case.inputs:
            g = np.zeros_like(t.data)
            flat = t.data.ravel()
            gf = g.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                gf[i] = (up - down) / (2.0 * h)
            grads.append(g)
    return grads


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def run_case(case: CheckCase) -> float:
    """Max relative error over the case's inputs; raises on frozen-side grads."""
    for t in case.inputs:
        t.grad = None
    for t in case.frozen:
        t.grad = None
    loss = case.fn()
    backward(loss)
    numeric = finite_diff_grads(case)
    err = 0.0
    for t, fd in zip(case.inputs, numeric):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = max(err, _rel_err(analytic, fd))
    for t in case.frozen:
        if t.grad is not None and np.any(t.grad != 0.0):
            raise AssertionError("teacher-side tensor received a nonzero gradient")
    return err


def run_check(name: str, builder: Callable, n_instances: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for _ in range(n_instances):
            worst = max(worst, run_case(builder(rng)))
    except AssertionError as exc:
        return CheckResult(name, False, worst, n_instances, str(exc))
    return CheckResult(name, worst <= REL_TOL, worst, n_instances)


# ---------------------------------------------------------------------------
# check builders


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)


def _labels(rng, n, k) -> np.ndarray:
    return rng.integers(0, k, size=n)


def _weights(rng) -> losses.LossWeights:
    return losses.LossWeights(
        lam_cls=float(rng.uniform(0.1, 2.0)),
        lam_distill=float(rng.uniform(0.1, 3.0)),
        temperature=float(rng.uniform(0.5, 4.0)),
    )


def _case_add(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 4, 3)
    w = rng.normal(size=(4, 3))
    return CheckCase([a, b], lambda: ((a + b) * Tensor(w)).sum())


def _case_sub(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 4, 3)
    w = rng.normal(size=(4, 3))
    return CheckCase([a, b], lambda: ((a - b) * Tensor(w)).sum())


def _case_mul(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 4, 3)
    return CheckCase([a, b], lambda: (a * b).sum())


def _case_mul_broadcast(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 3)
    w = rng.normal(size=(4, 3))
    return CheckCase([a, b], lambda: ((a * b) * Tensor(w)).sum())


def _case_matmul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    return CheckCase([a, b], lambda: ((a @ b) * Tensor(w)).sum())


def _case_relu(rng):
    data = rng.normal(size=(5, 4))
    data[np.abs(data) < 0.1] += 0.2  # keep away from the kink
    x = Tensor(data, requires_grad=True)
    w = rng.normal(size=(5, 4))
    return CheckCase([x], lambda: (relu(x) * Tensor(w)).sum())


def _case_sum(rng):
    x = _rand(rng, 4, 3)
    return CheckCase([x], lambda: (x.sum() * x.sum()))


def _case_sum_axis(rng):
    x = _rand(rng, 4, 3)
    w = rng.normal(size=(4, 1))
    return CheckCase([x], lambda: (x.sum(axis=1, keepdims=True) * Tensor(w)).sum())


def _case_mean(rng):
    x = _rand(rng, 4, 3)
    return CheckCase([x], lambda: x.mean() * 3.0)


def _case_mean_axis(rng):
    x = _rand(rng, 4, 3)
    w = rng.normal(size=(3,))
    return CheckCase([x], lambda: (x.mean(axis=0) * Tensor(w)).sum())


def _case_reshape(rng):
    x = _rand(rng, 4, 6)
    w = rng.normal(size=(2, 12))
    return CheckCase([x], lambda: (reshape(x, (2, 12)) * Tensor(w)).sum())


def _case_flatten(rng):
    x = _rand(rng, 3, 2, 2, 2)
    w = rng.normal(size=(3, 8))
    return CheckCase([x], lambda: (flatten(x) * Tensor(w)).sum())


def _case_softmax(rng):
    x = _rand(rng, 4, 5)
    w = rng.normal(size=(4, 5))
    return CheckCase([x], lambda: (softmax(x) * Tensor(w)).sum())


def _case_softmax_temperature(rng):
    x = _rand(rng, 4, 5)
    t = float(rng.uniform(0.5, 4.0))
    w = rng.normal(size=(4, 5))
    return CheckCase([x], lambda: (softmax(x, t) * Tensor(w)).sum())


def _case_log_softmax(rng):
    x = _rand(rng, 4, 5)
    w = rng.normal(size=(4, 5))
    return CheckCase([x], lambda: (log_softmax(x) * Tensor(w)).sum())


def _case_cross_entropy(rng):
    x = _rand(rng, 6, 5)
    y = _labels(rng, 6, 5)
    return CheckCase([x], lambda: losses.cross_entropy(x, y))


def _case_soft_kl(rng):
    s, t = _rand(rng, 5, 4), _rand(rng, 5, 4)
    tau = float(rng.uniform(0.5, 4.0))
    return CheckCase([s], lambda: losses.soft_kl(s, t, tau), frozen=[t])


def _case_soft_kl_reverse(rng):
    s, t = _rand(rng, 5, 4), _rand(rng, 5, 4)
    tau = float(rng.uniform(0.5, 4.0))
    return CheckCase([s], lambda: losses.soft_kl(s, t, tau, "student_to_teacher"), frozen=[t])


def _case_mutual(rng):
    s, t = _rand(rng, 5, 4), _rand(rng, 5, 4)
    y = _labels(rng, 5, 4)
    w = _weights(rng)
    return CheckCase([s], lambda: losses.mutual_distill_loss(s, t, y, w), frozen=[t])


def _chain_case(rng, scheme):
    student = [_rand(rng, 4, 5) for _ in range(4)]
    teacher = [_rand(rng, 4, 5) for _ in range(4)]
    y = _labels(rng, 4, 5)
    w = _weights(rng)
    return CheckCase(
        student, lambda: losses.chain_distill_loss(student, teacher, y, w, scheme), frozen=teacher
    )


def _case_chain_hard_to_easy(rng):
    return _chain_case(rng, "hard_to_easy")


def _case_chain_easy_to_hard(rng):
    return _chain_case(rng, "easy_to_hard")


def _case_chain_same_difficulty(rng):
    return _chain_case(rng, "same_difficulty")


def _case_self_chain(rng):
    student = [_rand(rng, 4, 5) for _ in range(4)]
    y = _labels(rng, 4, 5)
    w = _weights(rng)
    # numeric probe holds the self-derived teacher at the unperturbed values
    frozen_teacher = [t.detach() for t in student]
    return CheckCase(
        student,
        lambda: losses.self_chain_loss(student, y, w),
        fd_fn=lambda: losses.chain_distill_loss(student, frozen_teacher, y, w),
    )


def _case_frozen_teacher(rng):
    s, t = _rand(rng, 5, 4), _rand(rng, 5, 4)
    y = _labels(rng, 5, 4)
    w = _weights(rng)
    return CheckCase([s], lambda: losses.frozen_teacher_loss(s, t, y, w), frozen=[t])


def _case_full_peer(rng):
    base = _rand(rng, 4, 5)
    student = [_rand(rng, 4, 5) for _ in range(4)]
    teacher = [_rand(rng, 4, 5) for _ in range(4)]
    y = _labels(rng, 4, 5)
    w = _weights(rng)
    return CheckCase(
        [base, *student],
        lambda: losses.full_peer_loss(losses.cross_entropy(base, y), student, teacher, y, w),
        frozen=teacher,
    )


def _case_multiview(rng):
    student = [_rand(rng, 4, 5) for _ in range(3)]
    y = _labels(rng, 4, 5)
    lam = float(rng.uniform(0.1, 2.0))
    return CheckCase(student, lambda: losses.multiview_ce(student, y, lam))


def _mlp_away_from_kinks(spec: MlpSpec, rng, batch: int, margin: float = 1e-3) -> tuple[Mlp, np.ndarray]:
    """Draw a model/input pair whose relu pre-activations clear the kink by
    ``margin``, so central differences stay one-sided."""
    while True:
        model = Mlp(spec, int(rng.integers(0, 2**31)))
        x = rng.normal(size=(batch, spec.in_dim))
        h = x
        ok = True
        for layer in model.hidden_layers:
            pre = h @ layer.weight.data + layer.bias.data
            if np.abs(pre).min() < margin:
                ok = False
                break
            h = np.maximum(pre, 0.0)
        if ok:
            return model, x


def _case_mlp_cross_entropy(rng):
    spec = MlpSpec(in_shape=(6,), hidden=(5, 4), n_classes=3)
    model, x = _mlp_away_from_kinks(spec, rng, batch=4)
    y = _labels(rng, 4, 3)
    return CheckCase(model.parameters(), lambda: losses.cross_entropy(model(Tensor(x)), y))


def _case_mlp_peer_kl(rng):
    spec = MlpSpec(in_shape=(6,), hidden=(5,), n_classes=3)
    student, x = _mlp_away_from_kinks(spec, rng, batch=4)
    teacher = Mlp(spec, int(rng.integers(0, 2**31)))
    xt = Tensor(x)

    def fn():
        t_logits = teacher(xt).detach()
        return losses.soft_kl(student(xt), t_logits, 2.0)

    return CheckCase(student.parameters(), fn, frozen=teacher.parameters())


CHECKS: dict[str, Callable] = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "mul_broadcast": _case_mul_broadcast,
    "matmul": _case_matmul,
    "relu": _case_relu,
    "sum": _case_sum,
    "sum_axis": _case_sum_axis,
    "mean": _case_mean,
    "mean_axis": _case_mean_axis,
    "reshape": _case_reshape,
    "flatten": _case_flatten,
    "softmax": _case_softmax,
    "softmax_temperature": _case_softmax_temperature,
    "log_softmax": _case_log_softmax,
    "cross_entropy": _case_cross_entropy,
    "soft_kl": _case_soft_kl,
    "soft_kl_reverse": _case_soft_kl_reverse,
    "mutual_distill_loss": _case_mutual,
    "chain_distill_hard_to_easy": _case_chain_hard_to_easy,
    "chain_distill_easy_to_hard": _case_chain_easy_to_hard,
    "chain_distill_same_difficulty": _case_chain_same_difficulty,
    "self_chain_loss": _case_self_chain,
    "frozen_teacher_loss": _case_frozen_teacher,
    "full_peer_loss": _case_full_peer,
    "multiview_ce": _case_multiview,
    "mlp_cross_entropy": _case_mlp_cross_entropy,
    "mlp_peer_kl": _case_mlp_peer_kl,
}


def run_all(n_instances: int = 20, seed: int = 0, checks: dict | None = None) -> list[CheckResult]:
    registry = CHECKS if checks is None else checks
    return [run_check(name, builder, n_instances, seed) for name, builder in registry.items()]
