"""Training and fine-tuning of subject MLPs with known lineage.

Optimizer is the bias-corrected gradient-moment method (Adam defaults).
Fine-tuning optionally adds an EWC penalty (diagonal Fisher on the parent's
task) or a temperature-scaled KL divergence to a frozen teacher's outputs.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..nncore import (ArchSpec, ContractError, ParamVector, forward,
                      grad_scalar, init_params)
from .records import ModelRecord, RegularizerSpec, ZooManifest, derive_seed
from .tasks import Dataset, TaskSpec, make_dataset

__all__ = ["GridPoint", "expand_grid", "train_parents", "finetune",
           "build_generations", "TrainingShortfallError", "accuracy",
           "diagonal_fisher"]


class TrainingShortfallError(RuntimeError):
    """Fewer models than requested passed training; message lists accuracies."""


@dataclass(frozen=True)
class GridPoint:
    lr: float
    batch_size: int
    epochs: int
    seed_index: int

    def to_dict(self) -> dict:
        return {"lr": self.lr, "batch_size": self.batch_size,
                "epochs": self.epochs, "seed_index": self.seed_index}


def expand_grid(lrs, batch_sizes, seeds: int, epochs: int) -> list[GridPoint]:
    return [GridPoint(lr, bs, epochs, s)
            for lr in lrs for bs in batch_sizes for s in range(seeds)]


# -- optimizer -------------------------------------------------------------

class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return values - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- loss pieces -----------------------------------------------------------

def _cross_entropy(tape, logits_node, labels: np.ndarray):
    n, k = logits_node.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    lse = tape.logsumexp(logits_node, axis=1)
    picked = tape.sum(tape.mul(logits_node, tape.constant(onehot)), axis=1)
    return tape.mean(tape.sub(lse, picked))


def _ewc_penalty(tape, param_nodes, parent: ParamVector, fisher: ParamVector):
    total = None
    for entry in parent.layout:
        diff = tape.sub(param_nodes[entry.name], tape.constant(parent.block(entry.name)))
        term = tape.sum(tape.mul(tape.constant(fisher.block(entry.name)),
                                 tape.pow(diff, 2.0)))
        total = term if total is None else tape.add(total, term)
    return total


def _kld_penalty(tape, logits_node, teacher_logits: np.ndarray, temperature: float):
    t = temperature
    log_ps = _log_softmax(tape, tape.mul(logits_node, 1.0 / t))
    pt = _np_softmax(teacher_logits / t)
    # KL(p_t || p_s) up to the constant entropy of p_t; scaled by t^2.
    ce = tape.mean(tape.sum(tape.mul(tape.constant(-pt), log_ps), axis=1))
    return tape.mul(ce, t * t)


def _log_softmax(tape, node):
    lse = tape.logsumexp(node, axis=1)
    return tape.sub(node, tape.reshape(lse, (node.shape[0], 1)))


def _np_softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def accuracy(arch: ArchSpec, params: ParamVector, x: np.ndarray,
             y: np.ndarray) -> float:
    logits = forward(arch, params, x).outputs
    return float((logits.argmax(axis=1) == y).mean())


def diagonal_fisher(arch: ArchSpec, params: ParamVector, x: np.ndarray,
                    y: np.ndarray, n_samples: int = 256) -> ParamVector:
    """Diagonal Fisher from squared per-sample log-likelihood gradients."""
    n = min(n_samples, len(x))
    total = np.zeros(len(params))
    for i in range(n):
        res = forward(arch, params, x[i:i + 1])
        tape = res.tape
        loss = _cross_entropy(tape, res.tap_nodes["logits"], y[i:i + 1])
        g = grad_scalar(res, loss).values
        total += g ** 2
    return params.with_values(total / n)


# -- training loop ---------------------------------------------------------

def train_model(arch: ArchSpec, params: ParamVector, data: Dataset,
                point: GridPoint, seed: int,
                reg: RegularizerSpec | None = None,
                parent_params: ParamVector | None = None,
                fisher: ParamVector | None = None,
                teacher: tuple[ArchSpec, ParamVector] | None = None) -> ParamVector:
    """Minibatch training; returns the final parameters."""
    rng = np.random.default_rng(seed)
    opt = Adam(len(params), lr=point.lr)
    values = params.values.copy()
    n = len(data.train_x)
    teacher_logits_full = None
    if teacher is not None:
        teacher_logits_full = forward(teacher[0], teacher[1], data.train_x).outputs
    for _ in range(point.epochs):
        order = rng.permutation(n)
        for start in range(0, n, point.batch_size):
            idx = order[start:start + point.batch_size]
            cur = params.with_values(values)
            res = forward(arch, cur, data.train_x[idx])
            tape = res.tape
            loss = _cross_entropy(tape, res.tap_nodes["logits"], data.train_y[idx])
            if reg is not None and reg.kind == "ewc" and reg.weight > 0:
                loss = tape.add(loss, tape.mul(
                    _ewc_penalty(tape, res.param_nodes, parent_params, fisher),
                    reg.weight))
            if reg is not None and reg.kind == "kld":
                loss = tape.add(loss, tape.mul(
                    _kld_penalty(tape, res.tap_nodes["logits"],
                                 teacher_logits_full[idx], reg.temperature),
                    reg.weight))
            grad = grad_scalar(res, loss).values
            values = opt.step(values, grad)
    return params.with_values(values)


# -- zoo building ----------------------------------------------------------

def _parent_job(args):
    arch_dict, task_dict, point_dict, seed = args
    arch = ArchSpec.from_dict(arch_dict)
    task = TaskSpec.from_dict(task_dict)
    data = make_dataset(task)
    point = GridPoint(**point_dict)
    params = init_params(arch, np.random.default_rng(seed))
    trained = train_model(arch, params, data, point, seed)
    acc = accuracy(arch, trained, data.test_x, data.test_y)
    return trained.values, acc


def _run_jobs(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def train_parents(task: TaskSpec, grid: list[GridPoint], count: int,
                  arch: ArchSpec | None = None, config_seed: int = 0,
                  workers: int = 1) -> list[ModelRecord]:
    """Train one model per grid point and keep the top `count` by test accuracy."""
    if not grid:
        raise ContractError("hyperparameter grid is empty")
    data = make_dataset(task)
    if data.n_classes < 2:
        raise ContractError("degenerate task: fewer than 2 classes")
    if arch is None:
        arch = ArchSpec(layer_sizes=(data.d_in, 64, 32, data.n_classes))
    jobs = []
    for gi, point in enumerate(grid):
        seed = derive_seed(config_seed, "parent", gi, 1)
        jobs.append((arch.to_dict(), task.to_dict(), point.to_dict(), seed))
    results = _run_jobs(_parent_job, jobs, workers)
    template = init_params(arch, np.random.default_rng(0))
    candidates = []
    for gi, (point, (values, acc)) in enumerate(zip(grid, results)):
        candidates.append((acc, gi, point, template.with_values(values)))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    if len(candidates) < count:
        raise TrainingShortfallError(
            f"only {len(candidates)} models trained, need {count}; "
            f"accuracies: {[round(c[0], 4) for c in candidates]}")
    records = []
    for rank, (acc, gi, point, params) in enumerate(candidates[:count]):
        records.append(ModelRecord(
            id=f"g1-p{rank}", arch=arch, params=params, generation=1,
            parent_id=None,
            tuning={**point.to_dict(), "seed": derive_seed(config_seed, "parent", gi, 1),
                    "regularizer": RegularizerSpec().to_dict()},
            test_accuracy=acc))
    return records


def _child_job(args):
    (arch_dict, parent_values, task_dict, point_dict, seed, reg_dict,
     fisher_values, teacher) = args
    arch = ArchSpec.from_dict(arch_dict)
    task = TaskSpec.from_dict(task_dict)
    data = make_dataset(task)
    point = GridPoint(**point_dict)
    reg = RegularizerSpec.from_dict(reg_dict)
    rng = np.random.default_rng(seed)

    template = init_params(arch, np.random.default_rng(0))
    parent_params = template.with_values(np.asarray(parent_values))
    start = parent_params
    target_k = data.n_classes
    if arch.d_out != target_k:
        # Head reshaped and reinitialized for the target class count.
        new_sizes = arch.layer_sizes[:-1] + (target_k,)
        arch = ArchSpec(kind=arch.kind, layer_sizes=new_sizes,
                        activation=arch.activation)
        head_w = rng.normal(0.0, np.sqrt(2.0 / new_sizes[-2]),
                            size=(new_sizes[-2], target_k))
        last = len(parent_params.layout) // 2
        start = parent_params.replace_block(f"layer{last}.weight", head_w)
        start = start.replace_block(f"layer{last}.bias", np.zeros(target_k))

    fisher = None
    if reg.kind == "ewc":
        fisher = start.with_values(np.asarray(fisher_values))
    teacher_model = None
    if reg.kind == "kld":
        t_arch = ArchSpec.from_dict(teacher[0])
        t_template = init_params(t_arch, np.random.default_rng(0))
        teacher_model = (t_arch, t_template.with_values(np.asarray(teacher[1])))

    tuned = train_model(arch, start, data, point, seed, reg=reg,
                        parent_params=start if reg.kind == "ewc" else None,
                        fisher=fisher, teacher=teacher_model)
    acc = accuracy(arch, tuned, data.test_x, data.test_y)
    degenerate = bool(np.array_equal(tuned.values, start.values))
    return tuned.values, acc, arch.to_dict(), degenerate


def finetune(parent: ModelRecord, task: TaskSpec, grid: list[GridPoint],
             reg: RegularizerSpec | None = None, accuracy_floor: float = 0.80,
             parent_task: TaskSpec | None = None,
             teacher: ModelRecord | None = None,
             config_seed: int = 0, workers: int = 1,
             id_prefix: str | None = None) -> list[ModelRecord]:
    """Fine-tune children from one parent; keep those above the accuracy floor."""
    if not grid:
        raise ContractError("hyperparameter grid is empty")
    reg = reg or RegularizerSpec()
    if reg.kind == "kld" and teacher is None:
        raise ContractError(f"kld regularizer names teacher {reg.teacher_id!r} "
                            "but no teacher record was supplied")
    fisher_values = None
    if reg.kind == "ewc":
        if parent_task is None:
            raise ContractError("ewc regularizer requires the parent's task spec")
        pdata = make_dataset(parent_task)
        fisher_values = diagonal_fisher(parent.arch, parent.params, pdata.train_x,
                                        pdata.train_y, reg.fisher_samples).values

    gen = parent.generation + 1
    jobs = []
    for gi, point in enumerate(grid):
        seed = derive_seed(config_seed, parent.id, gi, gen)
        jobs.append((parent.arch.to_dict(), parent.params.values, task.to_dict(),
                     point.to_dict(), seed, reg.to_dict(), fisher_values,
                     (teacher.arch.to_dict(), teacher.params.values)
                     if teacher is not None else None))
    results = _run_jobs(_child_job, jobs, workers)
    prefix = id_prefix or f"{parent.id}-g{gen}"
    children = []
    for gi, (point, (values, acc, arch_dict, degenerate)) in enumerate(zip(grid, results)):
        if degenerate or acc < accuracy_floor:
            continue
        child_arch = ArchSpec.from_dict(arch_dict)
        template = init_params(child_arch, np.random.default_rng(0))
        children.append(ModelRecord(
            id=f"{prefix}-c{gi}", arch=child_arch,
            params=template.with_values(np.asarray(values)),
            generation=gen, parent_id=parent.id,
            tuning={**point.to_dict(),
                    "seed": derive_seed(config_seed, parent.id, gi, gen),
                    "regularizer": reg.to_dict()},
            test_accuracy=acc))
    return children


def build_generations(roots: list[ModelRecord], chain: list[TaskSpec],
                      grid: list[GridPoint], source_task: TaskSpec,
                      accuracy_floor: float = 0.80,
                      reg: RegularizerSpec | None = None,
                      teacher: ModelRecord | None = None,
                      config_seed: int = 0, workers: int = 1) -> ZooManifest:
    """Fine-tune down the task chain; the best child per root lineage is
    promoted as the next generation's parent-of-record."""
    if not chain:
        raise ContractError("task chain must have length >= 1")
    records = list(roots)
    warnings: list[str] = []
    current_parents = {r.id: r for r in roots}   # lineage root id -> current parent
    lineage_of = {r.id: r.id for r in roots}
    parent_tasks = {r.id: source_task for r in roots}

    for step, task in enumerate(chain):
        next_parents = {}
        for root_id, parent in sorted(current_parents.items()):
            children = finetune(parent, task, grid, reg=reg,
                                accuracy_floor=accuracy_floor,
                                parent_task=parent_tasks[parent.id],
                                teacher=teacher,
                                config_seed=config_seed, workers=workers)
            records.extend(children)
            for c in children:
                lineage_of[c.id] = root_id
                parent_tasks[c.id] = task
            if not children:
                warnings.append(
                    f"lineage {root_id} died out at generation {parent.generation + 1} "
                    f"(no child passed the {accuracy_floor:.2f} floor)")
                continue
            best = max(children, key=lambda c: c.test_accuracy)
            next_parents[root_id] = best
        current_parents = next_parents
        if not current_parents:
            warnings.append("all lineages died out; chain truncated")
            break

    tasks = {"source": source_task}
    for i, t in enumerate(chain):
        tasks[f"target{i + 1}"] = t
    return ZooManifest(tasks=tasks, records=records, config_seed=config_seed,
                       warnings=warnings)
