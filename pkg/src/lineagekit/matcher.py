"""Turn per-parent similarity scores into lineage predictions and run the
evaluation protocols: per-method accuracy, generation-gap matrices, and
hyperparameter sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nncore import ContractError
from .similarity import approx_similarity, baseline_similarity, tapped_features
from .zoo import ZooManifest, make_dataset

__all__ = ["MatchDistribution", "MethodConfig", "PairResult", "EvalReport",
           "match", "score_child", "evaluate_zoo", "sweep",
           "similarity_inputs"]


@dataclass(frozen=True)
class MatchDistribution:
    parent_ids: tuple[str, ...]
    scores: np.ndarray
    probabilities: np.ndarray

    @property
    def prediction(self) -> str:
        # Lowest-index tie-break.
        return self.parent_ids[int(np.argmax(self.scores == self.scores.max()))]


def match(parent_ids, scores) -> MatchDistribution:
    """Stable softmax over per-parent scores; argmax prediction."""
    parent_ids = tuple(parent_ids)
    scores = np.asarray(scores, dtype=np.float64)
    if len(parent_ids) == 0:
        raise ContractError("empty parent candidate set")
    if scores.shape != (len(parent_ids),):
        raise ContractError("scores and parent ids differ in length")
    if not np.all(np.isfinite(scores)):
        raise ContractError("non-finite scores")
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return MatchDistribution(parent_ids, scores, e / e.sum())


@dataclass(frozen=True)
class MethodConfig:
    """One learning-free scoring method: metric kind plus its knobs.

    ``alpha_grid`` is searched on a held-out validation split of children
    (20%); ``alpha=None`` in results means the baseline (no approximation).
    """
    kind: str = "l2"
    use_approx: bool = True
    alpha_grid: tuple[float, ...] = (0.001, 0.01, 0.1)
    tap: str = "act1"
    p: float = 4.0
    t: float = 0.01
    n_samples: int = 128
    input_seed: int = 0

    @property
    def method_id(self) -> str:
        return f"{self.kind}-{'approx' if self.use_approx else 'baseline'}"


@dataclass(frozen=True)
class PairResult:
    child_id: str
    true_parent: str
    predicted_parent: str
    probability: float
    generation_gap: int


@dataclass
class EvalReport:
    method_id: str
    accuracy: float
    pairs: list[PairResult]
    n_excluded: int = 0
    selected_alpha: float | None = None
    stratification: dict = field(default_factory=dict)

    def to_summary(self) -> dict:
        return {"method_id": self.method_id, "accuracy": self.accuracy,
                "n_pairs": len(self.pairs), "n_excluded": self.n_excluded,
                "selected_alpha": self.selected_alpha,
                "stratification": self.stratification}


def similarity_inputs(manifest: ZooManifest, method: MethodConfig) -> np.ndarray:
    """Sample batch from the first fine-tuning target task's training pool."""
    task_names = sorted(t for t in manifest.tasks if t.startswith("target"))
    task = manifest.tasks[task_names[0] if task_names else "source"]
    data = make_dataset(task)
    rng = np.random.default_rng(method.input_seed)
    idx = rng.permutation(len(data.train_x))[:method.n_samples]
    return data.train_x[idx]


def score_child(child, candidates, inputs: np.ndarray, method: MethodConfig,
                alpha: float | None) -> MatchDistribution:
    scores = []
    for parent in candidates:
        if alpha is None:
            x = tapped_features(parent, inputs, method.tap)
            y = tapped_features(child, inputs, method.tap)
            s = baseline_similarity(method.kind, x, y, p=method.p, t=method.t)
        else:
            s = approx_similarity(method.kind, parent, child, inputs,
                                  tap=method.tap, alpha=alpha,
                                  p=method.p, t=method.t)
        scores.append(s)
    return match([c.id for c in candidates], scores)


def _split_children(children, validation_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(children))
    n_val = max(1, int(round(validation_fraction * len(children)))) \
        if validation_fraction > 0 and len(children) > 1 else 0
    val = [children[i] for i in order[:n_val]]
    test = [children[i] for i in order[n_val:]]
    return val, test


def _accuracy_of(candidates, children, by_ancestor, inputs, method, alpha):
    hits = 0
    for child in children:
        dist = score_child(child, candidates, inputs, method, alpha)
        if dist.prediction == by_ancestor[child.id]:
            hits += 1
    return hits / len(children) if children else 0.0


def evaluate_zoo(manifest: ZooManifest, method: MethodConfig,
                 ancestor_generation: int = 1,
                 descendant_generation: int | None = None,
                 validation_fraction: float = 0.2,
                 split_seed: int = 0,
                 inputs: np.ndarray | None = None) -> EvalReport:
    """Score every descendant against all candidate ancestors of the given
    generation; alpha is selected on the validation split and frozen."""
    candidates = manifest.by_generation(ancestor_generation)
    if not candidates:
        raise ContractError(f"no records at generation {ancestor_generation}")
    if descendant_generation is None:
        descendant_generation = ancestor_generation + 1
    children = [r for r in manifest.by_generation(descendant_generation)]
    by_ancestor = {}
    excluded = 0
    kept = []
    candidate_ids = {c.id for c in candidates}
    for child in children:
        anc = manifest.ancestor_at(child, ancestor_generation)
        if anc is None or anc.id not in candidate_ids:
            excluded += 1
            continue
        by_ancestor[child.id] = anc.id
        kept.append(child)
    kept.sort(key=lambda r: r.id)
    if inputs is None:
        inputs = similarity_inputs(manifest, method)

    selected_alpha: float | None = None
    if method.use_approx:
        val, test = _split_children(kept, validation_fraction, split_seed)
        if val:
            best = max(method.alpha_grid,
                       key=lambda a: _accuracy_of(candidates, val, by_ancestor,
                                                  inputs, method, a))
            selected_alpha = best
        else:
            selected_alpha = method.alpha_grid[0]
    else:
        _, test = _split_children(kept, validation_fraction, split_seed)

    pairs = []
    hits = 0
    for child in test:
        dist = score_child(child, candidates, inputs, method, selected_alpha)
        pred = dist.prediction
        true = by_ancestor[child.id]
        if pred == true:
            hits += 1
        pairs.append(PairResult(
            child_id=child.id, true_parent=true, predicted_parent=pred,
            probability=float(dist.probabilities[dist.parent_ids.index(pred)]),
            generation_gap=descendant_generation - ancestor_generation))
    accuracy = hits / len(pairs) if pairs else 0.0
    strat = {"ancestor_generation": ancestor_generation,
             "descendant_generation": descendant_generation}
    if len(candidates) == 1:
        strat["degenerate_single_candidate"] = True
    return EvalReport(method_id=method.method_id, accuracy=accuracy,
                      pairs=pairs, n_excluded=excluded,
                      selected_alpha=selected_alpha, stratification=strat)


def sweep(manifest: ZooManifest, axis: str, methods: list[MethodConfig],
          ancestor_generation: int = 1,
          descendant_generation: int | None = None,
          split_seed: int = 0) -> list[EvalReport]:
    """One report per (axis value, method); axis is a tuning-metadata key."""
    if axis not in ("lr", "epochs", "batch_size"):
        raise ContractError(f"unknown sweep axis {axis!r}")
    if descendant_generation is None:
        descendant_generation = ancestor_generation + 1
    children = manifest.by_generation(descendant_generation)
    values = sorted({c.tuning.get(axis) for c in children})
    if values == [None]:
        raise ContractError(f"axis {axis!r} absent from tuning metadata")
    reports = []
    for value in values:
        subset = [r for r in manifest.records
                  if r.generation != descendant_generation
                  or r.tuning.get(axis) == value]
        sub = ZooManifest(tasks=manifest.tasks, records=subset,
                          config_seed=manifest.config_seed)
        for method in methods:
            rep = evaluate_zoo(sub, method, ancestor_generation,
                               descendant_generation, split_seed=split_seed)
            rep.stratification[axis] = value
            reports.append(rep)
    return reports
