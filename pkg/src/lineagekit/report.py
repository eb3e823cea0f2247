"""Report artifacts: delimited pair-level results, JSON summaries, scatter
data for the linearization quality check, generation-gap matrices, and
rendered figures next to the delimited output.

Every CSV starts with a versioned comment line so downstream readers can
detect schema drift; columns are fixed per kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .matcher import EvalReport, MethodConfig, evaluate_zoo, similarity_inputs
from .nncore import JacobianBudgetError
from .similarity import (approx_similarity, baseline_similarity,
                         oracle_similarity, tapped_features)
from .zoo import ZooManifest

__all__ = ["CSV_FORMAT_VERSION", "SimilarityRow", "SimilarityReport",
           "ScatterRow", "scatter_data", "scatter_pearson",
           "generation_gap_matrix",
           "write_similarity_report", "write_pair_csv", "write_summary_json",
           "write_scatter_csv", "write_gap_matrix_csv", "write_sweep_csv",
           "render_scatter_figure", "render_sweep_figure",
           "render_gap_heatmap"]

CSV_FORMAT_VERSION = 1


def _write_csv(path: Path, kind: str, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# lineagekit-csv v{CSV_FORMAT_VERSION} {kind}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join("" if v is None else
                             (f"{v:.12g}" if isinstance(v, float) else str(v))
                             for v in row) + "\n")
    return path


# -- per-child similarity report -------------------------------------------

@dataclass(frozen=True)
class SimilarityRow:
    parent_id: str
    kind: str
    baseline: float
    approx: float | None        # None when only the baseline path ran
    oracle: float | None        # None when the exact path was skipped
    alpha: float | None
    probability: float


@dataclass(frozen=True)
class SimilarityReport:
    child_id: str
    tap: str
    rows: tuple[SimilarityRow, ...]

    def to_dict(self) -> dict:
        return {"child_id": self.child_id, "tap": self.tap,
                "rows": [vars(r) for r in self.rows]}


def write_similarity_report(report: SimilarityReport, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"similarity-{report.child_id}.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    return _write_csv(
        out_dir / f"similarity-{report.child_id}.csv", "similarity",
        ["child_id", "tap", "parent_id", "kind", "baseline", "approx",
         "oracle", "alpha", "probability"],
        [(report.child_id, report.tap, r.parent_id, r.kind, r.baseline,
          r.approx, r.oracle, r.alpha, r.probability) for r in report.rows])


# -- evaluation reports ----------------------------------------------------

def write_pair_csv(reports: list[EvalReport], path: str | Path) -> Path:
    rows = []
    for rep in reports:
        for pr in rep.pairs:
            rows.append((rep.method_id, rep.selected_alpha, pr.child_id,
                         pr.true_parent, pr.predicted_parent, pr.probability,
                         pr.generation_gap,
                         int(pr.predicted_parent == pr.true_parent)))
    return _write_csv(Path(path), "pairs",
                      ["method_id", "selected_alpha", "child_id", "true_parent",
                       "predicted_parent", "probability", "generation_gap",
                       "correct"], rows)


def write_summary_json(reports: list[EvalReport], path: str | Path) -> Path:
    """Per-method accuracy with spread across repeated runs (e.g. seeds)."""
    by_method: dict[str, list[EvalReport]] = {}
    for rep in reports:
        by_method.setdefault(rep.method_id, []).append(rep)
    summary = {}
    for method_id, reps in sorted(by_method.items()):
        accs = np.array([r.accuracy for r in reps])
        summary[method_id] = {
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": float(accs.std()),
            "n_runs": len(reps),
            "runs": [r.to_summary() for r in reps],
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(
        {"format_version": CSV_FORMAT_VERSION, "methods": summary},
        sort_keys=True, indent=1) + "\n")
    return path


def write_sweep_csv(reports: list[EvalReport], axis: str,
                    path: str | Path) -> Path:
    rows = [(rep.method_id, rep.stratification.get(axis), rep.accuracy,
             len(rep.pairs), rep.selected_alpha) for rep in reports]
    return _write_csv(Path(path), f"sweep-{axis}",
                      ["method_id", axis, "accuracy", "n_pairs",
                       "selected_alpha"], rows)


# -- linearization-quality scatter -----------------------------------------

@dataclass(frozen=True)
class ScatterRow:
    kind: str
    parent_id: str
    child_id: str
    alpha: float
    baseline: float
    approx: float
    oracle: float | None        # None when the exact path exceeded its budget


def scatter_data(manifest: ZooManifest, kinds, alpha: float,
                 method: MethodConfig | None = None,
                 ancestor_generation: int = 1,
                 descendant_generation: int = 2,
                 inputs: np.ndarray | None = None,
                 max_pairs: int | None = None) -> list[ScatterRow]:
    """(baseline, approx, oracle) per (parent, child, kind) over all zoo
    pairs; the oracle entry is left empty when its Jacobian budget trips."""
    method = method or MethodConfig()
    if inputs is None:
        inputs = similarity_inputs(manifest, method)
    parents = manifest.by_generation(ancestor_generation)
    children = sorted(manifest.by_generation(descendant_generation),
                      key=lambda r: r.id)
    rows: list[ScatterRow] = []
    for child in children:
        for parent in parents:
            for kind in kinds:
                x = tapped_features(parent, inputs, method.tap)
                y = tapped_features(child, inputs, method.tap)
                base = baseline_similarity(kind, x, y, p=method.p, t=method.t)
                approx = approx_similarity(kind, parent, child, inputs,
                                           tap=method.tap, alpha=alpha,
                                           p=method.p, t=method.t)
                try:
                    oracle = oracle_similarity(kind, parent, child, inputs,
                                               tap=method.tap, alpha=alpha,
                                               p=method.p, t=method.t)
                except JacobianBudgetError:
                    oracle = None
                rows.append(ScatterRow(kind, parent.id, child.id, alpha,
                                       base, approx, oracle))
                if max_pairs is not None and len(rows) >= max_pairs:
                    return rows
    return rows


def scatter_pearson(rows: list[ScatterRow]) -> float:
    pts = [(r.oracle, r.approx) for r in rows if r.oracle is not None]
    if len(pts) < 2:
        raise ValueError("need at least 2 scatter points with oracle values")
    o, a = np.array(pts).T
    return float(np.corrcoef(o, a)[0, 1])


def write_scatter_csv(rows: list[ScatterRow], path: str | Path) -> Path:
    return _write_csv(Path(path), "scatter",
                      ["kind", "parent_id", "child_id", "alpha", "baseline",
                       "approx", "oracle"],
                      [(r.kind, r.parent_id, r.child_id, r.alpha, r.baseline,
                        r.approx, r.oracle) for r in rows])


# -- generation-gap matrix -------------------------------------------------

def generation_gap_matrix(manifest: ZooManifest, method: MethodConfig,
                          split_seed: int = 0,
                          inputs: np.ndarray | None = None
                          ) -> dict[tuple[int, int], EvalReport]:
    """Accuracy for every (ancestor generation, descendant generation) pair."""
    gens = manifest.generations
    matrix = {}
    for ga in gens:
        for gd in gens:
            if gd <= ga:
                continue
            matrix[(ga, gd)] = evaluate_zoo(
                manifest, method, ancestor_generation=ga,
                descendant_generation=gd, split_seed=split_seed, inputs=inputs)
    return matrix


def write_gap_matrix_csv(matrix: dict[tuple[int, int], EvalReport],
                         path: str | Path) -> Path:
    rows = [(ga, gd, rep.method_id, rep.accuracy, len(rep.pairs),
             rep.n_excluded)
            for (ga, gd), rep in sorted(matrix.items())]
    return _write_csv(Path(path), "generation-gap",
                      ["ancestor_generation", "descendant_generation",
                       "method_id", "accuracy", "n_pairs", "n_excluded"], rows)


# -- figures ---------------------------------------------------------------

def render_scatter_figure(rows: list[ScatterRow], path: str | Path) -> Path:
    """Oracle vs one-pass score, one panel per metric kind, identity line."""
    kinds = sorted({r.kind for r in rows})
    fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 4),
                             squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        pts = [(r.oracle, r.approx) for r in rows
               if r.kind == kind and r.oracle is not None]
        if pts:
            o, a = np.array(pts).T
            lo, hi = min(o.min(), a.min()), max(o.max(), a.max())
            ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
            ax.scatter(o, a, s=12, alpha=0.7)
        ax.set_title(kind)
        ax.set_xlabel("exact linearized score")
        ax.set_ylabel("one-pass score")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_figure(reports: list[EvalReport], axis: str,
                        path: str | Path) -> Path:
    """Accuracy vs the swept tuning value, one line per method."""
    by_method: dict[str, list[tuple]] = {}
    for rep in reports:
        by_method.setdefault(rep.method_id, []).append(
            (rep.stratification.get(axis), rep.accuracy))
    fig, ax = plt.subplots(figsize=(5, 4))
    for method_id, pts in sorted(by_method.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=method_id)
    ax.set_xlabel(axis)
    ax.set_ylabel("match accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_gap_heatmap(matrix: dict[tuple[int, int], EvalReport],
                       path: str | Path) -> Path:
    """Accuracy heatmap over (ancestor, descendant) generation pairs."""
    gas = sorted({ga for ga, _ in matrix})
    gds = sorted({gd for _, gd in matrix})
    grid = np.full((len(gas), len(gds)), np.nan)
    for (ga, gd), rep in matrix.items():
        grid[gas.index(ga), gds.index(gd)] = rep.accuracy
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(gds)), [str(g) for g in gds])
    ax.set_yticks(range(len(gas)), [str(g) for g in gas])
    ax.set_xlabel("descendant generation")
    ax.set_ylabel("candidate generation")
    for i in range(len(gas)):
        for j in range(len(gds)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                        color="w", fontsize=8)
    fig.colorbar(im, ax=ax, label="accuracy")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
