"""Operator entry point.

Commands: ``zoo-build`` (train a model zoo with known lineage), ``detect``
(rank candidate parents for one child), ``eval`` (per-method accuracy
reports, sweeps, generation-gap matrices, linearization scatter), and
``train-detector`` (fit the learned detector on zoo pairs).

Configs are YAML; every command echoes its resolved configuration as
canonical JSON next to its outputs. Exit codes: 0 success, 1 config/user
error, 2 completed with warnings.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .detector import (DetectorConfig, PlaneBuilder, build_samples,
                       detector_accuracy, load_detector, no_parent_recall,
                       save_detector, split_samples, train_detector)
from .matcher import MethodConfig, evaluate_zoo, score_child, similarity_inputs, sweep
from .nncore import ArchSpec, ContractError
from . import report as report_mod
from .similarity import METRIC_KINDS
from .zoo import (GridPoint, RegularizerSpec, TaskSpec, TrainingShortfallError,
                  ZooManifest, build_generations, expand_grid, train_parents)

# The exit-code contract reserves 2 for "completed with warnings",
# so argument/usage errors must exit 1 like other user errors.
click.UsageError.exit_code = 1

_EXIT_OK = 0
_EXIT_USER_ERROR = 1
_EXIT_WARNINGS = 2


def _fail(message: str) -> "NoReturn":
    click.echo(f"error: {message}", err=True)
    sys.exit(_EXIT_USER_ERROR)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        _fail(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        _fail(f"config parse error: {exc}")
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        _fail("config root must be a mapping")
    return doc


def _prepare_out(out: str | None, config: dict) -> Path:
    out = out or config.get("out")
    if not out:
        _fail("no output directory (use --out or the `out` config key)")
    out_dir = Path(out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        _fail(f"output directory not writable: {exc}")
    return out_dir


def _echo_resolved(out_dir: Path, command: str, resolved: dict) -> None:
    resolved = {"command": command, **resolved}
    (out_dir / f"resolved-{command}.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=1, default=str) + "\n")


def _task_from(d: dict, label: str) -> TaskSpec:
    try:
        return TaskSpec(**d)
    except (TypeError, ContractError) as exc:
        _fail(f"bad task spec for {label}: {exc}")


def _grid_from(d: dict, label: str) -> list[GridPoint]:
    try:
        return expand_grid(d["lrs"], d["batch_sizes"],
                           seeds=d.get("seeds", 1), epochs=d.get("epochs", 4))
    except (KeyError, TypeError) as exc:
        _fail(f"bad grid spec for {label}: {exc}")


def _method_from(d: dict) -> MethodConfig:
    kind = d.get("kind", "l2")
    if kind not in METRIC_KINDS:
        _fail(f"unknown metric kind {kind!r}; choose from {METRIC_KINDS}")
    kwargs = {k: d[k] for k in ("use_approx", "tap", "p", "t", "n_samples",
                                "input_seed") if k in d}
    if "alpha_grid" in d:
        kwargs["alpha_grid"] = tuple(d["alpha_grid"])
    return MethodConfig(kind=kind, **kwargs)


def _load_manifest(zoo: str | None, config: dict) -> ZooManifest:
    zoo = zoo or config.get("zoo_path")
    if not zoo:
        _fail("no zoo path (use --zoo or the `zoo_path` config key)")
    path = Path(zoo)
    if not path.exists():
        _fail(f"zoo not found: {zoo}")
    try:
        return ZooManifest.load(path)
    except (ContractError, json.JSONDecodeError, OSError) as exc:
        _fail(f"could not load zoo manifest: {exc}")


@click.group()
def main() -> None:
    """Model lineage detection: zoo building, matching, and reports."""


_common = [
    click.option("--config", "config_path", type=str, default=None,
                 help="YAML config file."),
    click.option("--seed", type=int, default=None,
                 help="Override the top-level seed."),
    click.option("--workers", type=int, default=None,
                 help="Parallel worker bound (default: available cores)."),
    click.option("--out", type=str, default=None, help="Output directory."),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _resolve_seed(seed: int | None, config: dict) -> int:
    return seed if seed is not None else int(config.get("seed", 0))


def _resolve_workers(workers: int | None, config: dict) -> int:
    import os
    if workers is not None:
        return max(1, workers)
    return max(1, int(config.get("workers", os.cpu_count() or 1)))


@main.command("zoo-build")
@_with_common
def cmd_zoo_build(config_path, seed, workers, out):
    """Train a zoo of parent models and fine-tuned descendants."""
    config = _load_config(config_path)
    zc = config.get("zoo")
    if not zc:
        _fail("config needs a `zoo` section")
    seed = _resolve_seed(seed, config)
    workers = _resolve_workers(workers, config)
    out_dir = _prepare_out(out, config)

    source = _task_from(zc.get("source_task", {}), "source_task")
    chain = [_task_from(t, f"chain[{i}]")
             for i, t in enumerate(zc.get("chain", []))]
    if not chain:
        _fail("zoo config needs a non-empty `chain` of fine-tuning tasks")
    pgrid = _grid_from(zc.get("parent_grid", {}), "parent_grid")
    cgrid = _grid_from(zc.get("child_grid", {}), "child_grid")
    arch = None
    if "arch" in zc:
        try:
            arch = ArchSpec(layer_sizes=tuple(zc["arch"]["layer_sizes"]),
                            activation=zc["arch"].get("activation", "relu"))
        except (KeyError, ContractError) as exc:
            _fail(f"bad arch spec: {exc}")
    reg = None
    if "regularizer" in zc:
        try:
            reg = RegularizerSpec(**zc["regularizer"])
        except (TypeError, ContractError) as exc:
            _fail(f"bad regularizer spec: {exc}")

    try:
        parents = train_parents(source, pgrid, count=zc.get("parent_count", 6),
                                arch=arch, config_seed=seed, workers=workers)
    except (TrainingShortfallError, ContractError) as exc:
        _fail(str(exc))
    teacher = None
    if reg is not None and reg.kind == "kld":
        matches = [p for p in parents if p.id == reg.teacher_id]
        if not matches:
            _fail(f"kld teacher {reg.teacher_id!r} is not a trained parent "
                  f"(have: {[p.id for p in parents]})")
        teacher = matches[0]
    manifest = build_generations(
        parents, chain, cgrid, source,
        accuracy_floor=zc.get("accuracy_floor", 0.80),
        reg=reg, teacher=teacher, config_seed=seed, workers=workers)
    manifest.save(out_dir)
    _echo_resolved(out_dir, "zoo-build",
                   {"config": config, "seed": seed, "workers": workers,
                    "out": str(out_dir)})
    click.echo(f"zoo: {len(manifest.records)} records over generations "
               f"{manifest.generations} -> {out_dir / 'manifest.json'}")
    if manifest.warnings:
        for w in manifest.warnings:
            click.echo(f"warning: {w}", err=True)
        sys.exit(_EXIT_WARNINGS)


@main.command("detect")
@_with_common
@click.option("--zoo", type=str, default=None, help="Zoo manifest directory.")
@click.option("--child", "child_id", type=str, required=True,
              help="Child record id to score.")
@click.option("--method", "method_kind", type=str, default=None,
              help="Metric kind (default from config or l2).")
@click.option("--alpha", type=float, default=None,
              help="Linearization step; 0 means baseline only.")
@click.option("--tap", type=str, default=None, help="Feature tap layer.")
@click.option("--generation", type=int, default=1,
              help="Candidate ancestor generation.")
def cmd_detect(config_path, seed, workers, out, zoo, child_id, method_kind,
               alpha, tap, generation):
    """Rank candidate parents for one child and write a similarity report."""
    config = _load_config(config_path)
    seed = _resolve_seed(seed, config)
    manifest = _load_manifest(zoo, config)
    out_dir = _prepare_out(out, config)

    methods = config.get("methods", [])
    base = dict(methods[0]) if methods else {}
    if method_kind is not None:
        base["kind"] = method_kind
    if tap is not None:
        base["tap"] = tap
    base.setdefault("input_seed", seed)
    method = _method_from(base)

    try:
        child = manifest.record(child_id)
    except KeyError:
        hint = ", ".join(sorted(r.id for r in manifest.records)[:12])
        _fail(f"unknown child id {child_id!r}; known ids include: {hint}")
    candidates = manifest.by_generation(generation)
    if not candidates:
        _fail(f"no candidate records at generation {generation}")

    use_alpha: float | None
    if alpha is not None:
        use_alpha = None if alpha == 0.0 else alpha
    else:
        use_alpha = method.alpha_grid[1] if method.use_approx else None

    inputs = similarity_inputs(manifest, method)
    dist = score_child(child, candidates, inputs, method, use_alpha)
    order = np.argsort(-dist.probabilities)
    click.echo(f"child {child_id} vs generation-{generation} candidates "
               f"({method.kind}, alpha={use_alpha}):")
    for rank, i in enumerate(order, 1):
        mark = " <-- predicted" if dist.parent_ids[i] == dist.prediction else ""
        click.echo(f"  {rank}. {dist.parent_ids[i]}  "
                   f"P={dist.probabilities[i]:.4f}  "
                   f"score={dist.scores[i]:.6g}{mark}")

    rows = tuple(report_mod.SimilarityRow(
        parent_id=pid, kind=method.kind,
        baseline=float(dist.scores[i]) if use_alpha is None else float("nan"),
        approx=float(dist.scores[i]) if use_alpha is not None else None,
        oracle=None, alpha=use_alpha, probability=float(dist.probabilities[i]))
        for i, pid in enumerate(dist.parent_ids))
    report = report_mod.SimilarityReport(child_id=child_id, tap=method.tap,
                                         rows=rows)
    report_mod.write_similarity_report(report, out_dir)
    (out_dir / f"match-{child_id}.json").write_text(json.dumps({
        "child_id": child_id, "prediction": dist.prediction,
        "parent_ids": list(dist.parent_ids),
        "scores": [float(s) for s in dist.scores],
        "probabilities": [float(p) for p in dist.probabilities],
    }, sort_keys=True, indent=1) + "\n")
    _echo_resolved(out_dir, "detect",
                   {"config": config, "seed": seed, "child": child_id,
                    "method": method.method_id, "alpha": use_alpha,
                    "generation": generation, "out": str(out_dir)})


@main.command("eval")
@_with_common
@click.option("--zoo", type=str, default=None, help="Zoo manifest directory.")
@click.option("--method", "method_kinds", type=str, multiple=True,
              help="Metric kind(s); overrides the config method list.")
@click.option("--scatter/--no-scatter", default=None,
              help="Also write exact-vs-one-pass scatter data + figure.")
@click.option("--gap-matrix/--no-gap-matrix", default=None,
              help="Also write the generation-gap accuracy matrix + figure.")
@click.option("--sweep-axis", type=str, default=None,
              help="Stratify accuracy by a tuning axis (lr/epochs/batch_size).")
def cmd_eval(config_path, seed, workers, out, zoo, method_kinds, scatter,
             gap_matrix, sweep_axis):
    """Evaluate learning-free matching methods over a zoo."""
    config = _load_config(config_path)
    seed = _resolve_seed(seed, config)
    manifest = _load_manifest(zoo, config)
    ec = config.get("eval", {})

    if method_kinds:
        method_dicts = [{"kind": k} for k in method_kinds]
    else:
        method_dicts = config.get("methods", [])
    if not method_dicts:
        _fail("nothing to evaluate: empty method list "
              "(pass --method or a `methods` config section)")
    methods = []
    for d in method_dicts:
        d = dict(d)
        d.setdefault("input_seed", seed)
        methods.append(_method_from(d))

    out_dir = _prepare_out(out, config)
    anc = int(ec.get("ancestor_generation", 1))
    desc = ec.get("descendant_generation")
    desc = int(desc) if desc is not None else None

    reports = []
    for method in methods:
        try:
            reports.append(evaluate_zoo(manifest, method,
                                        ancestor_generation=anc,
                                        descendant_generation=desc,
                                        split_seed=seed))
        except ContractError as exc:
            _fail(str(exc))
    report_mod.write_pair_csv(reports, out_dir / "pairs.csv")
    report_mod.write_summary_json(reports, out_dir / "summary.json")
    for rep in reports:
        click.echo(f"{rep.method_id}: accuracy {rep.accuracy:.4f} "
                   f"({len(rep.pairs)} pairs, alpha={rep.selected_alpha})")

    if scatter if scatter is not None else ec.get("scatter", False):
        rows = report_mod.scatter_data(
            manifest, sorted({m.kind for m in methods}),
            alpha=float(ec.get("scatter_alpha", 0.01)), method=methods[0],
            ancestor_generation=anc,
            descendant_generation=desc if desc is not None else anc + 1)
        report_mod.write_scatter_csv(rows, out_dir / "scatter.csv")
        report_mod.render_scatter_figure(rows, out_dir / "scatter.png")
        try:
            click.echo(f"scatter: pearson r = {report_mod.scatter_pearson(rows):.6f}")
        except ValueError:
            click.echo("scatter: too few oracle points for a correlation")

    if gap_matrix if gap_matrix is not None else ec.get("gap_matrix", False):
        matrix = report_mod.generation_gap_matrix(manifest, methods[0],
                                                  split_seed=seed)
        report_mod.write_gap_matrix_csv(matrix, out_dir / "gap-matrix.csv")
        report_mod.render_gap_heatmap(matrix, out_dir / "gap-matrix.png")

    sweep_axis = sweep_axis or ec.get("sweep_axis")
    if sweep_axis:
        try:
            sw = sweep(manifest, sweep_axis, methods, ancestor_generation=anc,
                       descendant_generation=desc, split_seed=seed)
        except ContractError as exc:
            _fail(str(exc))
        report_mod.write_sweep_csv(sw, sweep_axis, out_dir / f"sweep-{sweep_axis}.csv")
        report_mod.render_sweep_figure(sw, sweep_axis, out_dir / f"sweep-{sweep_axis}.png")

    _echo_resolved(out_dir, "eval",
                   {"config": config, "seed": seed,
                    "methods": [m.method_id for m in methods],
                    "out": str(out_dir)})


@main.command("train-detector")
@_with_common
@click.option("--zoo", type=str, default=None, help="Zoo manifest directory.")
@click.option("--epochs", type=int, default=None, help="Total training epochs.")
@click.option("--no-parent", "no_parent", is_flag=True, default=False,
              help="Add the no-parent class (requires --withhold-parent).")
@click.option("--withhold-parent", type=str, default=None,
              help="Parent id removed from the candidate set.")
@click.option("--resume", "resume_path", type=str, default=None,
              help="Checkpoint directory to continue training from.")
def cmd_train_detector(config_path, seed, workers, out, zoo, epochs,
                       no_parent, withhold_parent, resume_path):
    """Train the learned lineage detector on zoo parent/child pairs."""
    config = _load_config(config_path)
    dc = config.get("detector", {})
    seed = _resolve_seed(seed, config)
    manifest = _load_manifest(zoo, config)
    out_dir = _prepare_out(out, config)
    if no_parent and withhold_parent is None:
        _fail("--no-parent requires --withhold-parent ID")
    if withhold_parent is not None:
        known = {r.id for r in manifest.by_generation(1)}
        if withhold_parent not in known:
            _fail(f"withheld parent {withhold_parent!r} is not a "
                  f"generation-1 record (have: {sorted(known)})")

    epochs = epochs if epochs is not None else int(dc.get("epochs", 40))
    builder = PlaneBuilder(
        manifest,
        n_feature_samples=int(dc.get("n_feature_samples", 64)),
        input_seed=seed,
        use_weights=bool(dc.get("use_weights", True)),
        use_features=bool(dc.get("use_features", True)))

    resume = None
    if resume_path is not None:
        try:
            resume = load_detector(resume_path)
        except (OSError, ContractError, json.JSONDecodeError) as exc:
            _fail(f"could not load checkpoint: {exc}")
        if resume.final_values is None:
            _fail("checkpoint has no resumable training state")

    try:
        result = train_detector(
            manifest, builder,
            withhold_parent=withhold_parent if no_parent else None,
            epochs=epochs, lr=float(dc.get("lr", 0.01)), seed=seed,
            resume=resume)
    except ContractError as exc:
        _fail(str(exc))
    save_detector(result, out_dir)

    samples, _ = build_samples(
        manifest, builder,
        withhold_parent=withhold_parent if no_parent else None)
    _, _, test = split_samples(samples, seed)
    test_acc = detector_accuracy(result, test)
    summary = {"test_accuracy": test_acc, "n_test": len(test),
               "best_epoch": result.best_epoch, "epochs": epochs,
               "withheld_parent": withhold_parent if no_parent else None}
    if no_parent:
        recall = no_parent_recall(result, test)
        summary["no_parent_recall"] = recall
        summary["n_test_orphans"] = sum(
            1 for s in test if s.label == len(s.candidates))
    (out_dir / "detector-eval.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n")
    click.echo(f"detector: test accuracy {test_acc:.4f} "
               f"(best epoch {result.best_epoch})")
    if no_parent and summary["no_parent_recall"] is not None:
        click.echo(f"no-parent recall: {summary['no_parent_recall']:.4f} "
                   f"over {summary['n_test_orphans']} orphaned test children")
    _echo_resolved(out_dir, "train-detector",
                   {"config": config, "seed": seed, "epochs": epochs,
                    "no_parent": no_parent, "withhold_parent": withhold_parent,
                    "out": str(out_dir)})


if __name__ == "__main__":
    main()
