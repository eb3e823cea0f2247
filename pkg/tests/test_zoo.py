"""Zoo tests: dataset determinism, IDX parsing, training protocol rules,
regularizer math against independent numpy oracles, and byte-identical
manifest persistence."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lineagekit.nncore import ArchSpec, ContractError, forward, init_params
from lineagekit.zoo import (IdxFormatError, ModelRecord, RegularizerSpec,
                            TaskSpec, TrainingShortfallError, ZooManifest,
                            build_generations, derive_seed, diagonal_fisher,
                            expand_grid, finetune, load_idx, make_dataset,
                            train_parents)
from lineagekit.zoo.train import (Adam, GridPoint, _cross_entropy,
                                  _ewc_penalty, _kld_penalty, train_model)


# -- tasks -------------------------------------------------------------------

def test_gaussian_blobs_deterministic(blob_task):
    a = make_dataset(blob_task)
    b = make_dataset(blob_task)
    np.testing.assert_array_equal(a.train_x, b.train_x)
    np.testing.assert_array_equal(a.test_y, b.test_y)
    assert a.n_classes == blob_task.classes
    assert a.d_in == blob_task.dims


def test_gaussian_blobs_seed_changes_data(blob_task):
    other = TaskSpec(**{**blob_task.to_dict(), "seed": blob_task.seed + 1})
    assert not np.array_equal(make_dataset(blob_task).train_x,
                              make_dataset(other).train_x)


def test_gaussian_blobs_rejects_single_class():
    with pytest.raises(ContractError):
        make_dataset(TaskSpec(generator="gaussian-blobs", classes=1))


def _write_idx(tmp_path, images, labels, image_magic=0x803, label_magic=0x801):
    n, r, c = images.shape
    img_path = tmp_path / "imgs.idx"
    img_path.write_bytes(struct.pack(">IIII", image_magic, n, r, c)
                         + images.astype(np.uint8).tobytes())
    lab_path = tmp_path / "labs.idx"
    lab_path.write_bytes(struct.pack(">II", label_magic, len(labels))
                         + labels.astype(np.uint8).tobytes())
    return str(img_path), str(lab_path)


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(7, 4, 5), dtype=np.uint8)
    labels = rng.integers(0, 10, size=7, dtype=np.uint8)
    ip, lp = _write_idx(tmp_path, images, labels)
    x, y = load_idx(ip, lp)
    assert x.shape == (7, 20)
    assert x.min() >= 0.0 and x.max() <= 1.0
    np.testing.assert_allclose(x[0], images[0].ravel() / 255.0)
    np.testing.assert_array_equal(y, labels)


def test_idx_bad_magic_reports_offset(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    ip, lp = _write_idx(tmp_path, images, labels, image_magic=0x999)
    with pytest.raises(IdxFormatError, match="offset 0"):
        load_idx(ip, lp)


def test_idx_truncated(tmp_path):
    p = tmp_path / "short.idx"
    p.write_bytes(b"\x00\x00\x08\x03")
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(str(p), str(p))


def test_idx_count_mismatch(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    ip, lp = _write_idx(tmp_path, images, labels)
    with pytest.raises(IdxFormatError, match="count"):
        load_idx(ip, lp)


# -- seeds and grids ---------------------------------------------------------

def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, "parent", 1) == derive_seed(0, "parent", 1)
    assert derive_seed(0, "parent", 1) != derive_seed(0, "parent", 2)
    assert derive_seed(0, "parent", 1) != derive_seed(1, "parent", 1)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
@settings(max_examples=20, deadline=None)
def test_expand_grid_covers_product(n_lr, n_bs, seeds):
    lrs = [10.0 ** -i for i in range(1, n_lr + 1)]
    bss = [2 ** i for i in range(4, 4 + n_bs)]
    grid = expand_grid(lrs, bss, seeds=seeds, epochs=3)
    assert len(grid) == n_lr * n_bs * seeds
    assert len({(g.lr, g.batch_size, g.seed_index) for g in grid}) == len(grid)


# -- regularizer math against numpy oracles ----------------------------------

def test_cross_entropy_matches_numpy():
    from lineagekit.nncore import Tape
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    tape = Tape()
    node = tape.leaf(logits)
    got = float(_cross_entropy(tape, node, labels).value)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    want = -logp[np.arange(6), labels].mean()
    assert abs(got - want) < 1e-12


def test_ewc_penalty_matches_quadratic_form():
    from lineagekit.nncore import Tape
    rng = np.random.default_rng(1)
    arch = ArchSpec(layer_sizes=(4, 6, 3))
    anchor = init_params(arch, rng)
    fisher = anchor.with_values(rng.uniform(0.1, 1.0, size=len(anchor)))
    current = anchor.with_values(anchor.values + rng.normal(size=len(anchor)))
    tape = Tape()
    nodes = {e.name: tape.leaf(current.block(e.name)) for e in current.layout}
    got = float(_ewc_penalty(tape, nodes, anchor, fisher).value)
    diff = current.values - anchor.values
    want = float(np.sum(fisher.values * diff ** 2))
    assert abs(got - want) < 1e-10 * max(1.0, abs(want))


def test_kld_penalty_matches_numpy():
    from lineagekit.nncore import Tape
    rng = np.random.default_rng(2)
    student = rng.normal(size=(5, 4))
    teacher = rng.normal(size=(5, 4))
    temp = 2.5
    tape = Tape()
    got = float(_kld_penalty(tape, tape.leaf(student), teacher, temp).value)

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    pt = softmax(teacher / temp)
    zs = student / temp
    logps = zs - np.log(np.exp(zs - zs.max(axis=1, keepdims=True)).sum(
        axis=1, keepdims=True)) - zs.max(axis=1, keepdims=True)
    want = temp ** 2 * float((-(pt * logps).sum(axis=1)).mean())
    assert abs(got - want) < 1e-10


def test_adam_matches_reference_step():
    opt = Adam(3, lr=0.1)
    values = np.array([1.0, 2.0, 3.0])
    grad = np.array([0.5, -0.5, 0.0])
    out = opt.step(values, grad)
    # first step: bias-corrected moments reduce to sign(grad)
    expected = values - 0.1 * grad / (np.abs(grad) + 1e-8)
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_diagonal_fisher_nonnegative_and_shaped(blob_task):
    arch = ArchSpec(layer_sizes=(blob_task.dims, 8, blob_task.classes))
    params = init_params(arch, np.random.default_rng(0))
    data = make_dataset(blob_task)
    fisher = diagonal_fisher(arch, params, data.train_x, data.train_y,
                             n_samples=16)
    assert len(fisher) == len(params)
    assert np.all(fisher.values >= 0.0)
    assert fisher.values.max() > 0.0


def test_ewc_keeps_children_closer_to_parent(small_zoo, blob_task):
    parent = small_zoo.by_generation(1)[0]
    target = small_zoo.tasks["target1"]
    grid = [GridPoint(lr=0.05, batch_size=32, epochs=4, seed_index=0)]
    free = finetune(parent, target, grid, accuracy_floor=0.0,
                    parent_task=small_zoo.tasks["source"], config_seed=7)[0]
    reg = RegularizerSpec(kind="ewc", weight=50.0, fisher_samples=64)
    anchored = finetune(parent, target, grid, reg=reg, accuracy_floor=0.0,
                        parent_task=small_zoo.tasks["source"], config_seed=7)[0]
    d_free = np.linalg.norm(free.params.values - parent.params.values)
    d_anchored = np.linalg.norm(anchored.params.values - parent.params.values)
    assert d_anchored < d_free


def test_kld_requires_teacher(small_zoo):
    parent = small_zoo.by_generation(1)[0]
    reg = RegularizerSpec(kind="kld", weight=1.0, teacher_id=parent.id,
                          temperature=2.0)
    with pytest.raises(ContractError, match="teacher"):
        finetune(parent, small_zoo.tasks["target1"],
                 [GridPoint(0.01, 32, 1, 0)], reg=reg)


def test_regularizer_spec_validation():
    with pytest.raises(ContractError):
        RegularizerSpec(kind="blah")
    with pytest.raises(ContractError):
        RegularizerSpec(kind="kld", teacher_id="t", temperature=0.0)
    with pytest.raises(ContractError):
        RegularizerSpec(kind="kld", teacher_id="")


# -- training protocol -------------------------------------------------------

def test_train_parents_ranked_by_accuracy(small_zoo):
    parents = small_zoo.by_generation(1)
    accs = [p.test_accuracy for p in parents]
    assert accs == sorted(accs, reverse=True)
    assert [p.id for p in parents] == [f"g1-p{i}" for i in range(len(parents))]


def test_train_parents_shortfall():
    task = TaskSpec(generator="gaussian-blobs", seed=5, classes=3, dims=8,
                    spread=1.0, train_count=64, test_count=32)
    grid = expand_grid([1e-2], [32], seeds=1, epochs=1)
    with pytest.raises(TrainingShortfallError, match="accuracies"):
        train_parents(task, grid, count=5)


def test_accuracy_floor_filters_children(small_zoo):
    parent = small_zoo.by_generation(1)[0]
    target = small_zoo.tasks["target1"]
    grid = [GridPoint(lr=0.01, batch_size=32, epochs=2, seed_index=0)]
    kept = finetune(parent, target, grid, accuracy_floor=1.01,
                    parent_task=small_zoo.tasks["source"], config_seed=0)
    assert kept == []   # vacuous filter: no children can pass


def test_no_persisted_record_below_floor(small_zoo):
    for rec in small_zoo.by_generation(2):
        assert rec.test_accuracy >= 0.7


def test_children_record_parent_and_tuning(small_zoo):
    parents = {p.id for p in small_zoo.by_generation(1)}
    for rec in small_zoo.by_generation(2):
        assert rec.parent_id in parents
        assert {"lr", "batch_size", "epochs"} <= set(rec.tuning)


def test_training_is_deterministic(blob_task):
    arch = ArchSpec(layer_sizes=(blob_task.dims, 8, blob_task.classes))
    data = make_dataset(blob_task)
    point = GridPoint(lr=0.01, batch_size=32, epochs=2, seed_index=0)
    runs = []
    for _ in range(2):
        params = init_params(arch, np.random.default_rng(9))
        runs.append(train_model(arch, params, data, point, seed=9).values)
    np.testing.assert_array_equal(runs[0], runs[1])


def test_lineage_die_out_emits_warning(blob_task):
    source = blob_task
    target = TaskSpec(**{**blob_task.to_dict(), "seed": 99})
    grid = expand_grid([1e-2], [32], seeds=1, epochs=2)
    parents = train_parents(source, grid, count=1, config_seed=3)
    manifest = build_generations(parents, [target], grid, source,
                                 accuracy_floor=1.01, config_seed=3)
    assert manifest.warnings
    assert any("died out" in w for w in manifest.warnings)


# -- manifests ----------------------------------------------------------------

def test_manifest_roundtrip_byte_identical(small_zoo, tmp_path):
    d1 = tmp_path / "first"
    small_zoo.save(d1)
    reloaded = ZooManifest.load(d1)
    d2 = tmp_path / "second"
    reloaded.save(d2)
    assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()
    for rec in small_zoo.records:
        a = (d1 / "blobs" / f"{rec.id}.f64").read_bytes()
        b = (d2 / "blobs" / f"{rec.id}.f64").read_bytes()
        assert a == b
        np.testing.assert_array_equal(reloaded.record(rec.id).params.values,
                                      rec.params.values)


def test_manifest_rejects_unknown_parent(small_zoo):
    rec = small_zoo.by_generation(2)[0]
    orphan = ModelRecord(id="x", arch=rec.arch, params=rec.params,
                         generation=2, parent_id="missing",
                         tuning={}, test_accuracy=0.9)
    with pytest.raises(ContractError, match="unknown parent"):
        ZooManifest(tasks=small_zoo.tasks,
                    records=list(small_zoo.records) + [orphan],
                    config_seed=0)


def test_manifest_rejects_bad_format_version(small_zoo, tmp_path):
    small_zoo.save(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["format_version"] = 999
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ContractError, match="format version"):
        ZooManifest.load(tmp_path)


def test_record_generation_parent_invariant(small_zoo):
    rec = small_zoo.by_generation(2)[0]
    with pytest.raises(ContractError):
        ModelRecord(id="bad", arch=rec.arch, params=rec.params, generation=1,
                    parent_id="someone", tuning={}, test_accuracy=0.9)
    with pytest.raises(ContractError):
        ModelRecord(id="bad", arch=rec.arch, params=rec.params, generation=2,
                    parent_id=None, tuning={}, test_accuracy=0.9)


def test_ancestor_walk(deep_zoo):
    for child in deep_zoo.by_generation(4):
        anc = deep_zoo.ancestor_at(child, 1)
        assert anc is not None and anc.generation == 1
        direct = deep_zoo.record(child.parent_id)
        assert deep_zoo.ancestor_at(direct, 1).id == anc.id


def test_head_reinit_on_class_count_change(small_zoo):
    parent = small_zoo.by_generation(1)[0]
    target = TaskSpec(generator="gaussian-blobs", seed=31, classes=3, dims=16,
                      spread=3.0, train_count=300, test_count=150)
    kids = finetune(parent, target, [GridPoint(0.01, 32, 2, 0)],
                    accuracy_floor=0.0,
                    parent_task=small_zoo.tasks["source"], config_seed=0)
    assert kids[0].arch.layer_sizes[-1] == 3
    assert kids[0].params.block("layer3.weight").shape[-1] == 3
