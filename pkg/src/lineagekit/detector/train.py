"""Training loop for the lineage detector: cross-entropy over candidate
scores, batch size 1, gradient-moment optimizer, checkpoint selection by
validation accuracy. Training state (optimizer moments, RNG state, best
checkpoint) is serializable so an interrupted run can resume and land on
the same final metrics as an uninterrupted one."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nncore import ContractError, ParamVector, Tape
from ..zoo import ZooManifest
from ..zoo.train import Adam
from .data import DetectorSample, PlaneBuilder
from .model import DetectorConfig, DetectorModel

__all__ = ["TrainLogEntry", "DetectorResult", "build_samples", "split_samples",
           "train_detector", "detector_accuracy", "predict_no_parent",
           "no_parent_recall", "save_detector", "load_detector"]


@dataclass(frozen=True)
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_loss: float


@dataclass
class DetectorResult:
    params: ParamVector            # best checkpoint by validation accuracy
    config: DetectorConfig
    log: list[TrainLogEntry]
    best_epoch: int
    candidate_ids: tuple[str, ...]
    # resumable training state
    final_values: np.ndarray | None = None
    opt_state: dict | None = None
    rng_state: dict | None = None
    next_epoch: int = 0
    best_val: tuple[float, float] = (-1.0, float("inf"))   # (accuracy, loss)


def build_samples(manifest: ZooManifest, builder: PlaneBuilder,
                  candidate_generation: int = 1,
                  child_generation: int = 2,
                  withhold_parent: str | None = None) -> tuple[list[DetectorSample], tuple[str, ...]]:
    """One sample per child; label = index of its true ancestor among the
    candidates, or M when that ancestor is withheld (no-parent mode)."""
    candidates = [r for r in manifest.by_generation(candidate_generation)
                  if r.id != withhold_parent]
    if not candidates:
        raise ContractError("empty candidate set")
    candidate_ids = tuple(r.id for r in candidates)
    index_of = {cid: i for i, cid in enumerate(candidate_ids)}
    samples = []
    for child in sorted(manifest.by_generation(child_generation), key=lambda r: r.id):
        anc = manifest.ancestor_at(child, candidate_generation)
        if anc is None:
            continue
        if anc.id in index_of:
            label = index_of[anc.id]
        elif withhold_parent is not None:
            label = len(candidates)          # the no-parent class
        else:
            continue
        samples.append(builder.sample_for(child, candidates, label))
    return samples, candidate_ids


def split_samples(samples: list[DetectorSample], seed: int,
                  ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n = len(samples)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if not part:
            raise ContractError(f"7:1:2 split leaves the {name} partition empty "
                                f"({n} samples total)")
    return train, val, test


def _sample_loss(model: DetectorModel, params: ParamVector,
                 sample: DetectorSample, want_grad: bool):
    tape = Tape()
    pn = model.make_param_nodes(tape, params)
    logits = model.candidate_logits(tape, pn, sample.candidates)
    k = logits.value.size
    onehot = np.zeros(k)
    onehot[sample.label] = 1.0
    lse = tape.logsumexp(tape.reshape(logits, (1, k)), axis=1)
    picked = tape.sum(tape.mul(logits, tape.constant(onehot)))
    loss = tape.sub(tape.reshape(lse, ()), picked)
    grad = model.grad(params, loss, pn) if want_grad else None
    return float(loss.value), grad, logits.value


def train_detector(manifest: ZooManifest, builder: PlaneBuilder,
                   config: DetectorConfig | None = None,
                   candidate_generation: int = 1, child_generation: int = 2,
                   withhold_parent: str | None = None,
                   epochs: int = 40, lr: float = 0.01, seed: int = 0,
                   shuffle_labels: bool = False,
                   resume: DetectorResult | None = None) -> DetectorResult:
    """Train up to `epochs` total epochs; with `resume`, continue a prior
    run from its saved optimizer/RNG state toward the same total."""
    if resume is not None:
        config = resume.config
    elif config is None:
        config = DetectorConfig(use_weights=builder.use_weights,
                                use_features=builder.use_features,
                                no_parent=withhold_parent is not None)
    model = DetectorModel(config)
    samples, candidate_ids = build_samples(manifest, builder,
                                           candidate_generation,
                                           child_generation, withhold_parent)
    train, val, test = split_samples(samples, seed)
    rng = np.random.default_rng(seed)
    if shuffle_labels:
        # Null-model control: labels permuted across training children.
        labels = [s.label for s in train]
        perm = rng.permutation(len(labels))
        train = [DetectorSample(s.child_id, s.candidates, labels[perm[i]])
                 for i, s in enumerate(train)]

    params = model.init_params(rng)
    opt = Adam(len(params), lr=lr)
    if resume is not None:
        values = resume.final_values.copy()
        opt.m = np.asarray(resume.opt_state["m"], dtype=np.float64).copy()
        opt.v = np.asarray(resume.opt_state["v"], dtype=np.float64).copy()
        opt.t = int(resume.opt_state["t"])
        opt.lr = float(resume.opt_state["lr"])
        rng.bit_generator.state = resume.rng_state
        log = list(resume.log)
        start_epoch = resume.next_epoch
        best_acc, best_loss = resume.best_val
        best_epoch = resume.best_epoch
        best_values = resume.params.values.copy()
    else:
        values = params.values.copy()
        log = []
        start_epoch = 0
        best_acc, best_loss = -1.0, np.inf
        best_epoch = 0
        best_values = values.copy()

    for epoch in range(start_epoch, epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for i in order:                        # batch size 1
            cur = params.with_values(values)
            loss, grad, _ = _sample_loss(model, cur, train[i], want_grad=True)
            total += loss
            values = opt.step(values, grad.values)
        cur = params.with_values(values)
        val_losses, val_hits = [], 0
        for s in val:
            loss, _, logits = _sample_loss(model, cur, s, want_grad=False)
            val_losses.append(loss)
            if int(np.argmax(logits)) == s.label:
                val_hits += 1
        val_acc = val_hits / len(val)
        val_loss = float(np.mean(val_losses))
        log.append(TrainLogEntry(epoch, total / max(1, len(train)), val_acc, val_loss))
        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best_acc, best_loss, best_epoch = val_acc, val_loss, epoch
            best_values = values.copy()

    return DetectorResult(
        params=params.with_values(best_values), config=config, log=log,
        best_epoch=best_epoch, candidate_ids=candidate_ids,
        final_values=values.copy(),
        opt_state={"m": opt.m.copy(), "v": opt.v.copy(), "t": opt.t, "lr": opt.lr},
        rng_state=rng.bit_generator.state,
        next_epoch=max(start_epoch, epochs),
        best_val=(best_acc, best_loss))


def detector_accuracy(result: DetectorResult, samples: list[DetectorSample]) -> float:
    model = DetectorModel(result.config)
    hits = 0
    for s in samples:
        pred, _ = model.predict(result.params, s.candidates)
        if pred == s.label:
            hits += 1
    return hits / len(samples) if samples else 0.0


def predict_no_parent(result: DetectorResult, sample: DetectorSample) -> int:
    """Index in [0, M]: M means the true parent is absent from the set."""
    if not result.config.no_parent:
        raise ContractError("detector was not trained with the no-parent class")
    model = DetectorModel(result.config)
    pred, _ = model.predict(result.params, sample.candidates)
    return pred


def no_parent_recall(result: DetectorResult, samples: list[DetectorSample]) -> float | None:
    """Fraction of orphaned samples (label == M) predicted as orphaned;
    None when the sample list has no orphans."""
    orphans = [s for s in samples if s.label == len(s.candidates)]
    if not orphans:
        return None
    hits = sum(predict_no_parent(result, s) == s.label for s in orphans)
    return hits / len(orphans)


# -- persistence -----------------------------------------------------------

_DETECTOR_FORMAT_VERSION = 1


def save_detector(result: DetectorResult, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.params.values.astype("<f8").tofile(out_dir / "detector.f64")
    header = {
        "format_version": _DETECTOR_FORMAT_VERSION,
        "config": {
            "d_model": result.config.d_model, "n_heads": result.config.n_heads,
            "ffn_mult": result.config.ffn_mult, "conv_mid": result.config.conv_mid,
            "use_weights": result.config.use_weights,
            "use_features": result.config.use_features,
            "no_parent": result.config.no_parent,
        },
        "best_epoch": result.best_epoch,
        "candidate_ids": list(result.candidate_ids),
        "layout": [[e.name, list(e.shape)] for e in result.params.layout],
    }
    if result.final_values is not None:
        np.concatenate([result.final_values, result.opt_state["m"],
                        result.opt_state["v"]]).astype("<f8").tofile(
            out_dir / "train_state.f64")
        header["train_state"] = {
            "t": int(result.opt_state["t"]), "lr": float(result.opt_state["lr"]),
            "rng_state": result.rng_state, "next_epoch": result.next_epoch,
            "best_val": list(result.best_val),
            "log": [[e.epoch, e.train_loss, e.val_accuracy, e.val_loss]
                    for e in result.log],
        }
    (out_dir / "detector.json").write_text(
        json.dumps(header, sort_keys=True, indent=1) + "\n")
    with open(out_dir / "training_log.csv", "w") as f:
        f.write("epoch,train_loss,val_accuracy,val_loss\n")
        for e in result.log:
            f.write(f"{e.epoch},{e.train_loss:.8f},{e.val_accuracy:.6f},{e.val_loss:.8f}\n")
    return out_dir / "detector.json"


def load_detector(path: str | Path) -> DetectorResult:
    path = Path(path)
    if path.is_dir():
        path = path / "detector.json"
    header = json.loads(path.read_text())
    if header.get("format_version") != _DETECTOR_FORMAT_VERSION:
        raise ContractError("unsupported detector format version")
    config = DetectorConfig(**header["config"])
    values = np.fromfile(path.parent / "detector.f64", dtype="<f8")
    blocks = []
    offset = 0
    for name, shape in header["layout"]:
        size = int(np.prod(shape)) if shape else 1
        blocks.append((name, values[offset:offset + size].reshape(shape)))
        offset += size
    params = ParamVector.from_blocks(blocks)
    result = DetectorResult(params=params, config=config, log=[],
                            best_epoch=header["best_epoch"],
                            candidate_ids=tuple(header["candidate_ids"]))
    ts = header.get("train_state")
    if ts is not None:
        n = len(params)
        state = np.fromfile(path.parent / "train_state.f64", dtype="<f8")
        result.final_values = state[:n]
        result.opt_state = {"m": state[n:2 * n], "v": state[2 * n:3 * n],
                            "t": ts["t"], "lr": ts["lr"]}
        result.rng_state = ts["rng_state"]
        result.next_epoch = ts["next_epoch"]
        result.best_val = tuple(ts["best_val"])
        result.log = [TrainLogEntry(int(e[0]), e[1], e[2], e[3])
                      for e in ts["log"]]
    return result
