"""Shared fixtures: small deterministic zoos reused across test modules."""

import numpy as np
import pytest
from hypothesis import settings

from lineagekit.zoo import (TaskSpec, ZooManifest, build_generations,
                            expand_grid, finetune, train_parents)

# property tests must not flake between runs: replay a fixed example stream
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")


def _blob_task(seed: int, spread: float = 3.0, classes: int = 5,
               dims: int = 16) -> TaskSpec:
    return TaskSpec(generator="gaussian-blobs", seed=seed, classes=classes,
                    dims=dims, spread=spread, train_count=400, test_count=200)


@pytest.fixture(scope="session")
def blob_task():
    return _blob_task(11)


@pytest.fixture(scope="session")
def small_zoo():
    """4 parents, one fine-tuning step, ~8 children; builds in seconds."""
    source = _blob_task(11)
    target = _blob_task(12)
    pgrid = expand_grid([1e-2, 1e-3], [32, 128], seeds=2, epochs=6)
    parents = train_parents(source, pgrid, count=4, config_seed=0)
    cgrid = expand_grid([1e-2, 1e-3], [32], seeds=2, epochs=4)
    return build_generations(parents, [target], cgrid, source,
                             accuracy_floor=0.7, config_seed=0)


@pytest.fixture(scope="session")
def deep_zoo():
    """3 generations of descendants below the generation-1 parents."""
    source = _blob_task(21)
    chain = [_blob_task(22), _blob_task(23), _blob_task(24)]
    pgrid = expand_grid([1e-2, 1e-3], [32, 128], seeds=1, epochs=6)
    parents = train_parents(source, pgrid, count=4, config_seed=1)
    cgrid = expand_grid([1e-2, 1e-3], [32], seeds=1, epochs=4)
    return build_generations(parents, chain, cgrid, source,
                             accuracy_floor=0.6, config_seed=1)


@pytest.fixture(scope="session")
def sibling_zoo():
    """Candidates that share one common ancestor, so feature matching is
    genuinely hard: base model -> 6 siblings (generation 2) -> children."""
    source = _blob_task(11)
    t1 = _blob_task(12)
    t2 = _blob_task(13)
    base = train_parents(source, expand_grid([1e-2], [32], seeds=1, epochs=8),
                         count=1, config_seed=0)[0]
    sibs = finetune(base, t1,
                    expand_grid([0.05, 0.01, 0.002], [16, 64], seeds=1, epochs=10),
                    accuracy_floor=0.6, parent_task=source, config_seed=0)
    records = [base] + list(sibs)
    for s in sibs:
        records += finetune(s, t2,
                            expand_grid([0.05, 0.01], [16, 32], seeds=2, epochs=10),
                            accuracy_floor=0.6, parent_task=t1, config_seed=0)
    return ZooManifest(tasks={"source": source, "target1": t1, "target2": t2},
                       records=records, config_seed=0)
