"""Helpers that build runs and bundles straight from arrays."""
import numpy as np

from plgasoc.generation import RunBundle, RunRecord
from plgasoc.plga import TENSOR_NAMES, DeductiveSet


def dset(values, shape=None):
    """DeductiveSet whose four tensors all hold ``values`` (reshaped to ``shape``)."""
    arr = np.asarray(values, dtype=np.float64)
    arr = arr.reshape(shape or (1, 1, 1, arr.size))
    return DeductiveSet(*(arr.copy() for _ in TENSOR_NAMES))


def run_of(sets, name="run", mode="full", seed=0):
    ids = list(range(len(sets)))
    return RunRecord(name=name, mode=mode, seed=seed, sample_ids=ids, prompts=[[1]] * len(sets),
                     outputs=[[2]] * len(sets), deductives=list(sets))


def random_run(rng, n_samples, L, H, dk, name="run", scale=1.0):
    sets = [DeductiveSet(*(rng.normal(size=(L, H, dk, dk)) * scale + 0.5 for _ in TENSOR_NAMES))
            for _ in range(n_samples)]
    return run_of(sets, name)


def bundle_of(run1, run2, cached):
    return RunBundle(runs={"run1": run1, "run2": run2, "cached": cached})
