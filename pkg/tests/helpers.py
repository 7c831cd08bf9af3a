"""Shared test plumbing: seeded stores and tensors for module trees."""

import numpy as np

from repdet.tensor import Tensor
from repdet.weights import StoreReader, WeightStore


def random_entries(spec, seed=0):
    r = np.random.default_rng(seed)
    entries = {}
    for name, shape in spec:
        if name.endswith(".running_var"):
            entries[name] = r.uniform(0.5, 1.5, shape).astype(np.float32)
        else:
            entries[name] = r.uniform(-0.1, 0.1, shape).astype(np.float32)
    return entries


def store_for(module, seed=0):
    return WeightStore(random_entries(module.weight_spec(), seed))


def bind_random(module, seed=0):
    """Bind fresh seeded weights to a module tree; returns the store used."""
    store = store_for(module, seed)
    rd = StoreReader(store)
    module.bind(rd)
    rd.finish()
    return store


def bind_store(module, store):
    rd = StoreReader(store)
    module.bind(rd)
    rd.finish()


def rand_tensor(shape, seed=0, lo=-1.0, hi=1.0):
    r = np.random.default_rng(seed)
    return Tensor(r.uniform(lo, hi, shape).astype(np.float32))
