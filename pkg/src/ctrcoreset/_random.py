"""Labeled seed derivation.

Every random draw in the package comes from a root seed plus a chain of
labels (component names, indices). Changing one component's labels never
shifts the stream of another.
"""
import hashlib

import numpy as np


def derive_seed(root, *labels):
    """Return a 64-bit seed derived from ``root`` and ``labels``."""
    key = ":".join([str(int(root))] + [str(label) for label in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(root, *labels):
    return np.random.default_rng(derive_seed(root, *labels))


def problem_rng(seed, index):
    """Stream for problem ``index`` of a batched solve.

    Depends only on (seed, index), so a problem gets the same draws whether
    it is solved alone, in a batch, or on any worker.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))
