"""Latin hypercube sampling and seed derivation."""

from __future__ import annotations

import zlib

import numpy as np
from scipy.stats import qmc


def latin_hypercube(n: int, lb, ub, rng: np.random.Generator) -> np.ndarray:
    """``n`` stratified samples in the box ``[lb, ub]``.

    Each coordinate is split into ``n`` equal bins and every bin receives
    exactly one sample; bins are paired across coordinates by independent
    random permutations.
    """
    lb = np.atleast_1d(np.asarray(lb, dtype=float))
    ub = np.atleast_1d(np.asarray(ub, dtype=float))
    if lb.shape != ub.shape:
        raise ValueError("bounds must have the same shape")
    if n < 1:
        raise ValueError("need at least one sample")
    unit = qmc.LatinHypercube(d=lb.size, seed=rng).random(n)
    return lb + unit * (ub - lb)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from integers and strings.

    Strings are reduced with CRC-32 so the result does not depend on Python's
    per-process hash randomization.
    """
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.append(zlib.crc32(p.encode("utf-8")))
        else:
            ints.append(int(p) & 0xFFFFFFFF)
    state = np.random.SeedSequence(ints).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)
