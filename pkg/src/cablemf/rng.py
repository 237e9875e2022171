"""Counter-based random streams.

Every stochastic quantity in the package is drawn from a Philox stream whose
key is ``(seed, purpose, stream index)``. A stream never depends on how many
other streams exist or on the order in which they are consumed, so results do
not change with the number of workers.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# purpose tags, packed into the high bits of the second key word
INIT = 1
NOISE = 2
CROSS = 3
BRIDGE = 4
HITTING = 5
ROWS = 6
REPS = 7
LIMIT = 8

_STREAM_BITS = 40


def stream(seed, purpose, index):
    """Return a Generator for one ``(seed, purpose, index)`` stream."""
    if index < 0 or index >= 1 << _STREAM_BITS:
        raise ValueError(f"stream index out of range: {index}")
    key = np.array([int(seed) & (2**64 - 1), (int(purpose) << _STREAM_BITS) | int(index)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def child_seed(seed, purpose, index):
    """Derive an integer seed for a nested computation."""
    return int(stream(seed, purpose, index).integers(0, 2**63 - 1))


def _fill(seed, purpose, ids, n, kind, out):
    for row, sid in enumerate(ids):
        g = stream(seed, purpose, int(sid))
        if kind == "normal":
            out[row] = g.standard_normal(n)
        else:
            out[row] = g.random(n)


def block(seed, purpose, ids, n, kind="normal", workers=1):
    """Draw ``n`` variates from each stream in ``ids``; shape ``(len(ids), n)``.

    Row ``r`` depends only on ``(seed, purpose, ids[r])``.
    """
    ids = np.asarray(ids, dtype=np.int64).ravel()
    out = np.empty((ids.size, n))
    if workers <= 1 or ids.size < 256:
        _fill(seed, purpose, ids, n, kind, out)
        return out
    parts = np.array_split(np.arange(ids.size), workers)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(_fill, seed, purpose, ids[p], n, kind, out[p[0]:p[-1] + 1])
                   for p in parts if p.size]
        for f in futures:
            f.result()
    return out
