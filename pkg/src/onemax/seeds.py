"""Labeled seed derivation.

Every random consumer in the pipeline (corpus synthesis, noise mixing,
weight init, shuffling, dropout) gets its own sub-seed derived from one
master seed plus a fixed label path. Adding a new consumer therefore
never perturbs the streams of existing ones.
"""

import hashlib


def derive_seed(master: int, *labels) -> int:
    """Derive a 63-bit sub-seed from a master seed and a label path.

    Labels may be strings or integers; the mapping is stable across runs,
    platforms, and Python versions.
    """
    parts = [str(int(master))] + [str(x) for x in labels]
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
