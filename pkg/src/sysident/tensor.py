"""Dense float64 tensors and a counter-based, splittable random stream.

Tensors are plain C-order ``numpy.ndarray`` objects with dtype float64;
every public helper enforces that representation. ``Rng`` wraps numpy's
Philox bit generator (counter-based), so a given seed produces the same
stream on every platform and ``split()`` yields statistically independent
child streams that are themselves reproducible.
"""

import hashlib

import numpy as np

from .errors import DimensionError, ParameterError

Tensor = np.ndarray


def tensor(data, shape=None):
    """Build a C-order float64 array, optionally reshaped row-major."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if shape is not None:
        arr = reshape(arr, shape)
    return arr


def reshape(t, shape):
    """Row-major reshape; element count must be preserved."""
    arr = np.asarray(t, dtype=np.float64)
    try:
        return np.reshape(arr, tuple(shape), order="C")
    except ValueError as exc:
        raise DimensionError(
            f"cannot reshape {arr.shape} into {tuple(shape)}"
        ) from exc


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _derive_key(label):
    """128-bit Philox key from an arbitrary string label."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def derive_seed(*parts):
    """Stable 63-bit seed from a tuple of values (run-to-run reproducible)."""
    label = ":".join(repr(p) for p in parts)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


class Rng:
    """Deterministic random stream backed by the Philox counter generator."""

    def __init__(self, seed, _key=None):
        self.seed = int(seed)
        self._key = _key if _key is not None else _derive_key(f"seed:{self.seed}")
        self._gen = np.random.Generator(np.random.Philox(key=self._key))
        self._splits = 0

    def split(self):
        """Child stream; independent of the parent and of earlier children."""
        self._splits += 1
        key = _derive_key(f"{self._key:x}:{self._splits}")
        return Rng(self.seed, _key=key)

    def gaussian(self, shape, mean=0.0, std=1.0):
        if std < 0:
            raise ParameterError(f"gaussian std must be >= 0, got {std}")
        return self._gen.normal(loc=mean, scale=std, size=shape)

    def uniform(self, low, high, shape):
        return self._gen.uniform(low, high, size=shape)

    def random(self, shape):
        return self._gen.random(size=shape)

    def integers(self, low, high):
        return int(self._gen.integers(low, high))

    def permutation(self, n):
        return self._gen.permutation(n)

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


def gaussian(rng, shape, mean=0.0, std=1.0):
    """I.i.d. normal samples drawn from ``rng``."""
    return rng.gaussian(shape, mean=mean, std=std)
