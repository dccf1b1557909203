"""64-bit FNV-1a, used for framebuffer hashes and format checksums."""

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF
# Below this size the pure-Python loop beats the call overhead of the jitted one.
_JIT_THRESHOLD = 512


def fnv1a64_py(data: bytes, h: int = FNV64_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK
    return h


if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _fnv1a64_jit(buf, h):
        prime = np.uint64(FNV64_PRIME)
        for b in buf:
            h = (h ^ np.uint64(b)) * prime
        return h

    def fnv1a64(data: bytes, h: int = FNV64_OFFSET) -> int:
        if len(data) < _JIT_THRESHOLD:
            return fnv1a64_py(data, h)
        buf = np.frombuffer(data, dtype=np.uint8)
        return int(_fnv1a64_jit(buf, np.uint64(h)))

else:  # pragma: no cover
    fnv1a64 = fnv1a64_py


def hexdigest(h: int) -> str:
    return f"{h:016x}"
