"""Counter-based deterministic randomness.

Spike encoding needs draws that are reproducible and independent of
evaluation order, so instead of a stateful generator we hash the tuple
(seed, stream, time-step, counter) through the splitmix64 finalizer.  Any
single draw can then be regenerated in isolation, which keeps batched,
chunked, and serial simulations on identical spike trains.
"""

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_K1 = 0xBF58476D1CE4E5B9
_K2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 state advance + finalizer on a Python int."""
    x = (x + _GAMMA) & _MASK
    x = ((x ^ (x >> 30)) * _K1) & _MASK
    x = ((x ^ (x >> 27)) * _K2) & _MASK
    return x ^ (x >> 31)


def derive_seed(*parts: int) -> int:
    """Collapse (seed, index, ...) into one well-mixed 64-bit seed.

    Used wherever the spec calls for per-(class, sample) or per-(epoch,
    sample) streams, so that parallel and serial schedules agree.
    """
    h = 0
    for p in parts:
        h = mix64(h ^ (int(p) & _MASK))
    return h


def _finalize_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_K1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_K2)
        return z ^ (z >> np.uint64(31))


class CounterRng:
    """Stateless uniform generator keyed by (seed, stream).

    ``uniform(count, step)`` returns the same array no matter how many
    other draws happened before it; the value at index i is the splitmix64
    output for counter ``fold(seed, stream, step) + i``.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK
        self.stream = int(stream) & _MASK
        self._base = derive_seed(self.seed, self.stream)

    def uniform(self, count: int, step: int = 0) -> np.ndarray:
        """Uniform [0,1) draws for counters 0..count-1 at the given step."""
        start = derive_seed(self._base, step)
        with np.errstate(over="ignore"):
            states = np.uint64(start) + np.arange(count, dtype=np.uint64) * np.uint64(_GAMMA)
        h = _finalize_array(states)
        return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
