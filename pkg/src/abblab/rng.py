"""Counter-based random streams keyed by ``(seed, trial, node path)``.

Every draw is a pure function of a 64-bit node key and a draw index, so a
trial's outcome does not depend on the order in which its genealogical tree
is explored, nor on which thread runs it.  Keys are derived with the
SplitMix64 finaliser; child keys hash the parent key with the child's index.
"""

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always", cache=True)
def root_key(seed, trial):
    return mix64(mix64(np.uint64(seed) + _GOLDEN) ^ (np.uint64(trial) * _GOLDEN + _M2))


@nb.njit(inline="always", cache=True)
def child_key(key, index):
    return mix64(key ^ mix64(np.uint64(index + 1) * _GOLDEN + _M1))


@nb.njit(inline="always", cache=True)
def uniform(key, draw):
    """Uniform on the open interval (0, 1) with 53 random bits."""
    z = mix64(key + _GOLDEN * np.uint64(draw + 1))
    return (np.float64(z >> _S11) + 0.5) * _INV53


def node_key(seed: int, trial: int, path=()) -> int:
    """Key of the node reached from the root by the child indices in ``path``."""
    key = root_key(np.uint64(seed), np.uint64(trial))
    for i in path:
        key = child_key(np.uint64(key), np.int64(i))
    return int(key)


def draws(seed: int, trial: int, path=(), count: int = 8) -> np.ndarray:
    """The first ``count`` uniforms of a node, for inspection and testing."""
    key = np.uint64(node_key(seed, trial, path))
    return np.array([uniform(key, j) for j in range(count)])
