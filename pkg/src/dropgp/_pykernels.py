"""numpy fallback for the compiled kernels in ``_ckernels.pyx``."""
import numpy as np

BACKEND = "numpy"

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


# uint64 arithmetic wraps by design
@np.errstate(over="ignore")
def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@np.errstate(over="ignore")
def _units(keys, counters):
    raw = mix64(keys[:, None] + (counters[None, :] + np.uint64(1)) * GAMMA)
    return (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniform_grid(keys, start, d):
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.uint64(start) + np.arange(d, dtype=np.uint64)
    return _units(keys, counters)


def normal_grid(keys, start, d):
    keys = np.asarray(keys, dtype=np.uint64)
    c = np.uint64(start) + np.uint64(2) * np.arange(d, dtype=np.uint64)
    u1 = _units(keys, c)
    u2 = _units(keys, c + np.uint64(1))
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


def masked_layer(h, z, w, b, act, scale):
    a = (h * z) @ w + b
    if act == 1:
        a = np.maximum(a, 0.0)
    elif act == 2:
        a = np.tanh(a)
    if scale != 1.0:
        a = a * scale
    return a
