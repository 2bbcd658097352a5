"""Counter-based random numbers.

All randomness in the package is a pure function of ``(seed, stream,
counter)``, so results do not depend on iteration order, chunking or the
backend.  The generator is SplitMix64 addressed by position::

    key   = fmix64(seed + stream * 0xD1B54A32D192ED03)
    word  = fmix64(key + (counter + 1) * 0x9E3779B97F4A7C15)

``fmix64`` is the SplitMix64 output finalizer.  Uniforms take the top 53
bits of a word and are centered in their cell, ``((word >> 11) + 0.5) /
2**53``, which keeps them strictly inside (0, 1).  Normal variates are the
inverse normal CDF of those uniforms (Wichura, AS 241, PPND16), accurate to
about 1e-16 relative.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

from ._accel import njit, use_numba

GOLDEN = 0x9E3779B97F4A7C15
STREAM_MULT = 0xD1B54A32D192ED03
_MASK64 = (1 << 64) - 1

# stream ids, one per consumer so that draws never collide
STREAM_NOISE = 1
STREAM_SHUFFLE = 2
STREAM_ANCHORS = 3
STREAM_ORACLE = 4
STREAM_FRAME = 5


def _fmix64_int(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """64-bit key of one ``(seed, stream)`` pair."""
    return _fmix64_int((int(seed) + int(stream) * STREAM_MULT) & _MASK64)


def word_at(seed: int, stream: int, counter: int) -> int:
    """Reference scalar implementation, used by tests as an oracle."""
    key = stream_key(seed, stream)
    return _fmix64_int((key + (int(counter) + 1) * GOLDEN) & _MASK64)


def frame_seed(seed: int, frame_id: str) -> int:
    """Per-frame seed derived from a corpus seed and the frame id.

    Numeric ids (KITTI ``000123``) map by value, anything else by CRC32, so
    the result does not depend on the order frames are processed in.
    """
    tag = int(frame_id) if frame_id.isdigit() else zlib.crc32(frame_id.encode("utf-8"))
    return word_at(seed, STREAM_FRAME, tag)


# ---------------------------------------------------------------- numpy path

def _fmix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _words_np(key: int, counters: np.ndarray) -> np.ndarray:
    c = counters.astype(np.uint64) + np.uint64(1)
    with np.errstate(over="ignore"):
        return _fmix64_np(np.uint64(key) + c * np.uint64(GOLDEN))


_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly_np(coef, x):
    out = np.full_like(x, coef[7])
    for c in coef[6::-1]:
        out = out * x + c
    return out


def normal_ppf_np(p: np.ndarray) -> np.ndarray:
    """Inverse standard normal CDF for p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly_np(_A, r) / _poly_np(_B, r)
    tail = ~central
    if tail.any():
        qt = q[tail]
        r = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _poly_np(_C, rn) / _poly_np(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _poly_np(_E, rf) / _poly_np(_F, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def _uniforms_np(key: int, counters: np.ndarray) -> np.ndarray:
    w = _words_np(key, counters)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------- numba path

@njit
def _fmix64_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit
def _poly_nb(coef, x):
    out = coef[7]
    for i in range(6, -1, -1):
        out = out * x + coef[i]
    return out


_A_ARR = np.array(_A)
_B_ARR = np.array(_B)
_C_ARR = np.array(_C)
_D_ARR = np.array(_D)
_E_ARR = np.array(_E)
_F_ARR = np.array(_F)


@njit
def _ppf_scalar_nb(p, a, b, c, d, e, f):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly_nb(a, r) / _poly_nb(b, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly_nb(c, r) / _poly_nb(d, r)
    else:
        r -= 5.0
        val = _poly_nb(e, r) / _poly_nb(f, r)
    return -val if q < 0.0 else val


@njit
def _uniforms_nb(key, counters, out):
    golden = np.uint64(0x9E3779B97F4A7C15)
    scale = 1.0 / 9007199254740992.0
    for i in range(counters.shape[0]):
        w = _fmix64_nb(key + (np.uint64(counters[i]) + np.uint64(1)) * golden)
        out[i] = (float(w >> np.uint64(11)) + 0.5) * scale


@njit
def _normals_nb(key, counters, out, a, b, c, d, e, f):
    _uniforms_nb(key, counters, out)
    for i in range(out.shape[0]):
        out[i] = _ppf_scalar_nb(out[i], a, b, c, d, e, f)


@njit
def _words_nb(key, counters, out):
    golden = np.uint64(0x9E3779B97F4A7C15)
    for i in range(counters.shape[0]):
        out[i] = _fmix64_nb(key + (np.uint64(counters[i]) + np.uint64(1)) * golden)


# ---------------------------------------------------------------- public API

def words(seed: int, stream: int, counters) -> np.ndarray:
    """Raw 64-bit words at the given counter positions."""
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    key = stream_key(seed, stream)
    if use_numba():
        out = np.empty(counters.shape[0], dtype=np.uint64)
        _words_nb(np.uint64(key), counters, out)
        return out
    return _words_np(key, counters)


def uniforms(seed: int, stream: int, counters) -> np.ndarray:
    """Uniform doubles in (0, 1) at the given counter positions."""
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    key = stream_key(seed, stream)
    if use_numba():
        out = np.empty(counters.shape[0], dtype=np.float64)
        _uniforms_nb(np.uint64(key), counters, out)
        return out
    return _uniforms_np(key, counters)


def normals(seed: int, stream: int, counters) -> np.ndarray:
    """Standard normal variates at the given counter positions."""
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    key = stream_key(seed, stream)
    if use_numba():
        out = np.empty(counters.shape[0], dtype=np.float64)
        _normals_nb(np.uint64(key), counters, out,
                    _A_ARR, _B_ARR, _C_ARR, _D_ARR, _E_ARR, _F_ARR)
        return out
    return normal_ppf_np(_uniforms_np(key, counters))


def poisson(lam: float, u: float) -> int:
    """Poisson draw by CDF inversion of one uniform (small ``lam`` only)."""
    if lam <= 0.0:
        return 0
    k, p = 0, math.exp(-lam)
    cdf = p
    while u > cdf and k < 10_000:
        k += 1
        p *= lam / k
        cdf += p
    return k
