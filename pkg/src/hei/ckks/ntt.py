"""Negacyclic NTT kernels over word-sized primes.

All hot loops are numba-compiled and use Shoup multiplication: every product
pairs a variable operand with a factor whose 64-bit reciprocal was
precomputed, so no 128-bit division appears on the fast path.  Tables are
built once per (ring_dim, prime) and reused.

Layout convention: polynomial batches are C-contiguous uint64 arrays of shape
(n_primes, ring_dim); row i is the residue polynomial modulo primes[i].
Forward transforms take natural coefficient order to the internal evaluation
order; inverse transforms undo it.  All pointwise kernels operate in whatever
order both operands share.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, uint64

_M32 = uint64(0xFFFFFFFF)


@njit(uint64(uint64, uint64), cache=True, inline="always")
def _umulhi(a, b):
    a0 = a & _M32
    a1 = a >> uint64(32)
    b0 = b & _M32
    b1 = b >> uint64(32)
    lo = a0 * b0
    mid1 = a1 * b0
    mid2 = a0 * b1
    carry = ((lo >> uint64(32)) + (mid1 & _M32) + (mid2 & _M32)) >> uint64(32)
    return a1 * b1 + (mid1 >> uint64(32)) + (mid2 >> uint64(32)) + carry


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def _mulmod_shoup(x, w, w_shoup, p):
    # r = x*w mod p given w_shoup = floor(w * 2^64 / p); valid for any x < 2^64,
    # w < p < 2^63.  Result is fully reduced.
    q = _umulhi(x, w_shoup)
    r = x * w - q * p
    if r >= p:
        r -= p
    return r


@njit(cache=True)
def shoup_precompute(w: np.ndarray, p: uint64, out: np.ndarray) -> None:
    """out[i] = floor(w[i] * 2^64 / p), float-seeded with exact correction."""
    inv = 1.0 / p
    scale = 4294967296.0  # 2^32
    for i in range(w.size):
        x = w[i]
        q_hi = uint64(x * scale * inv)
        r = (x << uint64(32)) - q_hi * p
        while r >= (uint64(1) << uint64(63)):  # underflow: q_hi too big
            r += p
            q_hi -= uint64(1)
        while r >= p:
            r -= p
            q_hi += uint64(1)
        q_lo = uint64(r * scale * inv)
        r2 = (r << uint64(32)) - q_lo * p
        while r2 >= (uint64(1) << uint64(63)):
            r2 += p
            q_lo -= uint64(1)
        while r2 >= p:
            r2 -= p
            q_lo += uint64(1)
        out[i] = (q_hi << uint64(32)) + q_lo


@njit(cache=True)
def _ntt_row(a, psi_rev, psi_shoup, p):
    n = a.size
    t = n
    m = 1
    while m < n:
        t >>= 1
        for i in range(m):
            w = psi_rev[m + i]
            wsh = psi_shoup[m + i]
            j1 = 2 * i * t
            for j in range(j1, j1 + t):
                u = a[j]
                v = _mulmod_shoup(a[j + t], w, wsh, p)
                s = u + v
                if s >= p:
                    s -= p
                d = u - v
                if d > u:  # wrapped below zero
                    d += p
                a[j] = s
                a[j + t] = d
        m <<= 1


@njit(cache=True)
def _intt_row(a, ipsi_rev, ipsi_shoup, n_inv, n_inv_shoup, p):
    n = a.size
    t = 1
    m = n
    while m > 1:
        h = m >> 1
        j1 = 0
        for i in range(h):
            w = ipsi_rev[h + i]
            wsh = ipsi_shoup[h + i]
            for j in range(j1, j1 + t):
                u = a[j]
                v = a[j + t]
                s = u + v
                if s >= p:
                    s -= p
                d = u - v
                if d > u:
                    d += p
                a[j] = s
                a[j + t] = _mulmod_shoup(d, w, wsh, p)
            j1 += 2 * t
        t <<= 1
        m = h
    for j in range(n):
        a[j] = _mulmod_shoup(a[j], n_inv, n_inv_shoup, p)


@njit(cache=True)
def ntt_batch(a, primes, psi_rev, psi_shoup):
    for k in range(a.shape[0]):
        _ntt_row(a[k], psi_rev[k], psi_shoup[k], primes[k])


@njit(cache=True)
def intt_batch(a, primes, ipsi_rev, ipsi_shoup, n_inv, n_inv_shoup):
    for k in range(a.shape[0]):
        _intt_row(a[k], ipsi_rev[k], ipsi_shoup[k], n_inv[k], n_inv_shoup[k], primes[k])


@njit(cache=True)
def ntt_batch_rows(a, rows, primes_full, psi_rev_full, psi_shoup_full):
    """Forward transform where batch row k belongs to prime index rows[k]."""
    for k in range(a.shape[0]):
        t = rows[k]
        _ntt_row(a[k], psi_rev_full[t], psi_shoup_full[t], primes_full[t])


@njit(cache=True)
def intt_batch_rows(a, rows, primes_full, ipsi_rev_full, ipsi_shoup_full,
                    n_inv_full, n_inv_shoup_full):
    for k in range(a.shape[0]):
        t = rows[k]
        _intt_row(a[k], ipsi_rev_full[t], ipsi_shoup_full[t],
                  n_inv_full[t], n_inv_shoup_full[t], primes_full[t])


@njit(cache=True)
def add_batch(out, a, b, primes):
    for k in range(a.shape[0]):
        p = primes[k]
        for j in range(a.shape[1]):
            s = a[k, j] + b[k, j]
            if s >= p:
                s -= p
            out[k, j] = s


@njit(cache=True)
def sub_batch(out, a, b, primes):
    for k in range(a.shape[0]):
        p = primes[k]
        for j in range(a.shape[1]):
            d = a[k, j] - b[k, j]
            if d > a[k, j]:
                d += p
            out[k, j] = d


@njit(cache=True)
def neg_batch(out, a, primes):
    for k in range(a.shape[0]):
        p = primes[k]
        for j in range(a.shape[1]):
            out[k, j] = p - a[k, j] if a[k, j] else uint64(0)


@njit(cache=True)
def mul_shoup_batch(out, x, w, w_shoup, primes):
    """out = x * w mod p elementwise; w carries the precomputed reciprocals."""
    for k in range(x.shape[0]):
        p = primes[k]
        for j in range(x.shape[1]):
            out[k, j] = _mulmod_shoup(x[k, j], w[k, j], w_shoup[k, j], p)


@njit(cache=True)
def addmul_shoup_batch(acc, x, w, w_shoup, primes):
    """acc += x * w mod p elementwise."""
    for k in range(x.shape[0]):
        p = primes[k]
        for j in range(x.shape[1]):
            t = _mulmod_shoup(x[k, j], w[k, j], w_shoup[k, j], p)
            s = acc[k, j] + t
            if s >= p:
                s -= p
            acc[k, j] = s


@njit(cache=True)
def gather_batch(out, a, perm):
    for k in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[k, j] = a[k, perm[j]]


@njit(cache=True)
def gather_mul_shoup_batch(out, x, w, w_shoup, perm, primes):
    """out = x * w[:, perm] mod p: fused automorphism gather and key product.

    The Shoup reciprocals belong to `w` (the hoisted, permuted side)."""
    for k in range(x.shape[0]):
        p = primes[k]
        for j in range(x.shape[1]):
            out[k, j] = _mulmod_shoup(x[k, j], w[k, perm[j]], w_shoup[k, perm[j]], p)


@njit(cache=True)
def gather_addmul_shoup_batch(acc, x, w, w_shoup, perm, primes):
    """acc += x * w[:, perm] mod p."""
    for k in range(x.shape[0]):
        p = primes[k]
        for j in range(x.shape[1]):
            t = _mulmod_shoup(x[k, j], w[k, perm[j]], w_shoup[k, perm[j]], p)
            s = acc[k, j] + t
            if s >= p:
                s -= p
            acc[k, j] = s


@njit(cache=True)
def gather_add_batch(acc, a, perm, primes):
    """acc += a[:, perm] mod p."""
    for k in range(a.shape[0]):
        p = primes[k]
        for j in range(a.shape[1]):
            s = acc[k, j] + a[k, perm[j]]
            if s >= p:
                s -= p
            acc[k, j] = s


@njit(cache=True)
def scalar_mul_shoup_batch(out, x, w, w_shoup, primes):
    """out = x * w[k] mod p, one constant per prime row."""
    for k in range(x.shape[0]):
        p = primes[k]
        wk = w[k]
        wsk = w_shoup[k]
        for j in range(x.shape[1]):
            out[k, j] = _mulmod_shoup(x[k, j], wk, wsk, p)


@njit(cache=True)
def base_convert(out, y, consts, consts_shoup, primes_out):
    """out[t] = sum_j y[j] * consts[j, t] mod primes_out[t].

    `y` holds source residues already multiplied by the per-source inverse
    factors; the sum approximates the integer value up to a small multiple of
    the source modulus (standard fast base conversion).
    """
    n_src = y.shape[0]
    n = y.shape[1]
    for t in range(out.shape[0]):
        p = primes_out[t]
        for j in range(n):
            out[t, j] = uint64(0)
        for s in range(n_src):
            c = consts[s, t]
            csh = consts_shoup[s, t]
            for j in range(n):
                v = _mulmod_shoup(y[s, j], c, csh, p)
                acc = out[t, j] + v
                if acc >= p:
                    acc -= p
                out[t, j] = acc


@njit(cache=True)
def reduce_signed_batch(out, coeffs, primes):
    """Residues of signed int64 coefficients per prime row."""
    for k in range(out.shape[0]):
        p = np.int64(primes[k])
        for j in range(coeffs.size):
            r = coeffs[j] % p
            if r < 0:
                r += p
            out[k, j] = uint64(r)


@njit(cache=True)
def center_reduce_row(out, row, p_src, primes_out):
    """Center row mod p_src into (-p/2, p/2], then reduce into each target row."""
    half = p_src >> uint64(1)
    for j in range(row.size):
        x = row[j]
        if x > half:
            for t in range(out.shape[0]):
                p = primes_out[t]
                d = (p_src - x) % p
                out[t, j] = (p - d) % p
        else:
            for t in range(out.shape[0]):
                out[t, j] = x % primes_out[t]


def primitive_root_2n(n: int, p: int) -> int:
    """A primitive 2n-th root of unity modulo p (p = 1 mod 2n)."""
    order = 2 * n
    cofactor = (p - 1) // order
    g = 2
    while True:
        candidate = pow(g, cofactor, p)
        if pow(candidate, n, p) == p - 1:  # order exactly 2n
            return candidate
        g += 1
        if g > 10000:
            raise ValueError(f"no primitive 2n-th root found for p={p}")


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@dataclass
class NttTables:
    """Per-prime twiddle tables for one ring dimension."""

    ring_dim: int
    primes: np.ndarray          # uint64 [k]
    psi_rev: np.ndarray         # uint64 [k, n]
    psi_shoup: np.ndarray
    ipsi_rev: np.ndarray
    ipsi_shoup: np.ndarray
    n_inv: np.ndarray           # uint64 [k]
    n_inv_shoup: np.ndarray


@lru_cache(maxsize=None)
def _tables_for_prime(ring_dim: int, p: int) -> tuple:
    n = ring_dim
    psi = primitive_root_2n(n, p)
    ipsi = pow(psi, -1, p)
    rev = _bit_reverse_indices(n)
    pw = np.empty(n, dtype=np.uint64)
    ipw = np.empty(n, dtype=np.uint64)
    x = y = 1
    for i in range(n):
        pw[i] = x
        ipw[i] = y
        x = x * psi % p
        y = y * ipsi % p
    psi_rev = pw[rev].copy()
    ipsi_rev = ipw[rev].copy()
    psi_shoup = np.empty(n, dtype=np.uint64)
    ipsi_shoup = np.empty(n, dtype=np.uint64)
    shoup_precompute(psi_rev, np.uint64(p), psi_shoup)
    shoup_precompute(ipsi_rev, np.uint64(p), ipsi_shoup)
    n_inv = pow(n, -1, p)
    n_inv_shoup = (n_inv << 64) // p
    return psi_rev, psi_shoup, ipsi_rev, ipsi_shoup, n_inv, n_inv_shoup


def build_tables(ring_dim: int, primes: tuple[int, ...]) -> NttTables:
    k = len(primes)
    n = ring_dim
    t = NttTables(
        ring_dim=ring_dim,
        primes=np.array(primes, dtype=np.uint64),
        psi_rev=np.empty((k, n), dtype=np.uint64),
        psi_shoup=np.empty((k, n), dtype=np.uint64),
        ipsi_rev=np.empty((k, n), dtype=np.uint64),
        ipsi_shoup=np.empty((k, n), dtype=np.uint64),
        n_inv=np.empty(k, dtype=np.uint64),
        n_inv_shoup=np.empty(k, dtype=np.uint64),
    )
    for i, p in enumerate(primes):
        pr, ps, ir, ish, ninv, ninvsh = _tables_for_prime(ring_dim, p)
        t.psi_rev[i] = pr
        t.psi_shoup[i] = ps
        t.ipsi_rev[i] = ir
        t.ipsi_shoup[i] = ish
        t.n_inv[i] = ninv
        t.n_inv_shoup[i] = ninvsh
    return t


def shoup_of(arr: np.ndarray, primes: np.ndarray) -> np.ndarray:
    """Reciprocal table for a [k, n] residue batch."""
    out = np.empty_like(arr)
    for k in range(arr.shape[0]):
        shoup_precompute(arr[k], primes[k], out[k])
    return out


@lru_cache(maxsize=None)
def eval_order_exponents(ring_dim: int, probe_prime: int) -> tuple[int, ...]:
    """Exponent t_i such that forward-NTT output index i holds p(psi^t_i).

    Derived empirically by transforming the monomial X and taking discrete
    logs against the prime's psi-power table; the index ordering is algorithm
    dependent but identical across primes.
    """
    n = ring_dim
    p = probe_prime
    psi = primitive_root_2n(n, p)
    dlog: dict[int, int] = {}
    x = 1
    for t in range(2 * n):
        dlog[x] = t
        x = x * psi % p
    a = np.zeros((1, n), dtype=np.uint64)
    a[0, 1] = 1  # the monomial X
    tables = build_tables(n, (p,))
    ntt_batch(a, tables.primes, tables.psi_rev, tables.psi_shoup)
    return tuple(dlog[int(v)] for v in a[0])
