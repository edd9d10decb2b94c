"""Canonical-embedding slot codec for the lattice backend.

Slot j of a plaintext corresponds to the polynomial evaluated at zeta^(5^j)
(zeta a primitive 2R-th root of unity); the remaining R/2 evaluation points
are the conjugates, which forces real coefficients.  With this slot order the
automorphism X -> X^(5^i) is exactly a left rotation of the slots by i.

Implemented with one length-R complex FFT per direction: evaluation at all
odd powers of zeta factors into a coefficient twist by zeta^m followed by a
standard DFT.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["SlotCodec", "rotation_galois_element", "automorphism_coeff_perm"]


def rotation_galois_element(step: int, ring_dim: int) -> int:
    """Galois element implementing a left slot rotation by `step`."""
    return pow(5, step % (ring_dim // 2), 2 * ring_dim)


@lru_cache(maxsize=None)
def automorphism_coeff_perm(ring_dim: int, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient-domain action of X -> X^g: target index and sign arrays.

    tau(a)[m*g mod R] = +/- a[m], the sign flipping when m*g mod 2R >= R.
    """
    m = np.arange(ring_dim, dtype=np.int64)
    t = (m * g) % (2 * ring_dim)
    sign = np.where(t < ring_dim, 1, -1).astype(np.int64)
    return (t % ring_dim).astype(np.int64), sign


class SlotCodec:
    """Float encode/decode between B = R/2 complex slots and R real coefficients."""

    def __init__(self, ring_dim: int) -> None:
        self.ring_dim = ring_dim
        self.slot_count = ring_dim // 2
        two_r = 2 * ring_dim
        exps = np.empty(self.slot_count, dtype=np.int64)
        e = 1
        for j in range(self.slot_count):
            exps[j] = e
            e = e * 5 % two_r
        self._fft_idx = (exps - 1) // 2
        self._conj_idx = (two_r - exps - 1) // 2
        m = np.arange(ring_dim)
        self._twist = np.exp(1j * np.pi * m / ring_dim)
        self._untwist = np.conj(self._twist)

    def encode(self, slots: np.ndarray, scale: float) -> np.ndarray:
        """Slot values -> integer coefficient vector at the given scale."""
        z = np.asarray(slots, dtype=np.complex128)
        if z.size != self.slot_count:
            raise ValueError(f"expected {self.slot_count} slots, got {z.size}")
        spectrum = np.zeros(self.ring_dim, dtype=np.complex128)
        spectrum[self._fft_idx] = z * scale
        spectrum[self._conj_idx] = np.conj(z) * scale
        coeffs = np.fft.fft(spectrum) / self.ring_dim * self._untwist
        return np.round(coeffs.real).astype(np.int64)

    def decode(self, coeffs: np.ndarray, scale: float) -> np.ndarray:
        """Real coefficient vector -> complex slot values."""
        b = np.asarray(coeffs, dtype=np.float64) * self._twist
        spectrum = np.fft.ifft(b) * self.ring_dim
        return spectrum[self._fft_idx] / scale

    def max_encodable(self, scale: float) -> float:
        # int64 headroom for the scaled coefficients
        return float(2**62) / scale


@lru_cache(maxsize=None)
def slot_codec(ring_dim: int) -> SlotCodec:
    return SlotCodec(ring_dim)
