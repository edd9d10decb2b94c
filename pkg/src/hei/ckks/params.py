"""CKKS parameter sets: ring dimension, modulus chain, scale, security profile.

The modulus chain is declared as a list of prime bit sizes, top of the chain
first (the top prime is the last one remaining after all rescales).  Actual
primes are resolved deterministically: the smallest primes congruent to
1 mod 2R above 2^(bits-1), so a declared bit size b yields a prime of exactly
b bits.  Middle primes declared at ``scale_bits + 1`` sit just above the scale,
which keeps rescaling nearly scale-neutral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

__all__ = [
    "CkksParams",
    "ParameterError",
    "default_chain",
    "chain_for_depth",
    "fnv1a32",
]

DEFAULT_SCALE_BITS = 40
TOP_PRIME_BITS = 60
MIDDLE_PRIME_BITS = DEFAULT_SCALE_BITS + 1
SPECIAL_PRIME_BITS = 60

# depth of the default chain per ring dimension
_DEFAULT_DEPTH = {8192: 4, 16384: 8, 32768: 12}


class ParameterError(ValueError):
    """Invalid CKKS parameter combination."""


def fnv1a32(text: str) -> int:
    """32-bit FNV-1a hash of a string (used as the params fingerprint)."""
    h = 0x811C9DC5
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def _is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 2^64."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@lru_cache(maxsize=None)
def _ntt_primes(ring_dim: int, bit_size: int, count: int, skip: int) -> tuple[int, ...]:
    """The `count` smallest b-bit primes p = 1 mod 2R, skipping the first `skip`.

    Searching upward from 2^(b-1) keeps the result deterministic for a given
    (ring_dim, bit_size), so both protocol endpoints resolve identical primes.
    """
    step = 2 * ring_dim
    found: list[int] = []
    p = (1 << (bit_size - 1)) + 1
    if (p - 1) % step:
        p += step - (p - 1) % step
    skipped = 0
    while len(found) < count:
        if p >= (1 << bit_size):
            raise ParameterError(
                f"not enough {bit_size}-bit NTT primes for ring dimension {ring_dim}"
            )
        if _is_prime(p):
            if skipped < skip:
                skipped += 1
            else:
                found.append(p)
        p += step
    return tuple(found)


def default_chain(ring_dim: int) -> tuple[int, ...]:
    """Default modulus-chain bit sizes for a production ring dimension."""
    depth = _DEFAULT_DEPTH.get(ring_dim, 4)
    return chain_for_depth(ring_dim, depth)


def chain_for_depth(ring_dim: int, depth: int) -> tuple[int, ...]:
    """Chain supporting `depth` rescaling multiplications: one top prime plus
    `depth` primes just above the scale."""
    del ring_dim
    if depth < 0:
        raise ParameterError("depth must be non-negative")
    return (TOP_PRIME_BITS,) + (MIDDLE_PRIME_BITS,) * depth


@dataclass(frozen=True)
class CkksParams:
    """Scheme parameters shared by both backends.

    `modulus_chain` lists prime bit sizes top-first; a fresh ciphertext sits at
    level ``len(modulus_chain) - 1`` and each rescaling multiplication drops the
    level by one.
    """

    ring_dim: int
    modulus_chain: tuple[int, ...]
    scale_bits: int = DEFAULT_SCALE_BITS
    security_profile: str = "256-bit"

    def __post_init__(self) -> None:
        r = self.ring_dim
        if r < 8 or r & (r - 1):
            raise ParameterError(f"ring_dim must be a power of two >= 8, got {r}")
        if not self.modulus_chain:
            raise ParameterError("modulus_chain must not be empty")
        object.__setattr__(self, "modulus_chain", tuple(self.modulus_chain))
        smallest = min(self.modulus_chain)
        if self.scale_bits >= smallest:
            raise ParameterError(
                f"scale 2^{self.scale_bits} must be below the smallest chain "
                f"modulus (2^{smallest})"
            )

    @classmethod
    def default(cls, ring_dim: int = 8192, depth: int | None = None,
                profile: str = "256-bit") -> "CkksParams":
        chain = default_chain(ring_dim) if depth is None else chain_for_depth(ring_dim, depth)
        return cls(ring_dim=ring_dim, modulus_chain=chain, security_profile=profile)

    @property
    def slot_count(self) -> int:
        return self.ring_dim // 2

    @property
    def scale(self) -> float:
        return float(1 << self.scale_bits)

    @property
    def max_level(self) -> int:
        return len(self.modulus_chain) - 1

    @property
    def depth_budget(self) -> int:
        return len(self.modulus_chain) - 1

    def canonical_string(self) -> str:
        chain = ",".join(str(b) for b in self.modulus_chain)
        return (
            f"R={self.ring_dim};chain={chain};scale={self.scale_bits};"
            f"profile={self.security_profile}"
        )

    @property
    def params_hash(self) -> int:
        return fnv1a32(self.canonical_string())

    def primes(self) -> tuple[int, ...]:
        """Resolved chain primes, top-first, all distinct."""
        out: list[int] = []
        for bits in self.modulus_chain:
            same_bits_before = sum(1 for i, b in enumerate(self.modulus_chain)
                                   if b == bits and i < len(out))
            out.append(_ntt_primes(self.ring_dim, bits, same_bits_before + 1, 0)[-1])
        return tuple(out)

    def special_primes(self) -> tuple[int, ...]:
        """Auxiliary primes for key switching; their product exceeds the full
        chain modulus so switched keys add negligible noise."""
        total_bits = sum(self.modulus_chain)
        count = -(-total_bits // (SPECIAL_PRIME_BITS - 1))
        skip = sum(1 for b in self.modulus_chain if b == SPECIAL_PRIME_BITS)
        return _ntt_primes(self.ring_dim, SPECIAL_PRIME_BITS, count, skip)

    def validate_depth(self, required_depth: int, stage: str = "pipeline") -> None:
        if required_depth + 1 > len(self.modulus_chain):
            raise ParameterError(
                f"{stage} needs multiplicative depth {required_depth} but the "
                f"modulus chain has only {len(self.modulus_chain)} primes "
                f"(need {required_depth + 1})"
            )
