"""Scheme-level types and the exact slot-semantics backend.

Two interchangeable backends implement the same eight primitives: this
module's exact backend stores the raw slot vector (the deterministic test
oracle), while :mod:`hei.ckks.lattice` performs real ring-LWE encryption.
Level and scale bookkeeping is identical on both, so any straight-line
program can be cross-checked between them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from hei.ckks.params import CkksParams
from hei.errors import (
    CapacityError,
    IncompatibleError,
    LevelError,
    MissingKeyError,
    ScaleError,
)

__all__ = [
    "Plaintext",
    "Ciphertext",
    "SecretKey",
    "PublicMaterial",
    "KeyMaterial",
    "ExactBackend",
    "ExactEvaluator",
    "OpCounter",
]


@dataclass
class Plaintext:
    """Encoded slot vector at a scale and level."""

    body: object
    scale: float
    level: int
    params_hash: int
    backend: str


@dataclass
class Ciphertext:
    """Encrypted slot vector; `valid_slots` marks the meaningful prefix."""

    body: object
    scale: float
    level: int
    valid_slots: int
    params_hash: int
    backend: str

    def with_valid_slots(self, n: int) -> "Ciphertext":
        return replace(self, valid_slots=n)


@dataclass
class SecretKey:
    body: object
    params_hash: int
    backend: str


@dataclass
class PublicMaterial:
    """Everything the evaluating side may hold: by construction there is no
    secret-key field on this type."""

    params: CkksParams
    public_key: object
    relin_key: object
    galois_keys: dict[int, object]
    backend: str

    @property
    def params_hash(self) -> int:
        return self.params.params_hash

    def rotation_steps(self) -> set[int]:
        return set(self.galois_keys)


@dataclass
class KeyMaterial:
    """Client-side bundle: secret key plus the shareable public material."""

    secret: SecretKey
    public: PublicMaterial

    @property
    def params(self) -> CkksParams:
        return self.public.params


class OpCounter:
    """Thread-safe primitive-operation counter for structure assertions."""

    _FIELDS = ("add", "pl_add", "mult", "pl_mult", "rotate")

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.counts = {name: 0 for name in self._FIELDS}

    def bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            self.counts[name] += n

    def reset(self) -> None:
        with self._lock:
            for name in self._FIELDS:
                self.counts[name] = 0

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.counts)


def _normalize_values(values: Sequence[float] | np.ndarray, slot_count: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size > slot_count:
        raise CapacityError(
            f"{arr.size} values exceed the {slot_count} available slots"
        )
    if arr.size < slot_count:
        arr = np.concatenate([arr, np.zeros(slot_count - arr.size)])
    return arr


def _keyed_garbage(slots: np.ndarray, key_a: int, key_b: int) -> np.ndarray:
    # Wrong-key decryption on the lattice backend yields noise; mirror that
    # deterministically so negative tests behave the same on both backends.
    rng = np.random.default_rng((key_a * 0x9E3779B9 ^ key_b) & 0xFFFFFFFF)
    return rng.uniform(-1e6, 1e6, slots.shape)


class ExactBackend:
    """Cleartext slot semantics behind the encrypted interface."""

    name = "exact"

    def keygen(self, params: CkksParams, rotation_steps: Iterable[int],
               seed: int | None = None) -> KeyMaterial:
        rng = np.random.default_rng(seed)
        fingerprint = int(rng.integers(1, 1 << 62))
        secret = SecretKey(body=fingerprint, params_hash=params.params_hash,
                           backend=self.name)
        galois = {int(s) % params.slot_count: None for s in rotation_steps}
        galois.pop(0, None)
        public = PublicMaterial(params=params, public_key=fingerprint,
                                relin_key=fingerprint, galois_keys=galois,
                                backend=self.name)
        return KeyMaterial(secret=secret, public=public)

    def encode(self, values: Sequence[float] | np.ndarray, params: CkksParams,
               level: int | None = None, scale: float | None = None) -> Plaintext:
        slots = _normalize_values(values, params.slot_count)
        return Plaintext(body=slots, scale=scale or params.scale,
                         level=params.max_level if level is None else level,
                         params_hash=params.params_hash, backend=self.name)

    def decode(self, pt: Plaintext) -> np.ndarray:
        return np.asarray(pt.body, dtype=np.float64).copy()

    def encrypt(self, keys: KeyMaterial | PublicMaterial, pt: Plaintext,
                valid_slots: int | None = None) -> Ciphertext:
        public = keys.public if isinstance(keys, KeyMaterial) else keys
        if public.params_hash != pt.params_hash:
            raise IncompatibleError("plaintext was encoded under different parameters")
        slots = np.asarray(pt.body, dtype=np.float64).copy()
        return Ciphertext(body=(slots, public.public_key), scale=pt.scale,
                          level=pt.level,
                          valid_slots=slots.size if valid_slots is None else valid_slots,
                          params_hash=pt.params_hash, backend=self.name)

    def decrypt(self, keys: KeyMaterial | SecretKey, ct: Ciphertext) -> Plaintext:
        secret = keys.secret if isinstance(keys, KeyMaterial) else keys
        if secret.params_hash != ct.params_hash:
            raise IncompatibleError("ciphertext was produced under different parameters")
        slots, fingerprint = ct.body
        if fingerprint != secret.body:
            slots = _keyed_garbage(slots, fingerprint, secret.body)
        return Plaintext(body=slots.copy(), scale=ct.scale, level=ct.level,
                         params_hash=ct.params_hash, backend=self.name)


class _EvaluatorBase:
    """Shared level/scale bookkeeping and operation counting."""

    def __init__(self, params: CkksParams, public: PublicMaterial) -> None:
        if public.params_hash != params.params_hash:
            raise IncompatibleError("key material does not match parameters")
        self.params = params
        self.public = public
        self.ops = OpCounter()

    # -- bookkeeping helpers -------------------------------------------------

    def _check_hash(self, *objs) -> None:
        for obj in objs:
            if obj.params_hash != self.params.params_hash:
                raise IncompatibleError("operand built under different parameters")

    def _align_pair(self, a: Ciphertext, b: Ciphertext) -> tuple[Ciphertext, Ciphertext]:
        if a.level != b.level:
            target = min(a.level, b.level)
            a = self.level_drop(a, target)
            b = self.level_drop(b, target)
        if abs(a.scale - b.scale) > 1e-6 * a.scale:
            raise ScaleError(
                f"operand scales differ ({a.scale:g} vs {b.scale:g}); rescale first"
            )
        return a, b

    def _require_depth(self, ct: Ciphertext, op: str) -> None:
        if ct.level < 1:
            raise LevelError(
                f"modulus chain exhausted: {op} at level 0 has no prime left to rescale"
            )

    def _galois_step(self, step: int) -> int:
        step %= self.params.slot_count
        if step and step not in self.public.galois_keys:
            raise MissingKeyError(f"no Galois key for rotation step {step}")
        return step

    def prepare(self, values: Sequence[float] | np.ndarray, level: int,
                scale: float | None = None) -> Plaintext:
        """Encode a plaintext operand at an operating level (cacheable)."""
        raise NotImplementedError

    def level_drop(self, ct: Ciphertext, level: int) -> Ciphertext:
        raise NotImplementedError

    # -- composite ops shared by both backends --------------------------------

    def square(self, ct: Ciphertext) -> Ciphertext:
        return self.mult(ct, ct)

    def rotate_sum(self, ct: Ciphertext, steps: Sequence[int],
                   include_identity: bool = True) -> Ciphertext:
        """Sum of rotations of one ciphertext (plus the unrotated term)."""
        acc = ct if include_identity else self.rotate(ct, steps[0])
        rest = steps if include_identity else steps[1:]
        for step in rest:
            acc = self.add(acc, self.rotate(ct, step))
        return acc

    def rotate_mult_sum(self, ct: Ciphertext, steps: Sequence[int],
                        plaintexts: Sequence[np.ndarray | Plaintext]) -> Ciphertext:
        """Sum over i of plaintexts[i] * rotate(ct, steps[i]); one rescale."""
        if len(steps) != len(plaintexts):
            raise ValueError("steps and plaintexts must pair up")
        acc = None
        for step, pt in zip(steps, plaintexts):
            term = self.pl_mult(self.rotate(ct, step) if step else ct, pt)
            acc = term if acc is None else self.add(acc, term)
        if acc is None:
            raise ValueError("empty rotation sum")
        return acc


class ExactEvaluator(_EvaluatorBase):
    """Slot-exact evaluator; the oracle every lattice result is checked against."""

    backend_name = "exact"

    def __init__(self, params: CkksParams, public: PublicMaterial) -> None:
        if public.backend != "exact":
            raise IncompatibleError("key material belongs to a different backend")
        super().__init__(params, public)
        self._backend = ExactBackend()

    def prepare(self, values, level: int, scale: float | None = None) -> Plaintext:
        if isinstance(values, Plaintext):
            return values
        return self._backend.encode(values, self.params, level=level, scale=scale)

    def level_drop(self, ct: Ciphertext, level: int) -> Ciphertext:
        if level > ct.level:
            raise LevelError(f"cannot raise level {ct.level} to {level}")
        return replace(ct, level=level)

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_hash(a, b)
        a, b = self._align_pair(a, b)
        self.ops.bump("add")
        return Ciphertext(body=(a.body[0] + b.body[0], a.body[1]), scale=a.scale,
                          level=a.level, valid_slots=min(a.valid_slots, b.valid_slots),
                          params_hash=a.params_hash, backend=a.backend)

    def pl_add(self, ct: Ciphertext, values) -> Ciphertext:
        self._check_hash(ct)
        pt = self.prepare(values, ct.level, scale=ct.scale)
        self.ops.bump("pl_add")
        return replace(ct, body=(ct.body[0] + pt.body, ct.body[1]))

    def mult(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_hash(a, b)
        a, b = self._align_pair(a, b)
        self._require_depth(a, "ciphertext multiplication")
        self.ops.bump("mult")
        return Ciphertext(body=(a.body[0] * b.body[0], a.body[1]),
                          scale=self.params.scale, level=a.level - 1,
                          valid_slots=min(a.valid_slots, b.valid_slots),
                          params_hash=a.params_hash, backend=a.backend)

    def pl_mult(self, ct: Ciphertext, values) -> Ciphertext:
        self._check_hash(ct)
        self._require_depth(ct, "plaintext multiplication")
        pt = self.prepare(values, ct.level)
        self.ops.bump("pl_mult")
        return Ciphertext(body=(ct.body[0] * pt.body, ct.body[1]),
                          scale=self.params.scale, level=ct.level - 1,
                          valid_slots=ct.valid_slots, params_hash=ct.params_hash,
                          backend=ct.backend)

    def rotate(self, ct: Ciphertext, step: int) -> Ciphertext:
        self._check_hash(ct)
        step = self._galois_step(step)
        if step == 0:
            return replace(ct)
        self.ops.bump("rotate")
        return Ciphertext(body=(np.roll(ct.body[0], -step), ct.body[1]),
                          scale=ct.scale, level=ct.level,
                          valid_slots=self.params.slot_count,
                          params_hash=ct.params_hash, backend=ct.backend)
