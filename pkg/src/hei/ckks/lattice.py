"""Lattice CKKS backend: ring-LWE encryption over Z_q[X]/(X^R + 1).

Ciphertexts live in double-CRT form: one uint64 residue row per chain prime,
kept permanently in NTT evaluation order, so additions and plaintext products
are pure pointwise kernels.  Key switching (relinearization and rotation)
uses a set of auxiliary primes whose product exceeds the full chain modulus;
the switched component is lifted to the extended basis by fast base
conversion, multiplied against the switching key, and divided back down.

Rotations inside `rotate_sum` / `rotate_mult_sum` are hoisted: the expensive
lift of the input is done once, each step is a slot permutation plus pointwise
products, and the division by the auxiliary modulus happens once on the
accumulated sum.  This is what makes the full encrypted pipeline tractable on
one core.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from hei.ckks import ntt
from hei.ckks.backend import (
    Ciphertext,
    KeyMaterial,
    Plaintext,
    PublicMaterial,
    SecretKey,
    _EvaluatorBase,
    _normalize_values,
)
from hei.ckks.embedding import automorphism_coeff_perm, rotation_galois_element, slot_codec
from hei.ckks.params import CkksParams, _ntt_primes
from hei.errors import IncompatibleError, LevelError, ScaleError

__all__ = ["LatticeBackend", "LatticeEvaluator", "ring_context"]

NOISE_STDDEV = 3.2


@dataclass
class EncodedPlain:
    """Eval-domain plaintext residues, with reciprocals for fast products."""

    coeffs: np.ndarray            # int64 [R] signed, coefficient domain
    rows: np.ndarray              # uint64 [l+1, R] mod q_0..q_l
    shoup: np.ndarray
    ext: np.ndarray | None = None        # uint64 [ns, R] mod special primes
    ext_shoup: np.ndarray | None = None


@dataclass
class CtBody:
    c0: np.ndarray                # uint64 [l+1, R] eval domain
    c1: np.ndarray


@dataclass
class SecretBody:
    coeffs: np.ndarray            # int64 [R] ternary
    rows: np.ndarray              # uint64 [nq+ns, R] eval, all primes
    shoup: np.ndarray


@dataclass
class PkBody:
    b: np.ndarray                 # uint64 [nq, R]
    a: np.ndarray


@dataclass
class KskBody:
    b: np.ndarray                 # uint64 [nq+ns, R]
    a: np.ndarray


class RingContext:
    """Cached per-parameter tables, constants and permutations."""

    def __init__(self, params: CkksParams) -> None:
        self.params = params
        self.ring_dim = params.ring_dim
        self.q_primes = params.primes()
        self.s_primes = params.special_primes()
        self.all_primes = self.q_primes + self.s_primes
        self.nq = len(self.q_primes)
        self.ns = len(self.s_primes)
        self.tables = ntt.build_tables(self.ring_dim, self.all_primes)
        self.primes_arr = np.array(self.all_primes, dtype=np.uint64)
        self.codec = slot_codec(self.ring_dim)
        self.aux_modulus = 1
        for p in self.s_primes:
            self.aux_modulus *= p
        self._const_cache: dict = {}
        self._perm_cache: dict[int, np.ndarray] = {}
        exps = ntt.eval_order_exponents(self.ring_dim, self.q_primes[0])
        inv = np.zeros(4 * self.ring_dim, dtype=np.int64)
        for i, t in enumerate(exps):
            inv[t] = i
        self._eval_exponents = np.array(exps, dtype=np.int64)
        self._eval_exp_to_idx = inv

    # -- row bookkeeping -------------------------------------------------

    def q_rows(self, level: int) -> np.ndarray:
        return np.arange(level + 1, dtype=np.int64)

    def ks_rows(self, level: int) -> np.ndarray:
        return np.concatenate([
            np.arange(level + 1, dtype=np.int64),
            np.arange(self.nq, self.nq + self.ns, dtype=np.int64),
        ])

    def special_rows(self) -> np.ndarray:
        return np.arange(self.nq, self.nq + self.ns, dtype=np.int64)

    def primes_of(self, rows: np.ndarray) -> np.ndarray:
        return self.primes_arr[rows]

    # -- NTT helpers -------------------------------------------------------

    def ntt_rows(self, a: np.ndarray, rows: np.ndarray) -> None:
        t = self.tables
        ntt.ntt_batch_rows(a, rows, t.primes, t.psi_rev, t.psi_shoup)

    def intt_rows(self, a: np.ndarray, rows: np.ndarray) -> None:
        t = self.tables
        ntt.intt_batch_rows(a, rows, t.primes, t.ipsi_rev, t.ipsi_shoup,
                            t.n_inv, t.n_inv_shoup)

    def to_eval(self, coeffs: np.ndarray, rows: np.ndarray) -> np.ndarray:
        out = np.empty((rows.size, self.ring_dim), dtype=np.uint64)
        ntt.reduce_signed_batch(out, coeffs.astype(np.int64), self.primes_of(rows))
        self.ntt_rows(out, rows)
        return out

    # -- automorphism ------------------------------------------------------

    def eval_perm(self, galois: int) -> np.ndarray:
        perm = self._perm_cache.get(galois)
        if perm is None:
            t = self._eval_exponents
            perm = self._eval_exp_to_idx[(t * galois) % (2 * self.ring_dim)]
            perm = np.ascontiguousarray(perm, dtype=np.int64)
            self._perm_cache[galois] = perm
        return perm

    # -- constant tables -----------------------------------------------------

    def _shoup_scalars(self, values: list[int], primes: list[int]):
        arr = np.array(values, dtype=np.uint64)
        sh = np.array([(v << 64) // p for v, p in zip(values, primes)], dtype=np.uint64)
        return arr, sh

    def fbc_q_to_special(self, level: int):
        """Constants converting residues mod q_0..q_l into the special basis."""
        key = ("q2s", level)
        if key not in self._const_cache:
            src = self.q_primes[: level + 1]
            big_q = 1
            for p in src:
                big_q *= p
            inv = [pow(big_q // p, -1, p) for p in src]
            inv_arr, inv_sh = self._shoup_scalars(inv, list(src))
            mat = np.empty((len(src), self.ns), dtype=np.uint64)
            mat_sh = np.empty_like(mat)
            for j, qj in enumerate(src):
                frac = big_q // qj
                for t, pt in enumerate(self.s_primes):
                    c = frac % pt
                    mat[j, t] = c
                    mat_sh[j, t] = (c << 64) // pt
            self._const_cache[key] = (inv_arr, inv_sh, mat, mat_sh)
        return self._const_cache[key]

    def fbc_special_to_q(self, level: int):
        key = ("s2q", level)
        if key not in self._const_cache:
            inv = [pow(self.aux_modulus // p, -1, p) for p in self.s_primes]
            inv_arr, inv_sh = self._shoup_scalars(inv, list(self.s_primes))
            tgt = self.q_primes[: level + 1]
            mat = np.empty((self.ns, len(tgt)), dtype=np.uint64)
            mat_sh = np.empty_like(mat)
            for j, pj in enumerate(self.s_primes):
                frac = self.aux_modulus // pj
                for t, qt in enumerate(tgt):
                    c = frac % qt
                    mat[j, t] = c
                    mat_sh[j, t] = (c << 64) // qt
            self._const_cache[key] = (inv_arr, inv_sh, mat, mat_sh)
        return self._const_cache[key]

    def aux_inverse(self, level: int):
        """P^-1 mod q_t for t <= level."""
        key = ("pinv", level)
        if key not in self._const_cache:
            tgt = self.q_primes[: level + 1]
            vals = [pow(self.aux_modulus % p, -1, p) for p in tgt]
            self._const_cache[key] = self._shoup_scalars(vals, list(tgt))
        return self._const_cache[key]

    def aux_factor_q(self):
        """P mod q_t for every chain prime (key generation factor)."""
        key = ("pmod",)
        if key not in self._const_cache:
            vals = [self.aux_modulus % p for p in self.all_primes]
            self._const_cache[key] = self._shoup_scalars(vals, list(self.all_primes))
        return self._const_cache[key]

    def rescale_inverse(self, level: int):
        """q_level^-1 mod q_t for t < level."""
        key = ("rinv", level)
        if key not in self._const_cache:
            dropped = self.q_primes[level]
            tgt = self.q_primes[:level]
            vals = [pow(dropped % p, -1, p) for p in tgt]
            self._const_cache[key] = self._shoup_scalars(vals, list(tgt))
        return self._const_cache[key]

    def crt_constants(self, level: int):
        key = ("crt", level)
        if key not in self._const_cache:
            primes = self.q_primes[: level + 1]
            big_q = 1
            for p in primes:
                big_q *= p
            consts = [(big_q // p) * pow(big_q // p, -1, p) for p in primes]
            self._const_cache[key] = (consts, big_q, big_q // 2)
        return self._const_cache[key]


@lru_cache(maxsize=None)
def ring_context(params: CkksParams) -> RingContext:
    return RingContext(params)


def _gauss_poly(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.round(rng.normal(0.0, NOISE_STDDEV, n)).astype(np.int64)


def _ternary_poly(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(-1, 2, n).astype(np.int64)


def _uniform_rows(rng: np.random.Generator, primes: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((primes.size, n), dtype=np.uint64)
    for k, p in enumerate(primes):
        out[k] = rng.integers(0, int(p), n, dtype=np.uint64)
    return out


class LatticeBackend:
    """Real CKKS encryption; slot semantics match the exact backend within
    the documented noise tolerances."""

    name = "lattice"

    def keygen(self, params: CkksParams, rotation_steps, seed: int | None = None) -> KeyMaterial:
        ctx = ring_context(params)
        rng = np.random.default_rng(seed)
        all_rows = np.arange(ctx.nq + ctx.ns, dtype=np.int64)
        q_rows = ctx.q_rows(params.max_level)

        s_coeff = _ternary_poly(rng, ctx.ring_dim)
        s_rows = ctx.to_eval(s_coeff, all_rows)
        s_shoup = ntt.shoup_of(s_rows, ctx.primes_arr)
        secret = SecretKey(body=SecretBody(s_coeff, s_rows, s_shoup),
                           params_hash=params.params_hash, backend=self.name)

        # public key mod the chain primes only
        a = _uniform_rows(rng, ctx.primes_of(q_rows), ctx.ring_dim)
        e = ctx.to_eval(_gauss_poly(rng, ctx.ring_dim), q_rows)
        b = np.empty_like(a)
        nq_primes = ctx.primes_of(q_rows)
        ntt.mul_shoup_batch(b, a, s_rows[: ctx.nq], s_shoup[: ctx.nq], nq_primes)
        ntt.neg_batch(b, b, nq_primes)
        ntt.add_batch(b, b, e, nq_primes)
        public_key = PkBody(b=b, a=a)

        def make_ksk(target_rows: np.ndarray) -> KskBody:
            ka = _uniform_rows(rng, ctx.primes_arr, ctx.ring_dim)
            ke = ctx.to_eval(_gauss_poly(rng, ctx.ring_dim), all_rows)
            kb = np.empty_like(ka)
            ntt.mul_shoup_batch(kb, ka, s_rows, s_shoup, ctx.primes_arr)
            ntt.neg_batch(kb, kb, ctx.primes_arr)
            ntt.add_batch(kb, kb, ke, ctx.primes_arr)
            pmod, pmod_sh = ctx.aux_factor_q()
            lifted = np.empty_like(target_rows)
            ntt.scalar_mul_shoup_batch(lifted, target_rows, pmod, pmod_sh, ctx.primes_arr)
            ntt.add_batch(kb, kb, lifted, ctx.primes_arr)
            return KskBody(b=kb, a=ka)

        s_sq = np.empty_like(s_rows)
        s_sq_sh = s_shoup
        ntt.mul_shoup_batch(s_sq, s_rows, s_rows, s_sq_sh, ctx.primes_arr)
        relin = make_ksk(s_sq)

        galois: dict[int, KskBody] = {}
        for step in sorted({int(s) % params.slot_count for s in rotation_steps} - {0}):
            g = rotation_galois_element(step, ctx.ring_dim)
            tgt, sign = automorphism_coeff_perm(ctx.ring_dim, g)
            tau_s = np.zeros(ctx.ring_dim, dtype=np.int64)
            tau_s[tgt] = s_coeff * sign
            galois[step] = make_ksk(ctx.to_eval(tau_s, all_rows))

        public = PublicMaterial(params=params, public_key=public_key,
                                relin_key=relin, galois_keys=galois,
                                backend=self.name)
        return KeyMaterial(secret=secret, public=public)

    # -- encode / decode ----------------------------------------------------

    def encode(self, values, params: CkksParams, level: int | None = None,
               scale: float | None = None) -> Plaintext:
        ctx = ring_context(params)
        level = params.max_level if level is None else level
        scale = params.scale if scale is None else scale
        slots = _normalize_values(values, params.slot_count)
        coeffs = ctx.codec.encode(slots, scale)
        rows = ctx.to_eval(coeffs, ctx.q_rows(level))
        shoup = ntt.shoup_of(rows, ctx.primes_of(ctx.q_rows(level)))
        return Plaintext(body=EncodedPlain(coeffs=coeffs, rows=rows, shoup=shoup),
                         scale=scale, level=level,
                         params_hash=params.params_hash, backend=self.name)

    def decode(self, pt: Plaintext) -> np.ndarray:
        if isinstance(pt.body, np.ndarray):
            return pt.body.copy()
        codec = slot_codec(pt.body.coeffs.size)
        return codec.decode(pt.body.coeffs.astype(np.float64), pt.scale).real

    # -- encrypt / decrypt ----------------------------------------------------

    def encrypt(self, keys: KeyMaterial | PublicMaterial, pt: Plaintext,
                valid_slots: int | None = None,
                rng: np.random.Generator | None = None) -> Ciphertext:
        public = keys.public if isinstance(keys, KeyMaterial) else keys
        if public.params_hash != pt.params_hash:
            raise IncompatibleError("plaintext was encoded under different parameters")
        params = public.params
        ctx = ring_context(params)
        rng = rng or np.random.default_rng()
        rows = ctx.q_rows(pt.level)
        primes = ctx.primes_of(rows)

        u = ctx.to_eval(_ternary_poly(rng, ctx.ring_dim), rows)
        u_sh = ntt.shoup_of(u, primes)
        e0 = ctx.to_eval(_gauss_poly(rng, ctx.ring_dim), rows)
        e1 = ctx.to_eval(_gauss_poly(rng, ctx.ring_dim), rows)
        pk: PkBody = public.public_key
        c0 = np.empty_like(u)
        c1 = np.empty_like(u)
        ntt.mul_shoup_batch(c0, pk.b[rows], u, u_sh, primes)
        ntt.add_batch(c0, c0, e0, primes)
        ntt.add_batch(c0, c0, pt.body.rows, primes)
        ntt.mul_shoup_batch(c1, pk.a[rows], u, u_sh, primes)
        ntt.add_batch(c1, c1, e1, primes)
        return Ciphertext(body=CtBody(c0=c0, c1=c1), scale=pt.scale, level=pt.level,
                          valid_slots=params.slot_count if valid_slots is None else valid_slots,
                          params_hash=pt.params_hash, backend=self.name)

    def decrypt(self, keys: KeyMaterial | SecretKey, ct: Ciphertext) -> Plaintext:
        secret = keys.secret if isinstance(keys, KeyMaterial) else keys
        if secret.params_hash != ct.params_hash:
            raise IncompatibleError("ciphertext was produced under different parameters")
        if isinstance(keys, KeyMaterial):
            params = keys.params
        else:
            params = _PARAMS_BY_HASH.get(ct.params_hash)
            if params is None:
                raise IncompatibleError("unknown parameter set for ciphertext")
        ctx = ring_context(params)
        rows = ctx.q_rows(ct.level)
        primes = ctx.primes_of(rows)
        body: CtBody = ct.body
        phase = np.empty_like(body.c0)
        sk: SecretBody = secret.body
        ntt.mul_shoup_batch(phase, body.c1, sk.rows[rows], sk.shoup[rows], primes)
        ntt.add_batch(phase, phase, body.c0, primes)
        ctx.intt_rows(phase, rows)
        coeffs = _crt_center(ctx, phase, ct.level)
        slots = ctx.codec.decode(coeffs, ct.scale).real
        return Plaintext(body=slots, scale=ct.scale, level=ct.level,
                         params_hash=ct.params_hash, backend=self.name)


# Params registry so decode/decrypt can find the ring context for an object
# that only carries the 32-bit hash.
_PARAMS_BY_HASH: dict[int, CkksParams] = {}


_backend_ring_context = ring_context


def register_params(params: CkksParams) -> CkksParams:
    _PARAMS_BY_HASH[params.params_hash] = params
    return params


def _crt_center(ctx: RingContext, rows: np.ndarray, level: int) -> np.ndarray:
    """Exact centered CRT reconstruction of coefficient residues, as floats."""
    consts, big_q, half = ctx.crt_constants(level)
    cols = [rows[j].tolist() for j in range(level + 1)]
    out = np.empty(ctx.ring_dim, dtype=np.float64)
    for i in range(ctx.ring_dim):
        x = 0
        for j, c in enumerate(consts):
            x += cols[j][i] * c
        x %= big_q
        if x > half:
            x -= big_q
        out[i] = x
    return out


class LatticeEvaluator(_EvaluatorBase):
    """Homomorphic evaluation over lattice ciphertexts."""

    backend_name = "lattice"

    def __init__(self, params: CkksParams, public: PublicMaterial) -> None:
        if public.backend != "lattice":
            raise IncompatibleError("key material belongs to a different backend")
        super().__init__(params, public)
        register_params(params)
        self.ctx = ring_context(params)
        self._backend = LatticeBackend()

    # -- plaintext preparation -------------------------------------------------

    def prepare(self, values, level: int, scale: float | None = None,
                for_mult: bool = True, extended: bool = False) -> Plaintext:
        """Encode an operand at a level.  Multiplicative operands are encoded
        at the scale of the prime the following rescale drops, which keeps the
        declared scale exact through pl_mult."""
        if isinstance(values, Plaintext):
            return values
        ctx = self.ctx
        if scale is None:
            scale = float(ctx.q_primes[level]) if for_mult else self.params.scale
        slots = _normalize_values(values, self.params.slot_count)
        coeffs = ctx.codec.encode(slots, scale)
        rows = ctx.q_rows(level)
        res = ctx.to_eval(coeffs, rows)
        shoup = ntt.shoup_of(res, ctx.primes_of(rows))
        ext = ext_sh = None
        if extended:
            srows = ctx.special_rows()
            ext = ctx.to_eval(coeffs, srows)
            ext_sh = ntt.shoup_of(ext, ctx.primes_of(srows))
        return Plaintext(body=EncodedPlain(coeffs=coeffs, rows=res, shoup=shoup,
                                           ext=ext, ext_shoup=ext_sh),
                         scale=scale, level=level,
                         params_hash=self.params.params_hash, backend="lattice")

    # -- structural helpers ---------------------------------------------------

    def level_drop(self, ct: Ciphertext, level: int) -> Ciphertext:
        if level > ct.level:
            raise LevelError(f"cannot raise level {ct.level} to {level}")
        if level == ct.level:
            return ct
        body: CtBody = ct.body
        n = level + 1
        return replace(ct, body=CtBody(c0=body.c0[:n].copy(), c1=body.c1[:n].copy()),
                       level=level)

    def _rescale(self, rows: np.ndarray, level: int) -> np.ndarray:
        """Drop prime q_level from a component; exact centered rounding."""
        ctx = self.ctx
        last = rows[level: level + 1].copy()
        ctx.intt_rows(last, np.array([level], dtype=np.int64))
        tgt_rows = ctx.q_rows(level - 1)
        primes = ctx.primes_of(tgt_rows)
        folded = np.empty((level, ctx.ring_dim), dtype=np.uint64)
        ntt.center_reduce_row(folded, last[0], np.uint64(ctx.q_primes[level]), primes)
        ctx.ntt_rows(folded, tgt_rows)
        out = np.empty_like(folded)
        ntt.sub_batch(out, rows[:level], folded, primes)
        qinv, qinv_sh = ctx.rescale_inverse(level)
        ntt.scalar_mul_shoup_batch(out, out, qinv, qinv_sh, primes)
        return out

    def _lift_to_special(self, rows: np.ndarray, level: int) -> np.ndarray:
        """Fast base conversion of a coefficient-domain batch into the special
        basis (returns coefficient-domain rows)."""
        ctx = self.ctx
        inv, inv_sh, mat, mat_sh = ctx.fbc_q_to_special(level)
        y = np.empty_like(rows)
        ntt.scalar_mul_shoup_batch(y, rows, inv, inv_sh, ctx.primes_of(ctx.q_rows(level)))
        out = np.empty((ctx.ns, ctx.ring_dim), dtype=np.uint64)
        ntt.base_convert(out, y, mat, mat_sh, ctx.primes_of(ctx.special_rows()))
        return out

    def _div_aux(self, ext_rows: np.ndarray, level: int) -> np.ndarray:
        """Divide an extended-basis component by the auxiliary modulus."""
        ctx = self.ctx
        nq = level + 1
        sp = ext_rows[nq:].copy()
        ctx.intt_rows(sp, ctx.special_rows())
        inv, inv_sh, mat, mat_sh = ctx.fbc_special_to_q(level)
        y = np.empty_like(sp)
        ntt.scalar_mul_shoup_batch(y, sp, inv, inv_sh, ctx.primes_of(ctx.special_rows()))
        q_rows = ctx.q_rows(level)
        primes = ctx.primes_of(q_rows)
        fbc = np.empty((nq, ctx.ring_dim), dtype=np.uint64)
        ntt.base_convert(fbc, y, mat, mat_sh, primes)
        ctx.ntt_rows(fbc, q_rows)
        out = np.empty_like(fbc)
        ntt.sub_batch(out, ext_rows[:nq], fbc, primes)
        pinv, pinv_sh = ctx.aux_inverse(level)
        ntt.scalar_mul_shoup_batch(out, out, pinv, pinv_sh, primes)
        return out

    def _hoist(self, c1: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Extend c1 to the key-switching basis; returns (ext, ext_shoup)."""
        ctx = self.ctx
        nq = level + 1
        coeff = c1.copy()
        ctx.intt_rows(coeff, ctx.q_rows(level))
        sp = self._lift_to_special(coeff, level)
        ctx.ntt_rows(sp, ctx.special_rows())
        ext = np.concatenate([c1, sp], axis=0)
        ext_sh = ntt.shoup_of(ext, ctx.primes_of(ctx.ks_rows(level)))
        return ext, ext_sh

    def _accumulate_rotations(self, ct: Ciphertext, steps, plaintexts=None,
                              include_identity: bool = False) -> Ciphertext:
        """Hoisted sum over rotations, optionally with per-step plaintext factors.

        Computes sum_i pt_i * rotate(ct, step_i) (pt_i == 1 when plaintexts is
        None), performing the key-switch lift once and the division by the
        auxiliary modulus once on the accumulated sum.
        """
        ctx = self.ctx
        level = ct.level
        body: CtBody = ct.body
        q_rows = ctx.q_rows(level)
        ks_rows = ctx.ks_rows(level)
        q_primes = ctx.primes_of(q_rows)
        ks_primes = ctx.primes_of(ks_rows)
        with_plain = plaintexts is not None
        if with_plain and ct.level < 1:
            raise LevelError("modulus chain exhausted: plaintext product at level 0")

        ext, ext_sh = self._hoist(body.c1, level)
        nq = level + 1
        shape_ext = (nq + ctx.ns, ctx.ring_dim)
        shape_q = (nq, ctx.ring_dim)
        t0 = np.zeros(shape_ext, dtype=np.uint64)
        t1 = np.zeros(shape_ext, dtype=np.uint64)
        acc0 = np.zeros(shape_q, dtype=np.uint64)
        acc1 = np.zeros(shape_q, dtype=np.uint64)
        scratch_ext = np.empty(shape_ext, dtype=np.uint64)
        scratch_q = np.empty(shape_q, dtype=np.uint64)
        used_ks = False
        terms = 0

        def bump_term(kind: str | None) -> None:
            nonlocal terms
            if kind:
                self.ops.bump(kind)
            if terms:
                self.ops.bump("add")
            terms += 1

        def add_identity_term(pt: Plaintext | None) -> None:
            if pt is not None:
                epl: EncodedPlain = pt.body
                ntt.mul_shoup_batch(scratch_q, body.c0, epl.rows[:nq], epl.shoup[:nq],
                                    q_primes)
                ntt.add_batch(acc0, acc0, scratch_q, q_primes)
                ntt.mul_shoup_batch(scratch_q, body.c1, epl.rows[:nq], epl.shoup[:nq],
                                    q_primes)
                ntt.add_batch(acc1, acc1, scratch_q, q_primes)
                bump_term("pl_mult")
            else:
                ntt.add_batch(acc0, acc0, body.c0, q_primes)
                ntt.add_batch(acc1, acc1, body.c1, q_primes)
                bump_term(None)

        if include_identity:
            add_identity_term(None)

        for idx, step in enumerate(steps):
            step_n = self._galois_step(step)
            pt = plaintexts[idx] if with_plain else None
            if step_n == 0:
                add_identity_term(pt)
                continue
            ksk: KskBody = self.public.galois_keys[step_n]
            g = rotation_galois_element(step_n, ctx.ring_dim)
            perm = ctx.eval_perm(g)
            if pt is not None:
                epl = pt.body
                if epl.ext is None:
                    raise ValueError("plaintext not prepared for the extended basis")
                pt_ext = np.concatenate([epl.rows[:nq], epl.ext], axis=0)
                pt_ext_sh = np.concatenate([epl.shoup[:nq], epl.ext_shoup], axis=0)
                # tau(ext) * ksk, then * plaintext, accumulated mod P*Q
                ntt.gather_mul_shoup_batch(scratch_ext, ksk.b[ks_rows], ext, ext_sh,
                                           perm, ks_primes)
                ntt.addmul_shoup_batch(t0, scratch_ext, pt_ext, pt_ext_sh, ks_primes)
                ntt.gather_mul_shoup_batch(scratch_ext, ksk.a[ks_rows], ext, ext_sh,
                                           perm, ks_primes)
                ntt.addmul_shoup_batch(t1, scratch_ext, pt_ext, pt_ext_sh, ks_primes)
                # tau(c0) * plaintext into the chain-basis accumulator
                ntt.gather_batch(scratch_q, body.c0, perm)
                ntt.addmul_shoup_batch(acc0, scratch_q, epl.rows[:nq], epl.shoup[:nq],
                                       q_primes)
                self.ops.bump("rotate")
                bump_term("pl_mult")
            else:
                ntt.gather_addmul_shoup_batch(t0, ksk.b[ks_rows], ext, ext_sh,
                                              perm, ks_primes)
                ntt.gather_addmul_shoup_batch(t1, ksk.a[ks_rows], ext, ext_sh,
                                              perm, ks_primes)
                ntt.gather_add_batch(acc0, body.c0, perm, q_primes)
                bump_term("rotate")
            used_ks = True

        if used_ks:
            out0 = self._div_aux(t0, level)
            out1 = self._div_aux(t1, level)
            ntt.add_batch(out0, out0, acc0, q_primes)
            ntt.add_batch(out1, out1, acc1, q_primes)
        else:
            out0, out1 = acc0, acc1

        scale = ct.scale
        if with_plain:
            out0 = self._rescale(out0, level)
            out1 = self._rescale(out1, level)
            level -= 1
        return Ciphertext(body=CtBody(c0=out0, c1=out1), scale=scale, level=level,
                          valid_slots=self.params.slot_count,
                          params_hash=ct.params_hash, backend="lattice")

    # -- primitive operations ---------------------------------------------------

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_hash(a, b)
        a, b = self._align_pair(a, b)
        primes = self.ctx.primes_of(self.ctx.q_rows(a.level))
        c0 = np.empty_like(a.body.c0)
        c1 = np.empty_like(a.body.c1)
        ntt.add_batch(c0, a.body.c0, b.body.c0, primes)
        ntt.add_batch(c1, a.body.c1, b.body.c1, primes)
        self.ops.bump("add")
        return Ciphertext(body=CtBody(c0=c0, c1=c1), scale=a.scale, level=a.level,
                          valid_slots=min(a.valid_slots, b.valid_slots),
                          params_hash=a.params_hash, backend="lattice")

    def pl_add(self, ct: Ciphertext, values) -> Ciphertext:
        self._check_hash(ct)
        pt = self.prepare(values, ct.level, scale=ct.scale, for_mult=False)
        if pt.level != ct.level:
            raise LevelError("plaintext level does not match ciphertext")
        if abs(pt.scale - ct.scale) > 1e-6 * ct.scale:
            raise ScaleError("plaintext scale does not match ciphertext for addition")
        primes = self.ctx.primes_of(self.ctx.q_rows(ct.level))
        c0 = np.empty_like(ct.body.c0)
        ntt.add_batch(c0, ct.body.c0, pt.body.rows, primes)
        self.ops.bump("pl_add")
        return replace(ct, body=CtBody(c0=c0, c1=ct.body.c1.copy()))

    def mult(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_hash(a, b)
        a, b = self._align_pair(a, b)
        self._require_depth(a, "ciphertext multiplication")
        ctx = self.ctx
        level = a.level
        q_rows = ctx.q_rows(level)
        primes = ctx.primes_of(q_rows)
        b0_sh = ntt.shoup_of(b.body.c0, primes)
        b1_sh = ntt.shoup_of(b.body.c1, primes)
        d0 = np.empty_like(a.body.c0)
        d1 = np.empty_like(a.body.c0)
        d2 = np.empty_like(a.body.c0)
        tmp = np.empty_like(a.body.c0)
        ntt.mul_shoup_batch(d0, a.body.c0, b.body.c0, b0_sh, primes)
        ntt.mul_shoup_batch(d1, a.body.c0, b.body.c1, b1_sh, primes)
        ntt.mul_shoup_batch(tmp, a.body.c1, b.body.c0, b0_sh, primes)
        ntt.add_batch(d1, d1, tmp, primes)
        ntt.mul_shoup_batch(d2, a.body.c1, b.body.c1, b1_sh, primes)
        ks0, ks1 = self._keyswitch(d2, self.public.relin_key, level)
        ntt.add_batch(d0, d0, ks0, primes)
        ntt.add_batch(d1, d1, ks1, primes)
        c0 = self._rescale(d0, level)
        c1 = self._rescale(d1, level)
        self.ops.bump("mult")
        return Ciphertext(body=CtBody(c0=c0, c1=c1), scale=a.scale, level=level - 1,
                          valid_slots=min(a.valid_slots, b.valid_slots),
                          params_hash=a.params_hash, backend="lattice")

    def pl_mult(self, ct: Ciphertext, values) -> Ciphertext:
        self._check_hash(ct)
        self._require_depth(ct, "plaintext multiplication")
        pt = self.prepare(values, ct.level, for_mult=True)
        if pt.level != ct.level:
            raise LevelError("plaintext level does not match ciphertext")
        ctx = self.ctx
        primes = ctx.primes_of(ctx.q_rows(ct.level))
        epl: EncodedPlain = pt.body
        d0 = np.empty_like(ct.body.c0)
        d1 = np.empty_like(ct.body.c1)
        ntt.mul_shoup_batch(d0, ct.body.c0, epl.rows, epl.shoup, primes)
        ntt.mul_shoup_batch(d1, ct.body.c1, epl.rows, epl.shoup, primes)
        c0 = self._rescale(d0, ct.level)
        c1 = self._rescale(d1, ct.level)
        self.ops.bump("pl_mult")
        return Ciphertext(body=CtBody(c0=c0, c1=c1), scale=ct.scale, level=ct.level - 1,
                          valid_slots=ct.valid_slots, params_hash=ct.params_hash,
                          backend="lattice")

    def rotate(self, ct: Ciphertext, step: int) -> Ciphertext:
        self._check_hash(ct)
        step = self._galois_step(step)
        if step == 0:
            return replace(ct, body=CtBody(c0=ct.body.c0.copy(), c1=ct.body.c1.copy()))
        ctx = self.ctx
        level = ct.level
        g = rotation_galois_element(step, ctx.ring_dim)
        perm = ctx.eval_perm(g)
        q_rows = ctx.q_rows(level)
        q_primes = ctx.primes_of(q_rows)
        ks_rows = ctx.ks_rows(level)
        ks_primes = ctx.primes_of(ks_rows)
        ext, ext_sh = self._hoist(ct.body.c1, level)
        ksk: KskBody = self.public.galois_keys[step]
        t0 = np.empty((ks_rows.size, ctx.ring_dim), dtype=np.uint64)
        t1 = np.empty_like(t0)
        ntt.gather_mul_shoup_batch(t0, ksk.b[ks_rows], ext, ext_sh, perm, ks_primes)
        ntt.gather_mul_shoup_batch(t1, ksk.a[ks_rows], ext, ext_sh, perm, ks_primes)
        out0 = self._div_aux(t0, level)
        out1 = self._div_aux(t1, level)
        tau_c0 = np.empty_like(ct.body.c0)
        ntt.gather_batch(tau_c0, ct.body.c0, perm)
        ntt.add_batch(out0, out0, tau_c0, q_primes)
        self.ops.bump("rotate")
        return Ciphertext(body=CtBody(c0=out0, c1=out1), scale=ct.scale, level=level,
                          valid_slots=self.params.slot_count,
                          params_hash=ct.params_hash, backend="lattice")

    def _keyswitch(self, comp: np.ndarray, ksk: KskBody, level: int):
        ctx = self.ctx
        ext, ext_sh = self._hoist(comp, level)
        ks_rows = ctx.ks_rows(level)
        ks_primes = ctx.primes_of(ks_rows)
        t0 = np.empty((ks_rows.size, ctx.ring_dim), dtype=np.uint64)
        t1 = np.empty_like(t0)
        ntt.mul_shoup_batch(t0, ksk.b[ks_rows], ext, ext_sh, ks_primes)
        ntt.mul_shoup_batch(t1, ksk.a[ks_rows], ext, ext_sh, ks_primes)
        return self._div_aux(t0, level), self._div_aux(t1, level)

    # -- fused rotation sums -----------------------------------------------------

    def rotate_sum(self, ct: Ciphertext, steps, include_identity: bool = True) -> Ciphertext:
        for step in steps:
            self._galois_step(step)
        return self._accumulate_rotations(ct, steps, plaintexts=None,
                                          include_identity=include_identity)

    def rotate_mult_sum(self, ct: Ciphertext, steps, plaintexts) -> Ciphertext:
        if len(steps) != len(plaintexts):
            raise ValueError("steps and plaintexts must pair up")
        for step in steps:
            self._galois_step(step)
        return self._accumulate_rotations(ct, steps, plaintexts=list(plaintexts))
