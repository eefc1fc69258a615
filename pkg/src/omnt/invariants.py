"""Invariant polynomial bases, exact moment tensors, Hilbert series, and the
analytic counting formulas (transcendence degrees, heterogeneous MRA and
cryo-EM feasibility counts).

Finite-group invariants carry exact Fraction coefficients; SO(3) invariants
are floating point (their Clebsch-Gordan factors are irrational).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import so3
from .poly import SparsePoly, monomial, monomial_from_indices
from .problem import ProblemSpec, Signal, group_elements, act, observe, \
    projection_matrix, symmetric_support

_COEFF_TOL = 1e-13


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvariantPolynomial:
    label: str
    degree: int
    poly: SparsePoly


@dataclass
class InvariantBasis:
    """Spanning set for the moment subspace U^T_{<=d} of a spec."""

    spec: ProblemSpec
    nvars: int
    degree_max: int
    polys: list
    exact: bool  # Fraction coefficients

    def __len__(self):
        return len(self.polys)

    def labels(self):
        return [f.label for f in self.polys]

    def evaluate(self, point: np.ndarray) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.nvars,):
            raise ValueError(f"point must have dimension {self.nvars}")
        return np.array([f.poly.eval_float(point) for f in self.polys])

    def to_json(self) -> str:
        return json.dumps({
            "spec_group": self.spec.group, "nvars": self.nvars,
            "degree_max": self.degree_max,
            "polys": [{
                "label": f.label, "degree": f.degree,
                "terms": [{"exponents": [[v, e] for v, e in m],
                           "coeff": float(c)} for m, c in f.poly.terms.items()],
            } for f in self.polys],
        })


@dataclass(frozen=True)
class MomentTensor:
    """Order-d symmetric tensor over distinct (sorted) multi-indices."""

    order: int
    q: int
    entries: dict          # sorted index tuple -> value
    provenance: str = "exact"
    variances: dict | None = None

    def get(self, *idx) -> float:
        return self.entries[tuple(sorted(idx))]

    def to_dense(self) -> np.ndarray:
        T = np.zeros((self.q,) * self.order)
        for idx, v in self.entries.items():
            for perm in set(itertools.permutations(idx)):
                T[perm] = v
        return T

    @classmethod
    def from_dense(cls, T: np.ndarray, provenance: str = "exact") -> "MomentTensor":
        order, q = T.ndim, T.shape[0]
        entries = {idx: float(T[idx])
                   for idx in itertools.combinations_with_replacement(range(q), order)}
        return cls(order=order, q=q, entries=entries, provenance=provenance)

    def max_abs_diff(self, other: "MomentTensor") -> float:
        return max(abs(self.entries[k] - other.entries[k]) for k in self.entries)


@dataclass(frozen=True)
class HilbertSeries:
    """dim R[x]^G_d for d = 0..d_max, plus the exact rational form.

    ``rational_terms`` lists (count, cycle_lengths) pairs: the series equals
    (1/group_order) * sum count / prod_c (1 - t^c).
    """

    coeffs: tuple
    pole_order: int
    group_order: int
    rational_terms: tuple


# ---------------------------------------------------------------------------
# Reynolds operator and finite-group bases
# ---------------------------------------------------------------------------

def _index_maps(spec: ProblemSpec) -> list:
    """For each g, the map i -> position of x_i in g . x (variable relabeling).

    g . x_i = x_{mu(i)} where mu comes from (g^{-1} x)_i.
    """
    maps = []
    if spec.group == "cyclic":
        for g in range(spec.p):
            maps.append(tuple((i + g) % spec.p for i in range(spec.p)))
    elif spec.group == "symmetric":
        for el in group_elements(spec):
            maps.append(el.perm)
    else:
        raise ValueError("Reynolds averaging needs a finite group")
    return maps


def _translate_mono(mono, index_map):
    return monomial(*((index_map[v], e) for v, e in mono))


def reynolds(spec: ProblemSpec, mono) -> SparsePoly:
    """Exact average of a monomial over all group translates.

    ``mono`` is a monomial as ((var, exp), ...) or an index tuple like (0, 0, 2)
    meaning x0^2 x2.
    """
    if mono and not isinstance(mono[0], tuple):
        mono = monomial_from_indices(mono)
    maps = _index_maps(spec)
    terms: dict = {}
    for im in maps:
        t = _translate_mono(mono, im)
        terms[t] = terms.get(t, 0) + 1
    n = len(maps)
    return SparsePoly({m: Fraction(c, n) for m, c in terms.items()})


def reynolds_poly(spec: ProblemSpec, poly: SparsePoly) -> SparsePoly:
    """Reynolds operator applied to a polynomial with exact coefficients."""
    maps = _index_maps(spec)
    out: dict = {}
    for im in maps:
        for m, c in poly.terms.items():
            t = _translate_mono(m, im)
            out[t] = out.get(t, 0) + Fraction(c)
    n = len(maps)
    return SparsePoly({m: c / n for m, c in out.items()})


def _monomial_orbit_rep(spec: ProblemSpec, indices: tuple) -> tuple:
    """Canonical representative of a monomial's orbit (as sorted index tuple)."""
    best = None
    for im in _index_maps(spec):
        cand = tuple(sorted(im[i] for i in indices))
        if best is None or cand < best:
            best = cand
    return best


def _mono_label(indices: tuple) -> str:
    parts = []
    for v, grp in itertools.groupby(indices):
        e = len(list(grp))
        parts.append(f"x{v + 1}^{e}" if e > 1 else f"x{v + 1}")
    return "R(" + "*".join(parts) + ")"


def _finite_plain_basis(spec: ProblemSpec, d: int) -> list:
    polys = []
    for e in range(1, d + 1):
        seen = set()
        for idx in itertools.combinations_with_replacement(range(spec.p), e):
            rep = _monomial_orbit_rep(spec, idx)
            if rep in seen:
                continue
            seen.add(rep)
            polys.append(InvariantPolynomial(_mono_label(rep), e,
                                             reynolds(spec, rep)))
    return polys


def _finite_projected_basis(spec: ProblemSpec, d: int) -> list:
    p, q = spec.p, spec.dim_observed
    proj_forms = [SparsePoly({((i, 1),): Fraction(1), ((p - 1 - i, 1),): Fraction(1)})
                  for i in range(q)]
    polys = []
    seen = set()
    for e in range(1, d + 1):
        for idx in itertools.combinations_with_replacement(range(q), e):
            prod = SparsePoly.constant(Fraction(1))
            for i in idx:
                prod = prod * proj_forms[i]
            f = reynolds_poly(spec, prod)
            key = f.canonical_key()
            if not f or key in seen:
                continue
            seen.add(key)
            label = f"T{e}(" + ",".join(str(i + 1) for i in idx) + ")"
            polys.append(InvariantPolynomial(label, e, f))
    return polys


# ---------------------------------------------------------------------------
# SO(3) invariants (unprojected I and projected P families)
# ---------------------------------------------------------------------------

def _clean_real(arr: np.ndarray, context: str) -> np.ndarray:
    scale = max(np.abs(arr).max(), 1.0)
    if np.abs(arr.imag).max() > 1e-9 * scale:
        raise ArithmeticError(f"{context}: expected real coefficients")
    return arr.real


def i2_poly(spec: ProblemSpec, s1: int, s2: int, l: int) -> SparsePoly:
    """Degree-2 invariant I2(s1, s2, l) as a polynomial in H coefficients."""
    dim = 2 * l + 1
    B = so3.basis_h_to_y(l)
    Q = np.zeros((dim, dim))
    for k in range(-l, l + 1):
        Q[k + l, -k + l] = (-1) ** k
    C = _clean_real(B.T @ Q @ B / (2 * l + 1), "I2")
    terms: dict = {}
    for a in range(dim):
        for b in range(dim):
            if abs(C[a, b]) < _COEFF_TOL:
                continue
            m = monomial((spec.so3_index(s1, l, a - l), 1),
                         (spec.so3_index(s2, l, b - l), 1))
            terms[m] = terms.get(m, 0.0) + C[a, b]
    return SparsePoly({m: c for m, c in terms.items() if abs(c) > _COEFF_TOL})


def _cg_coupling_tensor(l1: int, l2: int, l3: int) -> np.ndarray:
    """U[k1,k2,k3] = (-1)^{k1} <l2 k2 l3 k3 | l1 (-k1)> on k1+k2+k3 = 0."""
    U = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    for k2 in range(-l2, l2 + 1):
        for k3 in range(-l3, l3 + 1):
            k1 = -(k2 + k3)
            if abs(k1) > l1:
                continue
            U[k1 + l1, k2 + l2, k3 + l3] = \
                (-1) ** k1 * so3.clebsch_gordan(l2, k2, l3, k3, l1, -k1)
    return U


def i3_coeff_tensor(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real coefficient tensor of I3 over H-basis blocks (m1, m2, m3)."""
    U = _cg_coupling_tensor(l1, l2, l3) / (2 * l1 + 1)
    W = np.einsum("abc,am,bn,cp->mnp", U, so3.basis_h_to_y(l1),
                  so3.basis_h_to_y(l2), so3.basis_h_to_y(l3))
    return _clean_real(W, "I3")


def i3_poly(spec: ProblemSpec, slot1, slot2, slot3) -> SparsePoly:
    """Degree-3 invariant I3(s1,l1, s2,l2, s3,l3) in H coefficients."""
    (s1, l1), (s2, l2), (s3, l3) = slot1, slot2, slot3
    W = i3_coeff_tensor(l1, l2, l3)
    tol = _COEFF_TOL * max(np.abs(W).max(), 1.0)
    terms: dict = {}
    for (a, b, c), w in np.ndenumerate(W):
        if abs(w) < tol:
            continue
        m = monomial((spec.so3_index(s1, l1, a - l1), 1),
                     (spec.so3_index(s2, l2, b - l2), 1),
                     (spec.so3_index(s3, l3, c - l3), 1))
        terms[m] = terms.get(m, 0.0) + w
    return SparsePoly({m: v for m, v in terms.items() if abs(v) > tol})


def _triangle(l1: int, l2: int, l3: int) -> bool:
    return abs(l2 - l3) <= l1 <= l2 + l3


def i3_slot_triples(S: int, F: int):
    """Canonical (s, l) slot triples indexing the distinct nonzero I3."""
    slots = [(s, l) for s in range(1, S + 1) for l in range(1, F + 1)]
    for t in itertools.combinations_with_replacement(slots, 3):
        (s1, l1), (s2, l2), (s3, l3) = t
        if not _triangle(l1, l2, l3):
            continue
        if t[0] == t[1] == t[2] and l1 % 2 == 1:
            continue  # fully repeated slot with odd frequency vanishes
        if t[0] == t[1] != t[2] and l3 % 2 == 1:
            continue  # paired slots couple to even frequencies only
        if t[1] == t[2] != t[0] and l1 % 2 == 1:
            continue
        yield t


def p2_coeff(l: int, m: int) -> float:
    """Coefficient of I2(.,.,l) inside P2(.,.,m); zero unless parity matches."""
    nm = so3.sph_norm(l, m) * so3.legendre_p0_signed(l, m)
    nmneg = so3.sph_norm(l, -m) * so3.legendre_p0_signed(l, -m)
    return (-1) ** m * nm * nmneg


def p2_poly(spec: ProblemSpec, s1: int, s2: int, m: int) -> SparsePoly:
    out = SparsePoly.zero()
    for l in range(max(abs(m), 1), spec.freqs + 1):
        c = p2_coeff(l, m)
        if abs(c) > _COEFF_TOL:
            out = out + i2_poly(spec, s1, s2, l).scale(c)
    return out


def p3_poly(spec: ProblemSpec, slot1, slot2, slot3) -> SparsePoly:
    """Projected degree-3 invariant P3(s1,m1, s2,m2, s3,m3)."""
    (s1, m1), (s2, m2), (s3, m3) = slot1, slot2, slot3
    F = spec.freqs
    out = SparsePoly.zero()
    for l1 in range(max(abs(m1), 1), F + 1):
        if (l1 + m1) % 2:
            continue
        for l2 in range(max(abs(m2), 1), F + 1):
            if (l2 + m2) % 2:
                continue
            for l3 in range(max(abs(m3), 1), F + 1):
                if (l3 + m3) % 2 or not _triangle(l1, l2, l3):
                    continue
                cg = so3.clebsch_gordan(l2, m2, l3, m3, l1, -m1)
                if cg == 0.0:
                    continue
                c = ((-1) ** m1
                     * so3.sph_norm(l1, m1) * so3.sph_norm(l2, m2) * so3.sph_norm(l3, m3)
                     * so3.legendre_p0_signed(l1, m1) * so3.legendre_p0_signed(l2, m2)
                     * so3.legendre_p0_signed(l3, m3) * cg)
                if abs(c) < _COEFF_TOL:
                    continue
                out = out + i3_poly(spec, (s1, l1), (s2, l2), (s3, l3)).scale(c)
    return out


def x_class_reps(S: int, F: int):
    """Canonical representatives of X(S, F): (s, m) slot triples with
    m1+m2+m3 = 0, modulo slot permutation and simultaneous m negation."""
    reps = set()
    for s_tuple in itertools.product(range(1, S + 1), repeat=3):
        for m1 in range(-F, F + 1):
            for m2 in range(-F, F + 1):
                m3 = -(m1 + m2)
                if abs(m3) > F:
                    continue
                slots = list(zip(s_tuple, (m1, m2, m3)))
                cand1 = tuple(sorted(slots))
                cand2 = tuple(sorted((s, -m) for s, m in slots))
                reps.add(min(cand1, cand2))
    return sorted(reps)


def _so3_basis(spec: ProblemSpec, d: int) -> list:
    S, F = spec.shells, spec.freqs
    polys = []
    if spec.projection == "none":
        if d >= 2:
            for s1 in range(1, S + 1):
                for s2 in range(s1, S + 1):
                    for l in range(1, F + 1):
                        polys.append(InvariantPolynomial(
                            f"I2({s1},{s2},{l})", 2, i2_poly(spec, s1, s2, l)))
        if d >= 3:
            for t in i3_slot_triples(S, F):
                f = i3_poly(spec, *t)
                if f:
                    label = "I3(" + ";".join(f"{s},{l}" for s, l in t) + ")"
                    polys.append(InvariantPolynomial(label, 3, f))
    else:
        if d >= 2:
            for s1 in range(1, S + 1):
                for s2 in range(s1, S + 1):
                    for m in range(0, F + 1):
                        f = p2_poly(spec, s1, s2, m)
                        if f:
                            polys.append(InvariantPolynomial(
                                f"P2({s1},{s2},{m})", 2, f))
        if d >= 3:
            for t in x_class_reps(S, F):
                f = p3_poly(spec, *t)
                if f:
                    label = "P3(" + ";".join(f"{s},{m}" for s, m in t) + ")"
                    polys.append(InvariantPolynomial(label, 3, f))
    return polys


# ---------------------------------------------------------------------------
# Basis assembly (with heterogeneous lifting and symmetry restriction)
# ---------------------------------------------------------------------------

def lift_heterogeneous(base: list, p: int, K: int, exact: bool) -> list:
    """Lift each base invariant f to sum_k w_k f(x^(k)).

    Variables: K signal blocks of size p, then w_1..w_{K-1} (w_K = 1 - sum).
    """
    one = Fraction(1) if exact else 1.0
    lifted = []
    for ip in base:
        shifted = [ip.poly.shift_vars(k * p) for k in range(K)]
        total = shifted[K - 1]  # w_K f^(K) contributes f^(K) - sum_j w_j f^(K)
        for k in range(K - 1):
            wvar = K * p + k
            wmono = SparsePoly({((wvar, 1),): one})
            total = total + wmono * (shifted[k] - shifted[K - 1])
        lifted.append(InvariantPolynomial(f"lift[{ip.label}]", ip.degree + 1, total))
    return lifted


def restrict_basis(basis: "InvariantBasis", keep: np.ndarray) -> "InvariantBasis":
    """Set non-kept variables to zero and reindex onto the kept ones."""
    pos = {int(v): i for i, v in enumerate(keep)}
    polys = []
    seen = set()
    for ip in basis.polys:
        terms = {}
        for m, c in ip.poly.terms.items():
            if all(v in pos for v, _ in m):
                terms[tuple((pos[v], e) for v, e in m)] = c
        f = SparsePoly(terms)
        if not f:
            continue
        key = f.canonical_key() if basis.exact else None
        if key is not None and key in seen:
            continue
        seen.add(key)
        polys.append(InvariantPolynomial(ip.label, ip.degree, f))
    return InvariantBasis(spec=basis.spec, nvars=len(keep),
                          degree_max=basis.degree_max, polys=polys,
                          exact=basis.exact)


def invariant_basis(spec: ProblemSpec, d: int) -> InvariantBasis:
    """Spanning set of U^T_{<=d} for the spec (lifted if heterogeneous)."""
    if spec.group == "so3":
        if d not in (1, 2, 3):
            raise ValueError("supported degrees: 1, 2, 3")
        if spec.symmetry and spec.K > 1:
            raise ValueError("symmetry restriction with K > 1 is unsupported")
        base = _so3_basis(spec.homogeneous(), d)
        exact = False
    else:
        if d < 1:
            raise ValueError("d >= 1 required")
        hom = spec.homogeneous()
        base = (_finite_projected_basis(hom, d) if spec.projection == "mra_ring"
                else _finite_plain_basis(hom, d))
        exact = True
    p = spec.dim
    if spec.K > 1:
        polys = lift_heterogeneous(base, p, spec.K, exact)
        nvars = spec.K * p + spec.K - 1
    else:
        polys, nvars = base, p
    basis = InvariantBasis(spec=spec, nvars=nvars, degree_max=d,
                           polys=polys, exact=exact)
    if spec.group == "so3" and spec.symmetry and spec.K == 1:
        basis = restrict_basis(basis, symmetric_support(spec))
    return basis


def het_point(signal: Signal) -> np.ndarray:
    """Evaluation point (theta_1..theta_K, w_1..w_{K-1}) for lifted bases."""
    w = np.asarray(signal.spec.weights)[:-1]
    return np.concatenate([signal.components.ravel(), w])


def evaluate_basis(basis: InvariantBasis, signal_or_point) -> np.ndarray:
    """Values of every basis polynomial at a signal (or raw point)."""
    if isinstance(signal_or_point, Signal):
        sig = signal_or_point
        point = het_point(sig) if basis.spec.K > 1 else sig.components[0]
    else:
        point = np.asarray(signal_or_point, dtype=float)
    return basis.evaluate(point)


# ---------------------------------------------------------------------------
# Exact moment tensors
# ---------------------------------------------------------------------------

def _finite_component_dense(spec: ProblemSpec, theta: np.ndarray, d: int) -> np.ndarray:
    els = group_elements(spec)
    q = spec.dim_observed
    T = np.zeros((q,) * d)
    for g in els:
        v = observe(spec, act(spec, g, theta))
        out = v
        for _ in range(d - 1):
            out = np.multiply.outer(out, v)
        T += out
    return T / len(els)


def _so3_component_dense_unproj(spec: ProblemSpec, theta: np.ndarray, d: int) -> np.ndarray:
    p = spec.dim
    T = np.zeros((p,) * d)
    blocks = list(spec.so3_blocks())
    if d == 1:
        return T  # no degree-1 invariants without the trivial representation
    if d == 2:
        for (s1, l1, a1, b1) in blocks:
            for (s2, l2, a2, b2) in blocks:
                if l1 != l2:
                    continue
                B = so3.basis_h_to_y(l1)
                dim = 2 * l1 + 1
                Q = np.zeros((dim, dim))
                for k in range(-l1, l1 + 1):
                    Q[k + l1, -k + l1] = (-1) ** k
                # E[D x D] = vec(Q) vec(Q)^T/(2l+1) in the Y basis
                C = _clean_real(B.conj().T @ Q @ B.conj(), "T2 structure")
                val = _clean_real(
                    np.array(theta[a1:b1] @ (B.T @ Q @ B) @ theta[a2:b2]), "T2 value")
                T[a1:b1, a2:b2] = C * (val / (2 * l1 + 1))
        return T
    if d == 3:
        for (s1, l1, a1, b1) in blocks:
            for (s2, l2, a2, b2) in blocks:
                for (s3, l3, a3, b3) in blocks:
                    if not _triangle(l1, l2, l3):
                        continue
                    U = _cg_coupling_tensor(l1, l2, l3)
                    B1, B2, B3 = (so3.basis_h_to_y(l) for l in (l1, l2, l3))
                    # structural tensor and invariant value, both real
                    W = _clean_real(np.einsum(
                        "abc,am,bn,cp->mnp", U.astype(complex),
                        B1.conj(), B2.conj(), B3.conj()), "T3 structure")
                    x1, x2, x3 = B1 @ theta[a1:b1], B2 @ theta[a2:b2], B3 @ theta[a3:b3]
                    val = _clean_real(np.einsum("abc,a,b,c->", U.astype(complex),
                                                x1, x2, x3), "T3 value")
                    T[a1:b1, a2:b2, a3:b3] = W * (float(val) / (2 * l1 + 1))
        return T
    raise ValueError("supported degrees: 1, 2, 3")


def exact_moment(spec: ProblemSpec, signal: Signal, d: int) -> MomentTensor:
    """Population moment tensor T_d of the observed samples, noise-free."""
    if d not in (1, 2, 3):
        raise ValueError("supported degrees: 1, 2, 3")
    q = spec.dim_observed
    if q ** d > 5_000_000:
        raise ValueError("moment tensor too large to materialize")
    T = np.zeros((q,) * d)
    P = projection_matrix(spec) if spec.projection != "none" else None
    for k in range(spec.K):
        theta = signal.components[k]
        if spec.group == "so3":
            Tk = _so3_component_dense_unproj(spec, theta, d)
            if P is not None:
                letters = "abc"[:d]
                out = "".join(chr(ord("u") + i) for i in range(d))
                expr = ",".join(f"{o}{a}" for o, a in zip(out, letters))
                Tk = np.einsum(f"{expr},{letters}->{out}", *([P] * d), Tk)
        else:
            Tk = _finite_component_dense(spec, theta, d)
        T += spec.weights[k] * Tk
    return MomentTensor.from_dense(T, provenance="exact")


# ---------------------------------------------------------------------------
# Invariant value tables (unprojected so3), from signals or moment tensors
# ---------------------------------------------------------------------------

def i2_value(spec: ProblemSpec, theta: np.ndarray, s1: int, s2: int, l: int) -> float:
    """Value of I2(s1, s2, l) at a component vector."""
    B = so3.basis_h_to_y(l)
    a1 = spec.so3_index(s1, l, -l)
    a2 = spec.so3_index(s2, l, -l)
    dim = 2 * l + 1
    x1 = B @ theta[a1:a1 + dim]
    x2 = B @ theta[a2:a2 + dim]
    signs = np.array([(-1) ** k for k in range(-l, l + 1)], dtype=float)
    val = np.sum(signs * x1 * x2[::-1]) / (2 * l + 1)
    return float(_clean_real(np.asarray(val), "I2 value"))


def i3_value(spec: ProblemSpec, theta: np.ndarray, slots) -> float:
    """Value of I3 at a component vector; slots = ((s1,l1),(s2,l2),(s3,l3))."""
    (s1, l1), (s2, l2), (s3, l3) = slots
    U = _cg_coupling_tensor(l1, l2, l3).astype(complex)
    xs = []
    for s, l in slots:
        a = spec.so3_index(s, l, -l)
        xs.append(so3.basis_h_to_y(l) @ theta[a:a + 2 * l + 1])
    val = np.einsum("abc,a,b,c->", U, *xs) / (2 * l1 + 1)
    return float(_clean_real(np.asarray(val), "I3 value"))


def canonical_i3_key(slots) -> tuple:
    return tuple(sorted(slots))


def invariant_tables(spec: ProblemSpec, signal: Signal) -> tuple[dict, dict]:
    """Exact I2/I3 value tables of an unprojected so3 signal (K = 1)."""
    if spec.group != "so3" or spec.K != 1:
        raise ValueError("invariant tables need a homogeneous so3 spec")
    theta = signal.components[0]
    S, F = spec.shells, spec.freqs
    i2 = {(s1, s2, l): i2_value(spec, theta, s1, s2, l)
          for s1 in range(1, S + 1) for s2 in range(s1, S + 1)
          for l in range(1, F + 1)}
    i3 = {canonical_i3_key(t): i3_value(spec, theta, t)
          for t in i3_slot_triples(S, F)}
    return i2, i3


def contract_with_moments(poly: SparsePoly, tensors: dict) -> float:
    """Value of a homogeneous invariant from unprojected moment tensors: for
    an invariant f of degree d over the observed coordinates, f(theta) equals
    the contraction of its coefficients with T_d(theta). Not meaningful for
    projected problems, where basis polynomials live in signal coordinates."""
    total = 0.0
    for mono, c in poly.terms.items():
        idx = tuple(sorted(v for v, e in mono for _ in range(e)))
        total += float(c) * tensors[len(idx)].get(*idx)
    return total


def tables_from_moments(spec: ProblemSpec, tensors: dict) -> tuple[dict, dict]:
    """I2/I3 tables contracted from (estimated or exact) unprojected moment
    tensors of orders 2 and 3."""
    if spec.group != "so3" or spec.projection != "none":
        raise ValueError("needs an unprojected so3 spec")
    S, F = spec.shells, spec.freqs
    i2 = {(s1, s2, l): contract_with_moments(i2_poly(spec, s1, s2, l), tensors)
          for s1 in range(1, S + 1) for s2 in range(s1, S + 1)
          for l in range(1, F + 1)}
    i3 = {}
    for t in i3_slot_triples(S, F):
        f = i3_poly(spec, *t)
        if f:
            i3[canonical_i3_key(t)] = contract_with_moments(f, tensors)
    return i2, i3


# ---------------------------------------------------------------------------
# Molien series (finite groups, exact)
# ---------------------------------------------------------------------------

def _cycle_types(spec: ProblemSpec):
    """(count, cycle_lengths) pairs over the group's permutation action."""
    if spec.group == "cyclic":
        buckets: dict = {}
        for g in range(spec.p):
            d = math.gcd(g, spec.p)
            key = (spec.p // d,) * d if g else (1,) * spec.p
            buckets[key] = buckets.get(key, 0) + 1
        return sorted((c, k) for k, c in buckets.items())
    if spec.group == "symmetric":
        out = []
        for part in _partitions(spec.p):
            mults: dict = {}
            for x in part:
                mults[x] = mults.get(x, 0) + 1
            count = math.factorial(spec.p)
            for x, m in mults.items():
                count //= x ** m * math.factorial(m)
            out.append((count, tuple(part)))
        return sorted(out, key=lambda t: t[1])
    raise ValueError("Molien series in exact form needs a finite group")


def _partitions(n: int, max_part: int | None = None):
    if n == 0:
        yield ()
        return
    if max_part is None:
        max_part = n
    for first in range(min(n, max_part), 0, -1):
        for rest in _partitions(n - first, first):
            yield (first,) + rest


def _geometric_series_product(cycles, d_max: int) -> list:
    """Series of 1/prod_c (1 - t^c) to degree d_max, integer coefficients."""
    coeffs = [1] + [0] * d_max
    for c in cycles:
        for d in range(c, d_max + 1):
            coeffs[d] += coeffs[d - c]
    return coeffs


def molien_series_finite(spec: ProblemSpec, d_max: int) -> HilbertSeries:
    """Exact Molien series average of det(I - t rho(g))^{-1} to degree d_max."""
    types = _cycle_types(spec)
    order = sum(c for c, _ in types)
    total = [Fraction(0)] * (d_max + 1)
    pole = 0
    for count, cycles in types:
        series = _geometric_series_product(cycles, d_max)
        pole = max(pole, len(cycles))
        for d in range(d_max + 1):
            total[d] += Fraction(count * series[d], order)
    coeffs = []
    for d, v in enumerate(total):
        if v.denominator != 1:
            raise ArithmeticError(f"non-integer Molien coefficient at degree {d}")
        coeffs.append(int(v))
    return HilbertSeries(coeffs=tuple(coeffs), pole_order=pole,
                         group_order=order, rational_terms=tuple(types))


# ---------------------------------------------------------------------------
# SO(3) invariant dimension by character quadrature
# ---------------------------------------------------------------------------

def so3_invariant_dim(freqs, d: int) -> int:
    """dim of the degree-d invariants for S^2 registration with given
    frequency set, by character recursion and quadrature over the rotation
    angle density (1 - cos phi)/pi."""
    from scipy.integrate import quad

    if d > 6:
        raise ValueError("character recursion supported for d <= 6")
    fset = sorted({int(l) for l in (range(1, freqs + 1)
                                    if isinstance(freqs, int) else freqs)})

    def chi1(phi):
        return sum(1.0 + 2.0 * sum(math.cos(m * phi) for m in range(1, l + 1))
                   for l in fset)

    def chi(dd, phi):
        if dd == 0:
            return 1.0
        return sum(chi1(i * phi) * chi(dd - i, phi) for i in range(1, dd + 1)) / dd

    val, err = quad(lambda phi: (1.0 - math.cos(phi)) * chi(d, phi) / math.pi,
                    0.0, math.pi, limit=400)
    rounded = round(val)
    if abs(val - rounded) > 0.4 or err > 0.1:
        raise ArithmeticError(f"quadrature failed to separate: {val} +- {err}")
    return int(rounded)


# ---------------------------------------------------------------------------
# Transcendence degrees and counting oracles
# ---------------------------------------------------------------------------

def trdeg_ring(spec: ProblemSpec) -> int:
    """Transcendence degree of the invariant ring for the spec."""
    if spec.group in ("cyclic", "symmetric"):
        hom = spec.p
    else:
        S, F = spec.shells, spec.freqs
        if spec.symmetry:
            if spec.K > 1:
                raise ValueError("symmetry restriction with K > 1 unsupported here")
            dim_vh = len(symmetric_support(spec))
            return dim_vh - 1 if F >= spec.symmetry else dim_vh
        if F >= 2:
            hom = S * (F * F + 2 * F) - 3
        else:
            hom = 3 * S - 3 if S >= 2 else 1  # a lone 3-vector keeps only its norm
    return spec.K * hom + spec.K - 1


@dataclass(frozen=True)
class HetMraCount:
    p: int
    K: int
    distinct_moments: int     # U: distinct entries of T_1..T_3
    needed: int               # K p + K - 1
    feasible: bool


def count_het_mra(p: int, K: int) -> HetMraCount:
    """Distinct degree-<=3 moment entries vs degrees of freedom for
    heterogeneous MRA."""
    if p < 1 or K < 1:
        raise ValueError("p >= 1 and K >= 1 required")
    u = p + 2 + p // 2 + math.ceil((p - 1) * (p - 2) / 6)
    needed = K * p + K - 1
    return HetMraCount(p=p, K=K, distinct_moments=u, needed=needed,
                       feasible=u >= needed)


def relation_count(S: int) -> int:
    """E(S): number of linear relations among the distinct P3 invariants."""
    return 2 * S + 4 * S * (S - 1) + S * (S - 1) * (S - 2)


@dataclass(frozen=True)
class CryoCount:
    S: int
    F: int
    K: int
    dim_u2: int
    dim_u3: int
    n_classes: int            # |X(S, F)|
    trdeg: int
    feasible: bool


def count_cryo(S: int, F: int, K: int = 1) -> CryoCount:
    """Degree-2/3 invariant dimensions and feasibility for projected cryo-EM."""
    if S < 1 or F < 2:
        raise ValueError("S >= 1 and F >= 2 required")
    n_classes = len(x_class_reps(S, F))
    dim_u2 = S * (S + 1) * F // 2
    dim_u3 = n_classes - relation_count(S)
    trdeg = K * (S * (F * F + 2 * F) - 3) + K - 1
    return CryoCount(S=S, F=F, K=K, dim_u2=dim_u2, dim_u3=dim_u3,
                     n_classes=n_classes, trdeg=trdeg,
                     feasible=dim_u2 + dim_u3 >= trdeg)
