"""Sparse multivariate polynomials with exact (Fraction) or float coefficients.

Monomials are tuples of (variable, exponent) pairs, sorted by variable.
Degrees stay small (<= 4 here), so evaluation compiles each polynomial to
padded index arrays and runs vectorized over points.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

Monomial = tuple  # tuple[(var, exp), ...] sorted by var


def monomial(*pairs) -> Monomial:
    """Build a canonical monomial from (var, exp) pairs (exponents merged)."""
    acc: dict[int, int] = {}
    for v, e in pairs:
        if e:
            acc[v] = acc.get(v, 0) + e
    return tuple(sorted(acc.items()))


def monomial_from_indices(indices) -> Monomial:
    """Monomial that is the product of x_i over the given (repeatable) indices."""
    return monomial(*((i, 1) for i in indices))


def _mono_degree(mono: Monomial) -> int:
    return sum(e for _, e in mono)


class SparsePoly:
    """Polynomial as {monomial: coefficient}; immutable by convention."""

    __slots__ = ("terms", "_compiled")

    def __init__(self, terms: dict | None = None):
        self.terms = {m: c for m, c in (terms or {}).items() if c != 0}
        self._compiled = None

    @classmethod
    def zero(cls) -> "SparsePoly":
        return cls({})

    @classmethod
    def constant(cls, c) -> "SparsePoly":
        return cls({(): c})

    @classmethod
    def from_monomial(cls, mono: Monomial, coeff=1) -> "SparsePoly":
        return cls({mono: coeff})

    def __bool__(self):
        return bool(self.terms)

    def degree(self) -> int:
        return max((_mono_degree(m) for m in self.terms), default=0)

    def num_terms(self) -> int:
        return len(self.terms)

    def __add__(self, other: "SparsePoly") -> "SparsePoly":
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return SparsePoly(out)

    def __sub__(self, other: "SparsePoly") -> "SparsePoly":
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) - c
        return SparsePoly(out)

    def scale(self, c) -> "SparsePoly":
        if c == 0:
            return SparsePoly.zero()
        return SparsePoly({m: c * v for m, v in self.terms.items()})

    def __mul__(self, other: "SparsePoly") -> "SparsePoly":
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = monomial(*m1, *m2)
                out[m] = out.get(m, 0) + c1 * c2
        return SparsePoly(out)

    def shift_vars(self, offset: int) -> "SparsePoly":
        """Rename every variable i to i + offset."""
        return SparsePoly(
            {tuple((v + offset, e) for v, e in m): c for m, c in self.terms.items()}
        )

    def diff(self, var: int) -> "SparsePoly":
        out: dict = {}
        for m, c in self.terms.items():
            for j, (v, e) in enumerate(m):
                if v == var:
                    if e == 1:
                        rest = m[:j] + m[j + 1:]
                    else:
                        rest = m[:j] + ((v, e - 1),) + m[j + 1:]
                    out[rest] = out.get(rest, 0) + e * c
                    break
        return SparsePoly(out)

    def eval_exact(self, point) -> Fraction:
        """Evaluate with exact arithmetic (point entries Fractions/ints)."""
        total = Fraction(0)
        for m, c in self.terms.items():
            v = Fraction(c)
            for var, e in m:
                v *= Fraction(point[var]) ** e
            total += v
        return total

    # -- compiled float path ------------------------------------------------

    def _compile(self):
        """Pad each term to max degree with a sentinel slot (value 1)."""
        if self._compiled is None:
            deg = max(self.degree(), 1)
            idx = []
            coeffs = []
            for m, c in self.terms.items():
                slots = [v for v, e in m for _ in range(e)]
                slots += [-1] * (deg - len(slots))
                idx.append(slots)
                coeffs.append(float(c))
            if not idx:
                idx = [[-1] * deg]
                coeffs = [0.0]
            self._compiled = (np.array(idx, dtype=np.intp),
                              np.array(coeffs, dtype=float))
        return self._compiled

    def eval_float(self, x: np.ndarray) -> float:
        idx, coeffs = self._compile()
        xe = np.append(np.asarray(x, dtype=float), 1.0)
        return float(np.dot(coeffs, np.prod(xe[idx], axis=1)))

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at each row of X (npoints x nvars)."""
        idx, coeffs = self._compile()
        Xe = np.concatenate([np.asarray(X, dtype=float),
                             np.ones((len(X), 1))], axis=1)
        return Xe[:, idx].prod(axis=2) @ coeffs

    def grad_float(self, x: np.ndarray, nvars: int) -> np.ndarray:
        idx, coeffs = self._compile()
        xe = np.append(np.asarray(x, dtype=float), 1.0)
        P = xe[idx]  # nterms x deg
        deg = P.shape[1]
        grad = np.zeros(nvars + 1)
        for j in range(deg):
            others = np.prod(np.delete(P, j, axis=1), axis=1) if deg > 1 \
                else np.ones(len(coeffs))
            np.add.at(grad, idx[:, j], coeffs * others)
        return grad[:nvars]  # sentinel bucket dropped

    def hess_float(self, x: np.ndarray, nvars: int) -> np.ndarray:
        idx, coeffs = self._compile()
        xe = np.append(np.asarray(x, dtype=float), 1.0)
        P = xe[idx]
        deg = P.shape[1]
        H = np.zeros((nvars + 1, nvars + 1))
        for j in range(deg):
            for k in range(deg):
                if j == k:
                    continue
                keep = [t for t in range(deg) if t != j and t != k]
                others = np.prod(P[:, keep], axis=1) if keep else np.ones(len(coeffs))
                np.add.at(H, (idx[:, j], idx[:, k]), coeffs * others)
        return H[:nvars, :nvars]

    # -- misc ---------------------------------------------------------------

    def canonical_key(self):
        """Hashable form for exact deduplication."""
        return tuple(sorted(self.terms.items()))

    def map_coeffs(self, fn) -> "SparsePoly":
        return SparsePoly({m: fn(c) for m, c in self.terms.items()})

    def __repr__(self):
        parts = []
        for m, c in sorted(self.terms.items())[:6]:
            mono = "*".join(f"x{v}^{e}" if e > 1 else f"x{v}" for v, e in m) or "1"
            parts.append(f"{c}*{mono}")
        suffix = " + ..." if len(self.terms) > 6 else ""
        return f"SparsePoly({' + '.join(parts)}{suffix})"


def poly_linear(coeffs: dict, const=0) -> SparsePoly:
    """Linear polynomial sum_i coeffs[i] * x_i + const."""
    terms = {((v, 1),): c for v, c in coeffs.items() if c != 0}
    if const != 0:
        terms[()] = const
    return SparsePoly(terms)
