"""Unbiased moment estimation from noisy samples.

Noise bias is cancelled with the orthogonal-polynomial family of the scalar
noise law (probabilists' Hermite for Gaussian); high-probability estimates
come from median-of-means over deterministically assigned sample blocks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .invariants import MomentTensor
from .problem import SampleSet


# ---------------------------------------------------------------------------
# Noise model and orthogonal polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Scalar noise law given by its moment sequence E[xi^k], k = 0..order."""

    moments: tuple
    name: str = "custom"

    @classmethod
    def gaussian(cls, order: int = 16) -> "NoiseModel":
        moms = [Fraction(0)] * (order + 1)
        moms[0] = Fraction(1)
        for k in range(2, order + 1, 2):
            # E[xi^{2j}] = (2j-1)!!
            moms[k] = Fraction(math.prod(range(1, k, 2)))
        return cls(moments=tuple(moms), name="gaussian")

    def moment(self, k: int) -> Fraction:
        if k >= len(self.moments):
            raise ValueError(f"noise moments known only to order {len(self.moments) - 1}")
        return Fraction(self.moments[k])


def hermite_polys(noise: NoiseModel, k_max: int) -> list:
    """Monic orthogonal polynomials H_0..H_{k_max} for the noise law.

    Gram-Schmidt on the monomials: H_k = x^k - sum_j (E[xi^k H_j] / E[H_j^2]) H_j.
    Coefficient lists are exact Fractions, ascending powers.
    """
    if 2 * k_max >= len(noise.moments):
        raise ValueError("moment sequence too short for requested degree")

    def poly_noise_mean(coeffs, shift=0):
        return sum(c * noise.moment(i + shift) for i, c in enumerate(coeffs))

    polys = [[Fraction(1)]]
    norms = [Fraction(1)]
    for k in range(1, k_max + 1):
        coeffs = [Fraction(0)] * k + [Fraction(1)]  # x^k
        for j, hj in enumerate(polys):
            num = poly_noise_mean(hj, shift=k)      # E[xi^k H_j(xi)]
            proj = num / norms[j]
            for i, c in enumerate(hj):
                coeffs[i] -= proj * c
        sq = [Fraction(0)] * (2 * k + 1)
        for i, a in enumerate(coeffs):
            for j, b in enumerate(coeffs):
                sq[i + j] += a * b
        norm = poly_noise_mean(sq)
        if norm <= 0:
            raise ArithmeticError("degenerate moment matrix: noise law not realizable")
        polys.append(coeffs)
        norms.append(norm)
    return polys


def _hermite_float_table(noise: NoiseModel, k_max: int) -> list:
    return [np.array([float(c) for c in h]) for h in hermite_polys(noise, k_max)]


def _poly_eval_cols(coeffs: np.ndarray, X: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    for c in coeffs[::-1]:
        out = out * X + c
    return out


# ---------------------------------------------------------------------------
# Raw (single-pass, unbiased) estimators
# ---------------------------------------------------------------------------

def _transformed_columns(y: np.ndarray, sigma: float, noise: NoiseModel,
                         d: int) -> list:
    """Per-degree matrices sigma^k H_k(y/sigma), exact powers when sigma = 0."""
    if sigma == 0.0:
        return [y ** k for k in range(d + 1)]
    table = _hermite_float_table(noise, d)
    z = y / sigma
    return [sigma ** k * _poly_eval_cols(table[k], z) for k in range(d + 1)]


def _index_counts(alpha_indices: tuple) -> dict:
    counts: dict = {}
    for j in alpha_indices:
        counts[j] = counts.get(j, 0) + 1
    return counts


def raw_moment_estimate(samples: SampleSet, alpha, noise: NoiseModel,
                        indices: bool = False) -> float:
    """Unbiased estimate of E_theta[x^alpha] for one multi-index.

    ``alpha`` is a dense exponent vector of length q; with ``indices=True``
    it is instead a tuple of coordinate indices with repetition.
    """
    if indices:
        idx = tuple(int(j) for j in alpha)
    else:
        alpha = np.asarray(alpha)
        if alpha.shape != (samples.y.shape[1],):
            raise ValueError("alpha must be an exponent vector of length q")
        idx = tuple(j for j in range(len(alpha)) for _ in range(int(alpha[j])))
    d = len(idx)
    cols = _transformed_columns(samples.y, samples.sigma, noise, d)
    prod = np.ones(samples.n)
    for j, e in _index_counts(idx).items():
        prod = prod * cols[e][:, j]
    return float(prod.mean())


# ---------------------------------------------------------------------------
# Median-of-means tensor estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentEstimate:
    """Estimated moment tensors of orders 1..d with per-entry block variances."""

    tensors: dict          # order -> MomentTensor (provenance "estimated")
    n: int
    m: int                 # number of median-of-means blocks
    sigma: float

    def tensor(self, order: int) -> MomentTensor:
        return self.tensors[order]

    def to_json(self) -> str:
        import json

        payload = {"n": self.n, "m": self.m, "sigma": self.sigma, "orders": {}}
        for d, t in self.tensors.items():
            payload["orders"][str(d)] = {
                "≤".join(str(i) for i in idx): {
                    "est": v, "var": t.variances[idx] if t.variances else None}
                for idx, v in t.entries.items()}
        return json.dumps(payload)


def default_block_count(n: int, q: int, d: int, delta: float) -> int:
    """m = min(n, ceil(4 log(C(q+d, d) / delta)))."""
    m = math.ceil(4.0 * math.log(math.comb(q + d, d) / delta))
    return max(1, min(n, m))


def _block_sums(values: np.ndarray, block_ids: np.ndarray, m: int) -> np.ndarray:
    return np.bincount(block_ids, weights=values, minlength=m)


def estimate_moments(samples: SampleSet, d: int, noise: NoiseModel | None = None,
                     delta: float = 1e-3, m: int | None = None) -> MomentEstimate:
    """Median-of-means estimates of all moment tensors of order 1..d.

    Blocks are assigned deterministically by sample index (round-robin), so
    results do not depend on scheduling. ``m = 1`` gives the plain mean.
    """
    noise = noise or NoiseModel.gaussian()
    n, q = samples.y.shape
    if m is None:
        m = default_block_count(n, q, d, delta)
    if n < m:
        raise ValueError(f"need n >= m (n={n}, m={m})")
    block_ids = np.arange(n) % m
    counts = np.bincount(block_ids, minlength=m).astype(float)
    cols = _transformed_columns(samples.y, samples.sigma, noise, d)

    tensors = {}
    for order in range(1, d + 1):
        entries, variances = {}, {}
        for idx in itertools.combinations_with_replacement(range(q), order):
            prod = np.ones(n)
            for j, e in _index_counts(idx).items():
                prod = prod * cols[e][:, j]
            block_means = _block_sums(prod, block_ids, m) / counts
            entries[idx] = float(np.median(block_means))
            variances[idx] = float(block_means.var() / m) if m > 1 else 0.0
        tensors[order] = MomentTensor(order=order, q=q, entries=entries,
                                      provenance=f"estimated(n={n}, sigma={samples.sigma})",
                                      variances=variances)
    return MomentEstimate(tensors=tensors, n=n, m=m, sigma=samples.sigma)


def estimate_moments_streaming(spec, signal, n: int, seed: int, d: int,
                               noise: NoiseModel | None = None,
                               m: int = 1) -> MomentEstimate:
    """Fused simulate-and-estimate over chunks; never materializes all samples.

    Matches estimate_moments(simulate(...)) entry for entry (same block
    assignment by global sample index).
    """
    from .problem import simulate_chunks

    noise = noise or NoiseModel.gaussian()
    q = spec.dim_observed
    sigma = spec.sigma
    index_sets = {order: list(itertools.combinations_with_replacement(range(q), order))
                  for order in range(1, d + 1)}
    sums = {order: np.zeros((m, len(index_sets[order]))) for order in index_sets}
    counts = np.zeros(m)
    start = 0
    for y in simulate_chunks(spec, signal, n, seed):
        size = len(y)
        block_ids = (np.arange(start, start + size)) % m
        counts += np.bincount(block_ids, minlength=m)
        cols = _transformed_columns(y, sigma, noise, d)
        for order, idxs in index_sets.items():
            for col, idx in enumerate(idxs):
                prod = np.ones(size)
                for j, e in _index_counts(idx).items():
                    prod = prod * cols[e][:, j]
                sums[order][:, col] += _block_sums(prod, block_ids, m)
        start += size
    tensors = {}
    for order, idxs in index_sets.items():
        block_means = sums[order] / counts[:, None]
        med = np.median(block_means, axis=0)
        var = block_means.var(axis=0) / m if m > 1 else np.zeros(len(idxs))
        entries = {idx: float(med[c]) for c, idx in enumerate(idxs)}
        variances = {idx: float(var[c]) for c, idx in enumerate(idxs)}
        tensors[order] = MomentTensor(order=order, q=q, entries=entries,
                                      provenance=f"estimated(n={n}, sigma={sigma})",
                                      variances=variances)
    return MomentEstimate(tensors=tensors, n=n, m=m, sigma=sigma)
