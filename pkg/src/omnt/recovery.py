"""Signal recovery from moments: Jennrich tensor decomposition for finite
regular representations, frequency marching for unprojected cryo-EM,
degree-2 unprojection, orbit distance, and best-effort least squares.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .invariants import InvariantBasis, MomentTensor, canonical_i3_key, \
    i2_value, i3_poly, i3_value, p2_coeff
from .problem import GroupElement, ProblemSpec, Signal, act, group_elements
from .rng import as_rng


class RecoveryError(RuntimeError):
    pass


class JennrichError(RecoveryError):
    """Eigenvalue collision or rank deficiency in the decomposition."""


class MarchingError(RecoveryError):
    """Rank-deficient marching system or corrupted Gram input."""


@dataclass
class RecoveryResult:
    candidates: list                   # component vectors (K = 1 problems)
    residual: float                    # max |f(candidate) - target| over used invariants
    method: str
    gauge_note: str = ""
    success: bool = True

    @property
    def candidate(self) -> np.ndarray:
        return self.candidates[0]

    def to_json(self) -> str:
        import json

        return json.dumps({
            "method": self.method, "residual": self.residual,
            "success": self.success, "gauge_note": self.gauge_note,
            "candidates": [list(map(float, c)) for c in self.candidates],
        })


# ---------------------------------------------------------------------------
# Orbit distance
# ---------------------------------------------------------------------------

def _so3_distance(spec: ProblemSpec, t1: np.ndarray, t2: np.ndarray,
                  n_cover: int = 3000, iters: int = 200) -> float:
    rng = as_rng(20240917)  # fixed covering; result is an upper bound
    quats = rng.normal(size=(n_cover, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    quats[0] = np.array([1.0, 0.0, 0.0, 0.0])

    def dist(q):
        g = GroupElement("so3", quat=q / np.linalg.norm(q))
        return np.linalg.norm(t1 - act(spec, g, t2))

    best_q, best = None, np.inf
    for q in quats:
        v = dist(q)
        if v < best:
            best, best_q = v, q.copy()
    # coordinate descent on the quaternion sphere
    step = 0.2
    q = best_q
    for _ in range(iters):
        improved = False
        for i in range(4):
            for sgn in (1.0, -1.0):
                cand = q.copy()
                cand[i] += sgn * step
                cand /= np.linalg.norm(cand)
                v = dist(cand)
                if v < best - 1e-15:
                    best, q, improved = v, cand, True
        if not improved:
            step *= 0.5
            if step < 1e-12:
                break
    return float(best)


def orbit_distance(spec: ProblemSpec, theta1: np.ndarray, theta2: np.ndarray) -> float:
    """d_G(theta1, theta2) = min_g ||theta1 - g theta2||: exact for finite
    groups (full enumeration), a refined upper bound for so3."""
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    if theta1.shape != (spec.dim,) or theta2.shape != (spec.dim,):
        raise ValueError("components must live in the spec's ambient space")
    if spec.group != "so3" and spec.group_order > 10 ** 6:
        raise ValueError("group too large to enumerate")
    if spec.group == "cyclic":
        best = np.inf
        for g in range(spec.p):
            best = min(best, np.linalg.norm(theta1 - np.roll(theta2, g)))
        return float(best)
    if spec.group == "symmetric":
        best = np.inf
        for g in group_elements(spec):
            best = min(best, np.linalg.norm(theta1 - act(spec, g, theta2)))
        return float(best)
    return _so3_distance(spec, theta1, theta2)


def orbit_distance_signals(spec: ProblemSpec, s1: Signal, s2: Signal) -> float:
    """Heterogeneous distance: best component matching, plus weight mismatch."""
    K = spec.K
    best = np.inf
    for perm in itertools.permutations(range(K)):
        d = math.fsum(orbit_distance(spec, s1.components[k],
                                     s2.components[perm[k]]) ** 2
                      for k in range(K))
        best = min(best, math.sqrt(d))
    return float(best)


# ---------------------------------------------------------------------------
# Jennrich decomposition (finite regular representations)
# ---------------------------------------------------------------------------

def jennrich_recover(t3: MomentTensor, spec: ProblemSpec, rng,
                     eig_tol: float = 1e-6) -> RecoveryResult:
    """Recover theta from T3 = E[(g theta)^x3] by simultaneous diagonalization.

    Needs the group translates {g theta} linearly independent, so |G| must
    not exceed the dimension (regular representation: equality).
    """
    order = spec.group_order
    if order is None or order > spec.dim:
        raise ValueError("Jennrich needs a finite group with |G| <= dim(V)")
    rng = as_rng(rng)
    T = t3.to_dense()
    p = T.shape[0]
    r = order
    a, b = rng.normal(size=p), rng.normal(size=p)
    Ma = np.einsum("ijk,k->ij", T, a)
    Mb = np.einsum("ijk,k->ij", T, b)
    sb = np.linalg.svd(Mb, compute_uv=False)
    if sb[min(r, p) - 1] < 1e-10 * max(sb[0], 1e-30):
        raise JennrichError("contracted slice is rank deficient")
    M = Ma @ np.linalg.pinv(Mb)
    evals, evecs = np.linalg.eig(M)
    idx = np.argsort(-np.abs(evals))[:r]
    evals, evecs = evals[idx], evecs[:, idx]
    if np.abs(evals.imag).max() > 1e-6 * np.abs(evals).max():
        raise JennrichError("complex eigenvalues: non-generic signal")
    evals = evals.real
    gaps = np.abs(evals[:, None] - evals[None, :]) + np.eye(r)
    if gaps.min() < eig_tol * max(np.abs(evals).max(), 1e-30):
        raise JennrichError("eigenvalue collision: non-generic signal")
    W = np.zeros((p, r))
    for i in range(r):
        v = evecs[:, i]
        k = np.argmax(np.abs(v))
        v = (v / v[k] * np.abs(v[k])).real  # rotate to the real axis
        W[:, i] = v / np.linalg.norm(v)
    # scales: T = sum_i beta_i w_i^x3 solved in the least-squares sense
    basis = np.stack([np.einsum("i,j,k->ijk", W[:, i], W[:, i], W[:, i]).ravel()
                      for i in range(r)], axis=1)
    beta, *_ = np.linalg.lstsq(basis, T.ravel(), rcond=None)
    comps = [np.cbrt(beta[i] * order) * W[:, i] for i in range(r)]
    residual = float(np.abs(basis @ beta - T.ravel()).max())
    return RecoveryResult(candidates=[comps[0]], residual=residual,
                          method="jennrich",
                          gauge_note="any rank-one component represents the orbit")


# ---------------------------------------------------------------------------
# Degree-2 unprojection (projected cryo-EM)
# ---------------------------------------------------------------------------

def project_degree2(i2_table: dict, S: int, F: int) -> dict:
    """Forward map I2 -> P2 (values)."""
    out = {}
    for s1 in range(1, S + 1):
        for s2 in range(s1, S + 1):
            for m in range(0, F + 1):
                out[(s1, s2, m)] = math.fsum(
                    p2_coeff(l, m) * i2_table[(s1, s2, l)]
                    for l in range(max(m, 1), F + 1) if (l + m) % 2 == 0)
    return out


def unproject_degree2(p2_table: dict, S: int, F: int) -> dict:
    """Exactly invert the projection of degree-2 invariants.

    Solves down each parity chain m = F, F-1, ..., 0; the diagonal pivots
    (N_{lm} P_l^m(0))^2 are structurally positive for l = m >= 1.
    """
    i2 = {}
    for s1 in range(1, S + 1):
        for s2 in range(s1, S + 1):
            for m in range(F, -1, -1):
                ls = [l for l in range(max(m, 1), F + 1) if (l + m) % 2 == 0]
                if not ls:
                    continue
                lo = ls[0]  # only unknown left on this chain
                known = math.fsum(p2_coeff(l, m) * i2[(s1, s2, l)] for l in ls[1:])
                i2[(s1, s2, lo)] = (p2_table[(s1, s2, m)] - known) / p2_coeff(lo, m)
    return i2


# ---------------------------------------------------------------------------
# Frequency marching (unprojected cryo-EM)
# ---------------------------------------------------------------------------

def _linear_equation(spec: ProblemSpec, key: tuple, known: np.ndarray,
                     block_start: int, block_dim: int):
    """One marching equation: I3 at ``key`` is affine-linear in the unknown
    block; returns (row, const)."""
    f = i3_poly(spec, *key)
    row = np.zeros(block_dim)
    const = 0.0
    for mono, c in f.terms.items():
        factors = [(v, e) for v, e in mono]
        unknown = [(v, e) for v, e in factors
                   if block_start <= v < block_start + block_dim]
        if not unknown:
            const += float(c) * math.prod(known[v] ** e for v, e in factors)
        else:
            (uv, ue), = unknown
            if ue != 1:
                raise MarchingError("unexpected quadratic unknown in marching")
            rest = math.prod(known[v] ** e for v, e in factors if v != uv)
            row[uv - block_start] += float(c) * rest
    return row, const


def frequency_march(i2_table: dict, i3_table: dict, S: int, F: int,
                    rng) -> RecoveryResult:
    """Solve for an unprojected cryo-EM signal frequency by frequency.

    The l=1 block comes from a rank-3 eigenvalue factorization of the l=1
    Gram matrix with the gauge fixed to +/-I (sign resolved by the all-l=1
    degree-3 invariants); each l >= 2 block solves a stacked affine-linear
    system built from I3 with both lower frequencies known.
    """
    if S < 3:
        raise ValueError("frequency marching needs S >= 3")
    spec = ProblemSpec(group="so3", shells=S, freqs=F, projection="none")
    # every per-frequency Gram (w.r.t. the anti-diagonal form, pulled back to
    # the real basis) must be positive semidefinite
    for l in range(1, F + 1):
        G = np.empty((S, S))
        for s1 in range(1, S + 1):
            for s2 in range(s1, S + 1):
                G[s1 - 1, s2 - 1] = G[s2 - 1, s1 - 1] = \
                    (-1) ** l * (2 * l + 1) * i2_table[(s1, s2, l)]
        ev = np.linalg.eigvalsh(G)
        if ev.min() < -1e-8 * max(abs(ev).max(), 1e-30):
            raise MarchingError(f"degree-2 Gram at frequency {l} is not PSD")
    # l=1 Gram in H coordinates: theta_s . theta_t = (-3) I2(s,t,1)
    B = so3.basis_h_to_y(1)
    Q = np.zeros((3, 3))
    for k in (-1, 0, 1):
        Q[k + 1, -k + 1] = (-1) ** k
    C = (B.T @ Q @ B).real  # = -I for l = 1
    M = np.zeros((S, S))
    for s1 in range(1, S + 1):
        for s2 in range(s1, S + 1):
            # I2 = theta1^T (C/3) theta2, C = -I  =>  Gram = -3 I2
            M[s1 - 1, s2 - 1] = M[s2 - 1, s1 - 1] = -3.0 * i2_table[(s1, s2, 1)]
    evals, evecs = np.linalg.eigh(M)
    scale = max(abs(evals).max(), 1e-30)
    if evals.min() < -1e-8 * scale:
        raise MarchingError("l=1 Gram is not positive semidefinite")
    if evals[-3] <= 1e-10 * scale:
        raise MarchingError("l=1 Gram has rank below 3 (non-generic signal)")
    top = np.argsort(evals)[-3:][::-1]
    V = evecs[:, top] * np.sqrt(evals[top])
    for j in range(3):  # deterministic eigenvector sign convention
        k = np.argmax(np.abs(V[:, j]))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]

    theta = np.zeros(spec.dim)
    for s in range(1, S + 1):
        a = spec.so3_index(s, 1, -1)
        theta[a:a + 3] = V[s - 1]
    # chirality sign from the all-l=1 triple products
    keys111 = [canonical_i3_key(((s1, 1), (s2, 1), (s3, 1)))
               for s1, s2, s3 in itertools.combinations(range(1, S + 1), 3)]
    plus = math.fsum(abs(i3_value(spec, theta, k) - i3_table[k]) for k in keys111)
    minus = math.fsum(abs(-i3_value(spec, theta, k) - i3_table[k]) for k in keys111)
    if minus < plus:
        theta = -theta  # flips every odd-l block; even blocks are still zero

    known = theta.copy()
    for l in range(2, F + 1):
        for s in range(1, S + 1):
            a = spec.so3_index(s, l, -l)
            dim = 2 * l + 1
            rows, consts, targets = [], [], []
            lower = [(sp, lp) for sp in range(1, S + 1) for lp in range(1, l)]
            for slot1, slot2 in itertools.combinations_with_replacement(lower, 2):
                l1, l2 = slot1[1], slot2[1]
                if l1 + l2 < l:
                    continue
                if slot1 == slot2 and l % 2 == 1:
                    continue  # identically-zero invariant
                key = canonical_i3_key((slot1, slot2, (s, l)))
                if key not in i3_table:
                    continue
                row, const = _linear_equation(spec, key, known, a, dim)
                rows.append(row)
                consts.append(const)
                targets.append(i3_table[key])
            A = np.array(rows)
            b = np.array(targets) - np.array(consts)
            svals = np.linalg.svd(A, compute_uv=False)
            if len(svals) < dim or svals[dim - 1] < 1e-8 * max(svals[0], 1e-30):
                raise MarchingError(
                    f"marching system rank-deficient at shell {s}, frequency {l}")
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            known[a:a + dim] = sol
    theta = known

    residual = 0.0
    for (s1, s2, l), v in i2_table.items():
        residual = max(residual, abs(i2_value(spec, theta, s1, s2, l) - v))
    for key, v in i3_table.items():
        residual = max(residual, abs(i3_value(spec, theta, key) - v))
    return RecoveryResult(
        candidates=[theta], residual=float(residual), method="frequency-marching",
        gauge_note="l=1 gauge fixed to +/-I with sign from I3; the reflected "
                   "(chirality) partner is not enumerated")


# ---------------------------------------------------------------------------
# Generic least-squares solvers
# ---------------------------------------------------------------------------

def scale_for_noise(basis: InvariantBasis, sigma: float,
                    sigma_floor: float = 0.25):
    """Rescale basis rows to equalize the noise level of their moment
    estimates (std of a degree-d target grows like sigma^d times the
    coefficient norm). Returns (scaled basis, row weights)."""
    polys, ws = [], []
    for ip in basis.polys:
        cnorm = math.sqrt(sum(float(c) ** 2 for c in ip.poly.terms.values()))
        w = 1.0 / (cnorm * max(sigma, sigma_floor) ** ip.degree)
        polys.append(type(ip)(ip.label, ip.degree, ip.poly.scale(w)))
        ws.append(w)
    scaled = InvariantBasis(spec=basis.spec, nvars=basis.nvars,
                            degree_max=basis.degree_max, polys=polys,
                            exact=False)
    return scaled, np.array(ws)

def lsq_recover(basis: InvariantBasis, targets: np.ndarray, rng,
                init: np.ndarray | None = None, n_starts: int = 20,
                tol: float = 1e-8, scale: float = 1.0) -> RecoveryResult:
    """Damped least squares on sum_j (f_j(theta) - t_j)^2 with multi-start.

    Best-effort: no global-optimality claim; failure is reported when every
    start stagnates above tolerance.
    """
    from scipy.optimize import least_squares

    rng = as_rng(rng)
    targets = np.asarray(targets, dtype=float)
    nvars = basis.nvars

    def resid(x):
        return basis.evaluate(x) - targets

    def jac(x):
        return np.array([ip.poly.grad_float(x, nvars) for ip in basis.polys])

    starts = []
    if init is not None:
        starts.append(np.asarray(init, dtype=float))
    starts += [scale * rng.normal(size=nvars) for _ in range(n_starts)]
    best_x, best_res, best_i = None, np.inf, -1
    for i, x0 in enumerate(starts):
        sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-15,
                            ftol=1e-15, gtol=1e-15, max_nfev=400)
        r = np.abs(resid(sol.x)).max()
        if r < best_res - 1e-15:
            best_x, best_res, best_i = sol.x, r, i
    note = f"best of {len(starts)} starts (start {best_i})"
    return RecoveryResult(candidates=[best_x], residual=float(best_res),
                          method="lsq", gauge_note=note,
                          success=bool(best_res < tol))


def lsq_recover_moments(spec: ProblemSpec, tensors: dict, rng,
                        init: np.ndarray | None = None, n_starts: int = 12,
                        tol: float = 1e-6, scale: float = 1.0) -> RecoveryResult:
    """Best-effort recovery matching population moments directly.

    Residuals are the distinct entries of T_1..T_d(candidate) against the
    given tensors; works for projected problems where the invariant basis is
    not expressed over the observed coordinates.
    """
    from scipy.optimize import least_squares

    from .invariants import exact_moment

    rng = as_rng(rng)
    orders = sorted(tensors)
    targets, index_sets = [], []
    for d in orders:
        idxs = sorted(tensors[d].entries)
        index_sets.append((d, idxs))
        targets.extend(tensors[d].entries[i] for i in idxs)
    targets = np.asarray(targets)

    def resid(x):
        sig = Signal(spec.homogeneous(), x[None, :])
        out = []
        for d, idxs in index_sets:
            t = exact_moment(spec.homogeneous(), sig, d)
            out.extend(t.entries[i] for i in idxs)
        return np.asarray(out) - targets

    starts = ([np.asarray(init, dtype=float)] if init is not None else []) + \
        [scale * rng.normal(size=spec.dim) for _ in range(n_starts)]
    best_x, best_res, best_i = None, np.inf, -1
    for i, x0 in enumerate(starts):
        sol = least_squares(resid, x0, method="lm", xtol=1e-14, ftol=1e-14,
                            gtol=1e-14, max_nfev=200 * (spec.dim + 1))
        r = np.abs(resid(sol.x)).max()
        if r < best_res - 1e-15:
            best_x, best_res, best_i = sol.x, r, i
    return RecoveryResult(candidates=[best_x], residual=float(best_res),
                          method="lsq-moments",
                          gauge_note=f"best of {len(starts)} starts (start {best_i})",
                          success=bool(best_res < tol))


def demix_then_recover(targets: np.ndarray, spec: ProblemSpec,
                       base_basis: InvariantBasis, rng,
                       n_starts: int = 40, tol: float = 1e-6):
    """De-mix heterogeneous moments into K components and weights.

    ``targets`` are the lifted-invariant values sum_k w_k f_j(theta_k).
    Returns (list of per-component RecoveryResults, weights).
    """
    from scipy.optimize import least_squares

    rng = as_rng(rng)
    K, p = spec.K, spec.dim
    N = len(base_basis.polys)
    targets = np.asarray(targets, dtype=float)
    if K == 1:
        res = lsq_recover(base_basis, targets, rng, n_starts=n_starts, tol=tol)
        return [res], np.array([1.0])

    def unpack(z):
        thetas = z[:K * p].reshape(K, p)
        w = np.append(z[K * p:], 1.0 - z[K * p:].sum())
        return thetas, w

    def resid(z):
        thetas, w = unpack(z)
        vals = np.zeros(N)
        for k in range(K):
            vals += w[k] * base_basis.evaluate(thetas[k])
        return vals - targets

    def jac(z):
        thetas, w = unpack(z)
        J = np.zeros((N, K * p + K - 1))
        fvals = [base_basis.evaluate(thetas[k]) for k in range(K)]
        for k in range(K):
            Jk = np.array([ip.poly.grad_float(thetas[k], p)
                           for ip in base_basis.polys])
            J[:, k * p:(k + 1) * p] = w[k] * Jk
        for k in range(K - 1):
            J[:, K * p + k] = fvals[k] - fvals[K - 1]
        return J

    best_z, best_res = None, np.inf
    for _ in range(n_starts):
        z0 = np.concatenate([rng.normal(size=K * p),
                             np.full(K - 1, 1.0 / K) + 0.05 * rng.normal(size=K - 1)])
        sol = least_squares(resid, z0, jac=jac, method="lm", xtol=1e-15,
                            ftol=1e-15, gtol=1e-15, max_nfev=600)
        r = np.abs(resid(sol.x)).max()
        if r < best_res:
            best_z, best_res = sol.x, r
        if best_res < tol * 1e-3:
            break
    thetas, w = unpack(best_z)
    order = np.argsort(-w)  # canonical component order: descending weight
    thetas, w = thetas[order], w[order]
    w = w / w.sum()
    results = [RecoveryResult(candidates=[thetas[k]], residual=float(best_res),
                              method="demix-lsq", success=bool(best_res < tol))
               for k in range(K)]
    return results, w
