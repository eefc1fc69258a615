"""Special-function kernel for SO(3): Clebsch-Gordan coefficients, Wigner
D-matrices, spherical-harmonic basis changes, and equatorial projection
coefficients.

Conventions are pinned by identities (unitarity, the product rule, diagonal
z-rotations) rather than by any fixed table. Complex spherical harmonics use
Condon-Shortley phases; real-coefficient storage uses the H basis throughout
the rest of the package, with the S basis available for plain real functions
on the sphere.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

L_MAX = 64  # recurrences untested beyond this


# ---------------------------------------------------------------------------
# Clebsch-Gordan coefficients
# ---------------------------------------------------------------------------

@lru_cache(maxsize=200000)
def clebsch_gordan(l1: int, m1: int, l2: int, m2: int, l: int, m: int) -> float:
    """<l1 m1 l2 m2 | l m> via the closed-form factorial sum.

    Out-of-selection-rule inputs return 0. The factorial ratios are carried
    as exact integers (the prefactor is the square root of a rational), so
    accuracy stays near machine precision up to l = 64.
    """
    if abs(m1) > l1 or abs(m2) > l2 or abs(m) > l:
        return 0.0
    if m != m1 + m2:
        return 0.0
    if l < abs(l1 - l2) or l > l1 + l2:
        return 0.0
    if max(l1, l2, l) > L_MAX:
        raise ValueError(f"l beyond supported maximum {L_MAX}")

    f = math.factorial
    pref_sq = Fraction(
        (2 * l + 1) * f(l + l1 - l2) * f(l - l1 + l2) * f(l1 + l2 - l)
        * f(l + m) * f(l - m)
        * f(l1 - m1) * f(l1 + m1) * f(l2 - m2) * f(l2 + m2),
        f(l1 + l2 + l + 1))

    k_min = max(0, -(l - l2 + m1), -(l - l1 - m2))
    k_max = min(l1 + l2 - l, l1 - m1, l2 + m2)
    total = Fraction(0)
    for k in range(k_min, k_max + 1):
        den = (f(k) * f(l1 + l2 - l - k) * f(l1 - m1 - k) * f(l2 + m2 - k)
               * f(l - l2 + m1 + k) * f(l - l1 - m2 + k))
        total += Fraction(-1 if k % 2 else 1, den)
    if total == 0:
        return 0.0
    sign = 1.0 if total > 0 else -1.0
    return sign * math.sqrt(float(pref_sq * total * total))


# ---------------------------------------------------------------------------
# Associated Legendre values at 0 and spherical-harmonic normalization
# ---------------------------------------------------------------------------

def legendre_p0(l: int, m: int) -> float:
    """P_l^m(0), from the binomial expansion of (x^2-1)^l."""
    if not 0 <= m <= l:
        raise ValueError("need 0 <= m <= l")
    if (l + m) % 2 == 1:
        return 0.0
    sign = -1 if ((l - m) // 2) % 2 else 1
    val = Fraction(sign * math.comb(l, (l + m) // 2) * math.factorial(l + m),
                   2 ** l * math.factorial(l))
    return float(val)


def sph_norm(l: int, m: int) -> float:
    """Normalization N_{lm} = sqrt((2l+1)(l-m)!/(4 pi (l+m)!)); m may be negative."""
    lg = math.lgamma
    return math.exp(0.5 * (math.log(2 * l + 1) - math.log(4 * math.pi)
                           + lg(l - m + 1) - lg(l + m + 1)))


def legendre_p0_signed(l: int, m: int) -> float:
    """P_l^m(0) for signed m, via P^{-m} = (-1)^m (l-m)!/(l+m)! P^m."""
    if m >= 0:
        return legendre_p0(l, m)
    am = -m
    ratio = Fraction(math.factorial(l - am), math.factorial(l + am))
    return (-1) ** am * float(ratio) * legendre_p0(l, am)


def equator_coeff(l: int, m: int) -> float:
    """Coefficient of h_m in the equatorial projection of H_{lm}."""
    return (-1) ** m * sph_norm(l, abs(m)) * legendre_p0(l, abs(m))


# ---------------------------------------------------------------------------
# Wigner D-matrices
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _jy_eig(l: int):
    """Eigendecomposition of J_y on the spin-l ladder basis (m ascending)."""
    dim = 2 * l + 1
    jy = np.zeros((dim, dim), dtype=complex)
    for i, m in enumerate(range(-l, l)):
        c = math.sqrt(l * (l + 1) - m * (m + 1))  # J+ |m> = c |m+1>
        jy[i + 1, i] = c / 2j
        jy[i, i + 1] = -c / 2j
    evals, evecs = np.linalg.eigh(jy)
    return evals, evecs


def wigner_little_d(l: int, beta: float) -> np.ndarray:
    """Real little-d matrix d^l(beta), rows/cols indexed m = -l..l."""
    evals, evecs = _jy_eig(l)
    d = (evecs * np.exp(-1j * beta * evals)) @ evecs.conj().T
    return d.real


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in [0, pi]."""
    return 2.0 * math.atan2(np.linalg.norm(q[1:]), abs(q[0]))


def matrix_to_euler_zyz(R: np.ndarray) -> tuple[float, float, float]:
    """ZYZ Euler angles with R = Rz(alpha) Ry(beta) Rz(gamma)."""
    cb = min(1.0, max(-1.0, R[2, 2]))
    beta = math.acos(cb)
    if abs(cb) > 1.0 - 1e-12:
        # gimbal lock: fold gamma into alpha
        if cb > 0:
            return math.atan2(R[1, 0], R[0, 0]), 0.0, 0.0
        return math.atan2(-R[1, 0], -R[0, 0]), math.pi, 0.0
    alpha = math.atan2(R[1, 2], R[0, 2])
    gamma = math.atan2(R[2, 1], -R[2, 0])
    return alpha, beta, gamma


def wigner_d_euler(l: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """D^l(alpha,beta,gamma) acting on Y-coefficient vectors.

    The little-d factor enters transposed so that the coefficient action
    matches rotating the function geometrically, (g.f)(v) = f(g^{-1} v),
    while keeping z-rotations diagonal with entries e^{-i m alpha} and the
    Clebsch-Gordan product rule intact (all three are pinned by tests).
    """
    ms = np.arange(-l, l + 1)
    d = wigner_little_d(l, beta)
    return np.exp(-1j * alpha * ms)[:, None] * d.T * np.exp(-1j * gamma * ms)[None, :]


def wigner_d(l: int, q: np.ndarray) -> np.ndarray:
    """Wigner D-matrix of a unit quaternion, acting on Y-basis coefficients.

    A coefficient vector x (function sum_m x_m Y_lm) transforms under the
    rotation g as x -> D^l(g) x; z-rotations give diag(e^{-i m alpha}).
    """
    alpha, beta, gamma = matrix_to_euler_zyz(quat_to_matrix(q))
    return wigner_d_euler(l, alpha, beta, gamma)


# ---------------------------------------------------------------------------
# Basis changes between complex Y and the real S / H bases
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def basis_h_to_y(l: int) -> np.ndarray:
    """Unitary B with Y-coefficients x = B theta for real H-coefficients theta.

    Columns are indexed by the H label m = -l..l, rows by the Y label k.
    """
    dim = 2 * l + 1
    B = np.zeros((dim, dim), dtype=complex)
    s = 1.0 / math.sqrt(2.0)

    def row(k):
        return k + l

    for m in range(-l, l + 1):
        col = m + l
        if m > 0:
            B[row(m), col] = s
            B[row(-m), col] = s * (-1) ** (l + m)
        elif m == 0:
            B[row(0), col] = 1j ** l
        else:
            am = -m
            B[row(am), col] = 1j * s
            B[row(-am), col] = -1j * s * (-1) ** (l + m)
    return B


@lru_cache(maxsize=None)
def basis_s_to_y(l: int) -> np.ndarray:
    """Unitary mapping real-spherical-harmonic coefficients to Y coefficients."""
    dim = 2 * l + 1
    B = np.zeros((dim, dim), dtype=complex)
    s = 1.0 / math.sqrt(2.0)
    for m in range(-l, l + 1):
        col = m + l
        if m > 0:
            B[m + l, col] = s * (-1) ** m
            B[-m + l, col] = s
        elif m == 0:
            B[l, col] = 1.0
        else:
            am = -m
            B[am + l, col] = s * (-1) ** m / 1j
            B[-am + l, col] = -s * (-1) ** m * (-1) ** am / 1j
    return B


def real_action_block(l: int, q: np.ndarray) -> np.ndarray:
    """Real orthogonal action of rotation q on H-basis coefficients."""
    B = basis_h_to_y(l)
    M = B.conj().T @ wigner_d(l, q) @ B
    if np.abs(M.imag).max() > 1e-9:
        raise ArithmeticError("H-basis action came out non-real")
    return M.real


def real_action_block_s(l: int, q: np.ndarray) -> np.ndarray:
    """Real orthogonal action on S-basis (plain real harmonics) coefficients."""
    B = basis_s_to_y(l)
    M = B.conj().T @ wigner_d(l, q) @ B
    if np.abs(M.imag).max() > 1e-9:
        raise ArithmeticError("S-basis action came out non-real")
    return M.real


# ---------------------------------------------------------------------------
# Pointwise evaluation (used by tests to pin conventions against geometry)
# ---------------------------------------------------------------------------

def sph_harm_y(l: int, m: int, theta: float, phi: float) -> complex:
    """Complex spherical harmonic Y_lm at colatitude theta, azimuth phi."""
    from scipy.special import lpmv

    am = abs(m)
    val = sph_norm(l, am) * lpmv(am, l, math.cos(theta)) * (-1) ** am
    val = val * complex(math.cos(am * phi), math.sin(am * phi))
    if m >= 0:
        return val
    return (-1) ** am * val.conjugate()


def eval_h_function(l: int, coeffs: np.ndarray, theta: float, phi: float) -> complex:
    """Evaluate sum_m coeffs[m+l] H_lm at a point on the sphere."""
    x = basis_h_to_y(l) @ coeffs.astype(complex)
    return sum(x[m + l] * sph_harm_y(l, m, theta, phi) for m in range(-l, l + 1))
