"""Orbit recovery problem instances: groups, actions, projections,
heterogeneity, symmetry restrictions, and the generative sampling model.

Signals over SO(3) are stored as real coefficients in the H basis (shells
outer, frequency blocks inner, m ascending); complex arithmetic stays inside
the so3 module.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .rng import make_rng

_SIM_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# Problem specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemSpec:
    """One orbit recovery experiment: group, representation, projection,
    heterogeneity and noise level."""

    group: str                      # "cyclic" | "symmetric" | "so3"
    p: int = 0                      # order parameter for finite families
    shells: int = 0                 # S (so3 only)
    freqs: int = 0                  # F (so3 only)
    projection: str = "none"        # "none" | "mra_ring" | "equator"
    K: int = 1
    weights: tuple = ()             # mixing weights, default uniform
    sigma: float = 0.0
    symmetry: int = 0               # L >= 2 for cyclic-about-z restriction

    def __post_init__(self):
        if self.group not in ("cyclic", "symmetric", "so3"):
            raise ValueError(f"unknown group family {self.group!r}")
        if self.group in ("cyclic", "symmetric"):
            if self.p < 1:
                raise ValueError("finite groups need p >= 1")
        else:
            if self.shells < 1 or self.freqs < 1:
                raise ValueError("so3 needs shells >= 1 and freqs >= 1")
        if self.projection not in ("none", "mra_ring", "equator"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.projection == "mra_ring":
            if self.group != "cyclic" or self.p < 3 or self.p % 2 == 0:
                raise ValueError("mra_ring projection requires cyclic(p), p odd >= 3")
        if self.projection == "equator" and self.group != "so3":
            raise ValueError("equator projection requires so3")
        if self.K < 1:
            raise ValueError("K >= 1 required")
        if not self.weights:
            object.__setattr__(self, "weights", tuple([1.0 / self.K] * self.K))
        w = self.weights
        if len(w) != self.K or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("weights must be a nonnegative length-K simplex vector")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.symmetry:
            if self.group != "so3" or self.symmetry < 1:
                raise ValueError("symmetry restriction is so3-only, L >= 1")

    # -- dimensions ---------------------------------------------------------

    @property
    def dim(self) -> int:
        """Ambient dimension of one component."""
        if self.group in ("cyclic", "symmetric"):
            return self.p
        return self.shells * sum(2 * l + 1 for l in range(1, self.freqs + 1))

    @property
    def dim_observed(self) -> int:
        if self.projection == "none":
            return self.dim
        if self.projection == "mra_ring":
            return (self.p - 1) // 2
        return self.shells * (2 * self.freqs + 1)

    @property
    def group_order(self):
        if self.group == "cyclic":
            return self.p
        if self.group == "symmetric":
            return math.factorial(self.p)
        return None

    # -- so3 index helpers ----------------------------------------------------

    def so3_index(self, s: int, l: int, m: int) -> int:
        """Flat index of coefficient (shell s, frequency l, order m), 1-based s, l."""
        per_shell = sum(2 * ll + 1 for ll in range(1, self.freqs + 1))
        off = (s - 1) * per_shell + sum(2 * ll + 1 for ll in range(1, l))
        return off + (m + l)

    def so3_blocks(self):
        """Yield (s, l, start, stop) for every (shell, frequency) block."""
        for s in range(1, self.shells + 1):
            for l in range(1, self.freqs + 1):
                start = self.so3_index(s, l, -l)
                yield s, l, start, start + 2 * l + 1

    def homogeneous(self) -> "ProblemSpec":
        """The K=1 version of this spec."""
        if self.K == 1:
            return self
        return ProblemSpec(group=self.group, p=self.p, shells=self.shells,
                           freqs=self.freqs, projection=self.projection,
                           K=1, sigma=self.sigma, symmetry=self.symmetry)

    def max_orbit_dim(self) -> int:
        if self.group != "so3":
            return 0
        return 3 if self.freqs >= 2 else 2


def mra_spec(p: int, K: int = 1, sigma: float = 0.0, projected: bool = False,
             weights: tuple = ()) -> ProblemSpec:
    return ProblemSpec(group="cyclic", p=p, K=K, sigma=sigma, weights=weights,
                       projection="mra_ring" if projected else "none")


def cryo_spec(shells: int, freqs: int, K: int = 1, sigma: float = 0.0,
              projected: bool = True, symmetry: int = 0,
              weights: tuple = ()) -> ProblemSpec:
    return ProblemSpec(group="so3", shells=shells, freqs=freqs, K=K,
                       sigma=sigma, symmetry=symmetry, weights=weights,
                       projection="equator" if projected else "none")


# ---------------------------------------------------------------------------
# Signals and group elements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Signal:
    """K real coefficient vectors in the ambient space of a spec."""

    spec: ProblemSpec
    components: np.ndarray  # (K, dim)

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.components, dtype=float))
        if arr.shape != (self.spec.K, self.spec.dim):
            raise ValueError(f"components must be {self.spec.K} x {self.spec.dim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal entries must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "components", arr)

    @property
    def vector(self) -> np.ndarray:
        """The single component, for K = 1 specs."""
        if self.spec.K != 1:
            raise ValueError("vector is only defined for K = 1")
        return self.components[0]


def random_signal(spec: ProblemSpec, seed: int, scale: float = 1.0) -> Signal:
    rng = make_rng(seed, "signal")
    comps = scale * rng.normal(size=(spec.K, spec.dim))
    sig = Signal(spec, comps)
    if spec.symmetry:
        sig = restrict_symmetric(spec, sig)
    return sig


@dataclass(frozen=True)
class GroupElement:
    family: str
    shift: int = 0                      # cyclic residue
    perm: tuple = ()                    # symmetric: j -> perm[j] position map
    quat: np.ndarray | None = None      # so3 unit quaternion (w, x, y, z)

    def __post_init__(self):
        if self.family == "so3":
            q = np.asarray(self.quat, dtype=float)
            if abs(np.linalg.norm(q) - 1.0) > 1e-12:
                raise ValueError("quaternion must be unit norm")
            q = q.copy()
            q.setflags(write=False)
            object.__setattr__(self, "quat", q)
        elif self.family == "symmetric":
            if sorted(self.perm) != list(range(len(self.perm))):
                raise ValueError("perm must be a bijection of 0..p-1")

    @property
    def angle(self) -> float:
        """Rotation angle (so3 only)."""
        return so3.quat_angle(self.quat)


def group_identity(spec: ProblemSpec) -> GroupElement:
    if spec.group == "cyclic":
        return GroupElement("cyclic", shift=0)
    if spec.group == "symmetric":
        return GroupElement("symmetric", perm=tuple(range(spec.p)))
    return GroupElement("so3", quat=np.array([1.0, 0.0, 0.0, 0.0]))


def group_compose(spec: ProblemSpec, g: GroupElement, h: GroupElement) -> GroupElement:
    """Element gh, so act(gh, x) = act(g, act(h, x))."""
    if spec.group == "cyclic":
        return GroupElement("cyclic", shift=(g.shift + h.shift) % spec.p)
    if spec.group == "symmetric":
        return GroupElement("symmetric",
                            perm=tuple(g.perm[h.perm[i]] for i in range(spec.p)))
    q = so3.quat_multiply(g.quat, h.quat)
    return GroupElement("so3", quat=q / np.linalg.norm(q))


def group_inverse(spec: ProblemSpec, g: GroupElement) -> GroupElement:
    if spec.group == "cyclic":
        return GroupElement("cyclic", shift=(-g.shift) % spec.p)
    if spec.group == "symmetric":
        inv = [0] * spec.p
        for i, j in enumerate(g.perm):
            inv[j] = i
        return GroupElement("symmetric", perm=tuple(inv))
    return GroupElement("so3", quat=so3.quat_conj(g.quat))


def group_elements(spec: ProblemSpec, cap: int = 10 ** 6):
    """All elements of a finite group (error on so3 or if too large)."""
    if spec.group == "cyclic":
        return [GroupElement("cyclic", shift=g) for g in range(spec.p)]
    if spec.group == "symmetric":
        if math.factorial(spec.p) > cap:
            raise ValueError(f"group too large to enumerate (p={spec.p})")
        return [GroupElement("symmetric", perm=perm)
                for perm in itertools.permutations(range(spec.p))]
    raise ValueError("so3 is not a finite group")


# ---------------------------------------------------------------------------
# Sampling, action, projection
# ---------------------------------------------------------------------------

def haar_sample(spec: ProblemSpec, rng: np.random.Generator) -> GroupElement:
    """One Haar-uniform group element."""
    if spec.group == "cyclic":
        return GroupElement("cyclic", shift=int(rng.integers(spec.p)))
    if spec.group == "symmetric":
        return GroupElement("symmetric", perm=tuple(int(i) for i in rng.permutation(spec.p)))
    q = rng.normal(size=4)
    return GroupElement("so3", quat=q / np.linalg.norm(q))


def act(spec: ProblemSpec, g: GroupElement, theta: np.ndarray) -> np.ndarray:
    """Orthogonal action of g on one component vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.dim,):
        raise ValueError(f"component must have dimension {spec.dim}")
    if spec.group == "cyclic":
        # residue g sends index i to i+g (mod p)
        return np.roll(theta, g.shift)
    if spec.group == "symmetric":
        out = np.empty_like(theta)
        out[np.array(g.perm)] = theta
        return out
    out = np.empty_like(theta)
    blocks = {l: so3.real_action_block(l, g.quat) for l in range(1, spec.freqs + 1)}
    for _, l, a, b in spec.so3_blocks():
        out[a:b] = blocks[l] @ theta[a:b]
    return out


def equator_matrix(spec: ProblemSpec) -> np.ndarray:
    """Linear map revealing each shell's values on the equator (H to h_m basis)."""
    q, p = spec.dim_observed, spec.dim
    P = np.zeros((q, p))
    F = spec.freqs
    for s, l, a, _ in spec.so3_blocks():
        for m in range(-l, l + 1):
            row = (s - 1) * (2 * F + 1) + (m + F)
            P[row, a + m + l] = so3.equator_coeff(l, m)
    return P


def projection_matrix(spec: ProblemSpec) -> np.ndarray:
    """Dense matrix of the spec's projection (identity if none)."""
    if spec.projection == "none":
        return np.eye(spec.dim)
    if spec.projection == "mra_ring":
        p, q = spec.p, spec.dim_observed
        P = np.zeros((q, p))
        for i in range(q):
            P[i, i] = 1.0
            P[i, p - 1 - i] = 1.0
        return P
    return equator_matrix(spec)


def project(spec: ProblemSpec, v: np.ndarray) -> np.ndarray:
    """Apply the spec's projection to one component vector."""
    if spec.projection == "none":
        raise ValueError("spec has no projection")
    v = np.asarray(v, dtype=float)
    if spec.projection == "mra_ring":
        q = spec.dim_observed
        return v[:q] + v[:q:-1]
    return equator_matrix(spec) @ v


def observe(spec: ProblemSpec, v: np.ndarray) -> np.ndarray:
    """Project if the spec has a projection, else pass through."""
    return v if spec.projection == "none" else project(spec, v)


def restrict_symmetric(spec: ProblemSpec, signal: Signal) -> Signal:
    """Zero every coefficient with m not divisible by the symmetry order L."""
    if spec.group != "so3" or not spec.symmetry:
        raise ValueError("symmetry restriction needs an so3 spec with L set")
    L = spec.symmetry
    comps = np.array(signal.components)
    for _, l, a, _ in spec.so3_blocks():
        for m in range(-l, l + 1):
            if m % L != 0:
                comps[:, a + m + l] = 0.0
    return Signal(spec, comps)


def symmetric_support(spec: ProblemSpec) -> np.ndarray:
    """Indices of coefficients surviving the symmetry restriction."""
    L = spec.symmetry
    keep = []
    for _, l, a, _ in spec.so3_blocks():
        for m in range(-l, l + 1):
            if not L or m % L == 0:
                keep.append(a + m + l)
    return np.array(keep, dtype=int)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    spec: ProblemSpec
    y: np.ndarray           # (n, q)
    sigma: float
    seed: int
    truth: Signal | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return len(self.y)


def _so3_blocks_for_quats(spec: ProblemSpec, quats: np.ndarray) -> dict:
    """Per-frequency stacks of action matrices for a batch of quaternions."""
    out = {}
    for l in range(1, spec.freqs + 1):
        out[l] = np.stack([so3.real_action_block(l, q) for q in quats])
    return out


def _simulate_chunk(spec: ProblemSpec, comps: np.ndarray, rng: np.random.Generator,
                    m: int) -> np.ndarray:
    K, dim = comps.shape
    ks = rng.choice(K, size=m, p=np.asarray(spec.weights)) if K > 1 else np.zeros(m, dtype=int)
    if spec.group == "cyclic":
        shifts = rng.integers(0, spec.p, size=m)
        cols = (np.arange(spec.p)[None, :] - shifts[:, None]) % spec.p
        x = comps[ks[:, None], cols]
    elif spec.group == "symmetric":
        perms = rng.permuted(np.tile(np.arange(spec.p), (m, 1)), axis=1)
        x = np.empty((m, spec.p))
        np.put_along_axis(x, perms, comps[ks], axis=1)
    else:
        quats = rng.normal(size=(m, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        blocks = _so3_blocks_for_quats(spec, quats)
        x = np.empty((m, dim))
        for _, l, a, b in spec.so3_blocks():
            x[:, a:b] = np.einsum("nij,nj->ni", blocks[l], comps[ks, a:b])
    if spec.projection == "mra_ring":
        q = spec.dim_observed
        y = x[:, :q] + x[:, :q:-1]
    elif spec.projection == "equator":
        y = x @ equator_matrix(spec).T
    else:
        y = x
    if spec.sigma > 0:
        y = y + spec.sigma * rng.normal(size=y.shape)
    return y


def simulate(spec: ProblemSpec, signal: Signal, n: int, seed: int) -> SampleSet:
    """Draw n samples y_i = project(g_i . theta_{k_i}) + sigma xi_i.

    Generation is chunked with one counter-based stream per chunk, so the
    output is byte-identical however the chunks are scheduled.
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    q = spec.dim_observed
    y = np.empty((n, q))
    for c, start in enumerate(range(0, n, _SIM_CHUNK)):
        m = min(_SIM_CHUNK, n - start)
        rng = make_rng(seed, "simulate", c)
        y[start:start + m] = _simulate_chunk(spec, signal.components, rng, m)
    return SampleSet(spec=spec, y=y, sigma=spec.sigma, seed=seed, truth=signal)


def simulate_chunks(spec: ProblemSpec, signal: Signal, n: int, seed: int):
    """Yield simulate()'s output in chunks without materializing all samples."""
    for c, start in enumerate(range(0, n, _SIM_CHUNK)):
        m = min(_SIM_CHUNK, n - start)
        rng = make_rng(seed, "simulate", c)
        yield _simulate_chunk(spec, signal.components, rng, m)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ProblemSpec) -> dict:
    return {
        "group": spec.group, "p": spec.p, "shells": spec.shells,
        "freqs": spec.freqs, "projection": spec.projection, "K": spec.K,
        "weights": list(spec.weights), "sigma": spec.sigma,
        "symmetry": spec.symmetry,
    }


def spec_from_dict(d: dict) -> ProblemSpec:
    return ProblemSpec(group=d["group"], p=d.get("p", 0),
                       shells=d.get("shells", 0), freqs=d.get("freqs", 0),
                       projection=d.get("projection", "none"), K=d.get("K", 1),
                       weights=tuple(d.get("weights", ())),
                       sigma=d.get("sigma", 0.0), symmetry=d.get("symmetry", 0))


def signal_to_json(signal: Signal) -> str:
    return json.dumps({"spec": spec_to_dict(signal.spec),
                       "components": signal.components.tolist()})


def signal_from_json(text: str) -> Signal:
    d = json.loads(text)
    return Signal(spec_from_dict(d["spec"]), np.array(d["components"]))


def sampleset_to_json(samples: SampleSet) -> str:
    d = {"spec": spec_to_dict(samples.spec), "sigma": samples.sigma,
         "seed": samples.seed, "n": samples.n, "y": samples.y.tolist()}
    if samples.truth is not None:
        d["truth"] = samples.truth.components.tolist()
    return json.dumps(d)


def sampleset_from_json(text: str) -> SampleSet:
    d = json.loads(text)
    spec = spec_from_dict(d["spec"])
    truth = Signal(spec, np.array(d["truth"])) if "truth" in d else None
    return SampleSet(spec=spec, y=np.array(d["y"]), sigma=d["sigma"],
                     seed=d["seed"], truth=truth)


_BIN_MAGIC = b"OMNT"
_BIN_VERSION = 1
_HEADER = struct.Struct("<4sIQQd")  # magic, version, n, q, sigma


def save_samples_bin(samples: SampleSet, path: str) -> None:
    """Flat little-endian f64 sample matrix behind a 64-byte header."""
    header = _HEADER.pack(_BIN_MAGIC, _BIN_VERSION, samples.n,
                          samples.y.shape[1], samples.sigma)
    with open(path, "wb") as fh:
        fh.write(header.ljust(64, b"\0"))
        fh.write(np.ascontiguousarray(samples.y, dtype="<f8").tobytes())


def load_samples_bin(path: str, spec: ProblemSpec | None = None,
                     seed: int = -1) -> SampleSet:
    with open(path, "rb") as fh:
        header = fh.read(64)
        magic, version, n, q, sigma = _HEADER.unpack(header[:_HEADER.size])
        if magic != _BIN_MAGIC:
            raise ValueError("not an OMNT sample file")
        if version != _BIN_VERSION:
            raise ValueError(f"unsupported version {version}")
        y = np.frombuffer(fh.read(n * q * 8), dtype="<f8").reshape(n, q).copy()
    if spec is None:
        spec = ProblemSpec(group="cyclic", p=q, sigma=sigma)
    return SampleSet(spec=spec, y=y, sigma=sigma, seed=seed)
