"""Random multi-particle lattice Hamiltonians and their restrictions."""
from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .geometry import Rectangle, as_config, cube_sites, find_split


@dataclass(frozen=True)
class InteractionSpec:
    """Two-body potential Phi tabulated on 0..r0 (zero beyond r0)."""

    phi_table: tuple[float, ...] = ()

    def __post_init__(self):
        table = tuple(float(v) for v in self.phi_table)
        if any(v < 0 or not math.isfinite(v) for v in table):
            raise ValueError("interaction values must be finite and non-negative")
        object.__setattr__(self, "phi_table", table)

    @property
    def r0(self) -> int:
        return max(len(self.phi_table) - 1, 0)

    def phi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.int64)
        table = np.append(np.asarray(self.phi_table, dtype=float), 0.0)
        return table[np.minimum(r, len(table) - 1)]


NO_INTERACTION = InteractionSpec(())


def interaction_energy(x, spec: InteractionSpec) -> float:
    a = as_config(x)
    return float(interaction_batch(a.reshape(1, -1), a.shape[0], a.shape[1], spec)[0])


def interaction_batch(sites: np.ndarray, n: int, d: int, spec: InteractionSpec) -> np.ndarray:
    """U at each row of ``sites`` (shape (M, n*d))."""
    out = np.zeros(sites.shape[0])
    if n < 2 or not spec.phi_table:
        return out
    X = sites.reshape(-1, n, d)
    for i in range(n):
        for j in range(i + 1, n):
            out += spec.phi(np.abs(X[:, i] - X[:, j]).max(axis=1))
    return out


def _zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


@dataclass(frozen=True)
class DisorderEnsemble:
    """Single-site distribution with counter-based sampling.

    kind: "uniform01", "scaled_uniform" (needs ``a``), "smoothed_log_holder"
    (needs ``C``, ``A``; V = exp(-u^(-1/(2A))) with u uniform), or "zero".
    """

    kind: str = "uniform01"
    seed_root: int = 0xA11CE
    a: float | None = None
    C: float | None = None
    A: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform01", "scaled_uniform", "smoothed_log_holder", "zero"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.kind == "scaled_uniform" and not (self.a and self.a > 0):
            raise ValueError("scaled_uniform needs a > 0")
        if self.kind == "smoothed_log_holder" and not (self.A and self.A > 0):
            raise ValueError("smoothed_log_holder needs A > 0")
        if not 0 <= int(self.seed_root) < 2 ** 64:
            raise ValueError("seed_root must fit in 64 bits")

    def uniforms(self, realization: int, sites: np.ndarray) -> np.ndarray:
        """One uniform in [0, 1) per site, keyed by (seed_root, realization, site)."""
        sites = np.asarray(sites, dtype=np.int64)
        sites = sites.reshape(sites.shape[0], -1) if sites.ndim > 1 else sites.reshape(-1, 1)
        out = np.empty(sites.shape[0])
        root = int(self.seed_root)
        for i, s in enumerate(sites.tolist()):
            key = (int(realization), *(_zigzag(c) for c in s))
            word = np.random.SeedSequence(root, spawn_key=key).generate_state(1, np.uint64)[0]
            out[i] = (int(word) >> 11) * 2.0 ** -53
        return out

    def transform(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "uniform01":
            return u
        if self.kind == "scaled_uniform":
            return self.a * u
        if self.kind == "zero":
            return np.zeros_like(u)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(u > 0, np.exp(-u ** (-1.0 / (2 * self.A))), 0.0)

    def values(self, realization: int, sites: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(len(np.atleast_2d(sites)))
        return self.transform(self.uniforms(realization, sites))

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class PotentialSample:
    """Single-site potential values on an explicit window of Z^d."""

    d: int
    values: dict[tuple[int, ...], float] = field(default_factory=dict)

    @property
    def window(self) -> frozenset:
        return frozenset(self.values)

    def merge(self, other: "PotentialSample") -> "PotentialSample":
        for k, v in other.values.items():
            if k in self.values and self.values[k] != v:
                raise ValueError(f"conflicting values at site {k}")
        return PotentialSample(self.d, {**self.values, **other.values})

    def box(self, low, high) -> np.ndarray:
        """Values on the box [low, high], shaped as the box."""
        low, high = np.asarray(low), np.asarray(high)
        shape = tuple(int(v) for v in high - low + 1)
        try:
            flat = [self.values[tuple(s)] for s in cube_sites(low, high).tolist()]
        except KeyError as exc:
            raise ValueError(f"potential window misses site {exc.args[0]}") from None
        return np.array(flat).reshape(shape)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.d)] + ["value"])
        for site in sorted(self.values):
            w.writerow([*site, repr(float(self.values[site]))])
        return buf.getvalue()


def sample_potential(e: DisorderEnsemble, realization: int, window: Iterable) -> PotentialSample:
    sites = sorted({tuple(int(c) for c in np.atleast_1d(s)) for s in window})
    if not sites:
        return PotentialSample(1)
    d = len(sites[0])
    vals = e.values(realization, np.array(sites, dtype=np.int64))
    return PotentialSample(d, dict(zip(sites, vals.tolist())))


def sample_for(e: DisorderEnsemble, realization: int, *rects: Rectangle) -> PotentialSample:
    """Potential on the union of the projections of ``rects``."""
    window: set = set()
    for r in rects:
        for i in range(r.n):
            lo, hi = r.one_particle_cube(i)
            window.update(map(tuple, cube_sites(lo, hi).tolist()))
    return sample_potential(e, realization, window)


def constant_potential(value: float, *rects: Rectangle, pad: int = 0) -> PotentialSample:
    window: set = set()
    for r in rects:
        for i in range(r.n):
            lo, hi = r.one_particle_cube(i)
            window.update(map(tuple, cube_sites(lo - pad, hi + pad).tolist()))
    d = rects[0].d if rects else 1
    return PotentialSample(d, {s: float(value) for s in window})


def continuity_modulus(e: DisorderEnsemble, eps: float) -> float:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if e.kind == "zero":
        return 1.0
    if e.kind == "uniform01":
        return min(eps, 1.0)
    if e.kind == "scaled_uniform":
        return min(eps / e.a, 1.0)
    if eps >= 1:
        return 1.0
    C = 1.0 if e.C is None else e.C
    return min(C / abs(math.log(eps)) ** (2 * e.A), 1.0)


def required_holder_exponent(N: int, p: float, d: int) -> float:
    return 1.5 * 4 ** N * p + 9 * N * d


def assumption_P_check(e: DisorderEnsemble, params, levels: Iterable[int] = ()) -> dict:
    """Advisory comparison of the ensemble regularity with the required exponent."""
    need = required_holder_exponent(params.N, params.p, params.d)
    if e.kind == "smoothed_log_holder":
        status = "satisfied" if e.A > need else "not satisfied"
    elif e.kind in ("uniform01", "scaled_uniform"):
        status = "satisfied asymptotically"
    else:
        status = "degenerate distribution"
    rows = []
    for L in levels:
        eps = math.exp(-L ** params.beta)
        rows.append({"L": int(L), "eps": eps, "modulus": continuity_modulus(e, eps)})
    return {"required_A": need, "A": e.A, "status": status, "levels": rows}


@dataclass
class OperatorMatrix:
    rectangle: Rectangle
    matrix: sp.csr_matrix
    diagonal_potential: np.ndarray  # sum_j V(x_j) + U(x), row-major

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def index_of(self, config) -> int:
        return int(self.rectangle.index_of(np.asarray(config).ravel())[0])

    def config_of(self, index: int) -> np.ndarray:
        return self.rectangle.config_of(index)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _chain(w: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(w - 1), -np.ones(w - 1)], [-1, 1], shape=(w, w), format="csr")


def hopping_matrix(shape: tuple[int, ...]) -> sp.csr_matrix:
    """Off-diagonal part of the restricted Laplacian: -1 on l1-neighbors."""
    total = math.prod(shape)
    out = sp.csr_matrix((total, total))
    for ax, w in enumerate(shape):
        left = math.prod(shape[:ax])
        right = math.prod(shape[ax + 1:])
        out = out + sp.kron(sp.kron(sp.identity(left), _chain(w)), sp.identity(right))
    return out.tocsr()


def potential_diagonal(r: Rectangle, pot: PotentialSample, spec: InteractionSpec) -> np.ndarray:
    n, d = r.n, r.d
    total = np.zeros(r.shape)
    for i in range(n):
        lo, hi = r.one_particle_cube(i)
        block = pot.box(lo, hi)
        idx = [np.newaxis] * (n * d)
        idx[i * d:(i + 1) * d] = [slice(None)] * d
        total = total + block[tuple(idx)]
    diag = total.ravel()
    if n > 1 and spec.phi_table:
        diag = diag + interaction_batch(r.sites(), n, d, spec)
    return diag


@functools.lru_cache(maxsize=64)
def _pattern(shape: tuple[int, ...]) -> tuple[sp.csr_matrix, np.ndarray]:
    """Hopping matrix with explicit diagonal slots, and the positions of those slots in .data."""
    total = math.prod(shape)
    H = (hopping_matrix(shape) + sp.diags(np.full(total, np.inf))).tocsr()
    H.sort_indices()
    rows = np.repeat(np.arange(total), np.diff(H.indptr))
    pos = np.flatnonzero(rows == H.indices)
    return H, pos


def assemble(r: Rectangle, pot: PotentialSample, spec: InteractionSpec = NO_INTERACTION) -> OperatorMatrix:
    pdiag = potential_diagonal(r, pot, spec)
    base, pos = _pattern(tuple(r.shape))
    data = base.data.copy()
    data[pos] = 2 * r.n * r.d + pdiag
    H = sp.csr_matrix((data, base.indices.copy(), base.indptr.copy()), shape=base.shape)
    return OperatorMatrix(r, H, pdiag)


@dataclass
class TensorSplit:
    J: tuple[int, ...]
    Jc: tuple[int, ...]
    left: OperatorMatrix
    right: OperatorMatrix


def sub_rectangle(r: Rectangle, labels: Iterable[int]) -> Rectangle:
    labels = list(labels)
    return Rectangle(tuple(r.center[j - 1] for j in labels), tuple(r.radii[j - 1] for j in labels))


def tensor_split(r: Rectangle, pot: PotentialSample, spec: InteractionSpec = NO_INTERACTION) -> TensorSplit:
    """Factor operators H' on Pi_J and H'' on Pi_{J^c} of a partially interactive rectangle."""
    split = find_split(r, spec.r0)
    if split is None:
        raise ValueError("rectangle is fully interactive; no tensor split")
    J, Jc = split
    return TensorSplit(J, Jc, assemble(sub_rectangle(r, J), pot, spec),
                       assemble(sub_rectangle(r, Jc), pot, spec))


@dataclass
class BoxVector:
    """Finitely supported vector on (Z^d)^n, stored on the box [lower, lower+shape)."""

    lower: tuple[int, ...]
    values: np.ndarray

    @property
    def upper(self) -> tuple[int, ...]:
        return tuple(int(a + w - 1) for a, w in zip(self.lower, self.values.shape))


def apply_ambient(vec: BoxVector, pot: PotentialSample, spec: InteractionSpec, n: int, d: int) -> BoxVector:
    """Apply the full lattice operator; the result lives on the box grown by one."""
    v = np.pad(vec.values, 1)
    nd = n * d
    if v.ndim != nd:
        raise ValueError("vector rank must equal n*d")
    out = 2 * nd * v
    for ax in range(nd):
        out = out - np.roll(v, 1, axis=ax) - np.roll(v, -1, axis=ax)
    lower = np.array(vec.lower) - 1
    upper = lower + np.array(v.shape) - 1
    # potential on the padded box; the box need not be a rectangle, so build it directly
    total = np.zeros(v.shape)
    for i in range(n):
        block = pot.box(lower[i * d:(i + 1) * d], upper[i * d:(i + 1) * d])
        idx = [np.newaxis] * nd
        idx[i * d:(i + 1) * d] = [slice(None)] * d
        total = total + block[tuple(idx)]
    if n > 1 and spec.phi_table:
        sites = np.indices(v.shape).reshape(nd, -1).T + lower
        total = total + interaction_batch(sites, n, d, spec).reshape(v.shape)
    return BoxVector(tuple(int(c) for c in lower), out + total * v)
