"""Lattice geometry for n-particle configurations in Z^d.

A configuration of n particles in Z^d is stored as an integer array of
shape (n, d).  Flat arrays of length n*d are accepted wherever a
configuration is expected when d == 1.  Particle labels used in index
subsets J are 1-based, matching the usual mathematical notation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import networkx as nx
import numpy as np


class ShapeError(ValueError):
    """Configurations with mismatched (n, d)."""


def as_config(x, d: int | None = None) -> np.ndarray:
    """Normalize ``x`` to an int64 array of shape (n, d).

    A flat sequence is read as n particles in dimension ``d`` (default 1).
    """
    a = np.asarray(x, dtype=np.int64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        dd = 1 if d is None else d
        if a.size % dd:
            raise ShapeError(f"cannot split {a.size} coordinates into d={dd}")
        a = a.reshape(-1, dd)
    elif a.ndim != 2:
        raise ShapeError(f"configuration must be 1-d or 2-d, got ndim={a.ndim}")
    if d is not None and a.shape[1] != d:
        raise ShapeError(f"expected d={d}, got {a.shape[1]}")
    return a


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_config(x), as_config(y)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def max_norm(x, y) -> int:
    a, b = _pair(x, y)
    return int(np.abs(a - b).max(initial=0))


def l1_norm(x, y) -> int:
    a, b = _pair(x, y)
    return int(np.abs(a - b).sum())


def _to_tuple(a: np.ndarray) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(v) for v in row) for row in a)


@dataclass(frozen=True)
class Rectangle:
    """Product of one-particle cubes C_{L_i}(u_i), i = 1..n."""

    center: tuple[tuple[int, ...], ...]
    radii: tuple[int, ...]

    def __post_init__(self):
        c = as_config(self.center)
        radii = tuple(int(r) for r in np.atleast_1d(self.radii))
        if len(radii) == 1 and c.shape[0] > 1:
            radii = radii * c.shape[0]
        if len(radii) != c.shape[0]:
            raise ShapeError("one radius per particle is required")
        if min(radii) < 0:
            raise ValueError("radii must be non-negative")
        object.__setattr__(self, "center", _to_tuple(c))
        object.__setattr__(self, "radii", radii)

    @classmethod
    def cube(cls, center, L: int, d: int | None = None) -> "Rectangle":
        c = as_config(center, d)
        return cls(_to_tuple(c), (int(L),) * c.shape[0])

    @property
    def n(self) -> int:
        return len(self.radii)

    @property
    def d(self) -> int:
        return len(self.center[0])

    @property
    def is_cube(self) -> bool:
        return len(set(self.radii)) == 1

    @property
    def L(self) -> int:
        """Minimal radius (the length scale of a rectangle)."""
        return min(self.radii)

    @property
    def center_array(self) -> np.ndarray:
        return np.array(self.center, dtype=np.int64)

    @property
    def axis_radii(self) -> np.ndarray:
        return np.repeat(np.array(self.radii, dtype=np.int64), self.d)

    @property
    def lows(self) -> np.ndarray:
        return self.center_array.ravel() - self.axis_radii

    @property
    def highs(self) -> np.ndarray:
        return self.center_array.ravel() + self.axis_radii

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(v) for v in 2 * self.axis_radii + 1)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def sites(self) -> np.ndarray:
        """All configurations, row-major, as an array of shape (size, n*d)."""
        grids = np.indices(self.shape).reshape(len(self.shape), -1).T
        return grids + self.lows

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64).reshape(-1, self.n * self.d)
        return np.all((p >= self.lows) & (p <= self.highs), axis=1)

    def index_of(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64).reshape(-1, self.n * self.d)
        if not self.contains(p).all():
            raise ValueError("configuration outside the rectangle")
        return np.ravel_multi_index(tuple((p - self.lows).T), self.shape)

    def config_of(self, index: int) -> np.ndarray:
        flat = np.array(np.unravel_index(index, self.shape)) + self.lows
        return flat.reshape(self.n, self.d)

    def one_particle_cube(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(low, high) corners of C_{L_i}(u_i); ``i`` is 0-based here."""
        c = self.center_array[i]
        return c - self.radii[i], c + self.radii[i]

    def to_json(self) -> dict:
        return {"center": [list(p) for p in self.center], "radii": list(self.radii)}


def cube_sites(low, high) -> np.ndarray:
    """Sites of the box [low, high] in Z^d, row-major, shape (count, d)."""
    low = np.asarray(low, dtype=np.int64)
    high = np.asarray(high, dtype=np.int64)
    shape = tuple(int(v) for v in high - low + 1)
    return np.indices(shape).reshape(len(shape), -1).T + low


@dataclass(frozen=True)
class Boundaries:
    pairs: np.ndarray  # (P, 2, n*d): inside site, outside neighbor
    inner: np.ndarray  # (I, n*d)
    outer: np.ndarray  # (O, n*d)


def boundaries(r: Rectangle) -> Boundaries:
    sites = r.sites()
    nd = sites.shape[1]
    inside, outside = [], []
    for ax in range(nd):
        for step, edge in ((-1, r.lows[ax]), (1, r.highs[ax])):
            s = sites[sites[:, ax] == edge]
            o = s.copy()
            o[:, ax] += step
            inside.append(s)
            outside.append(o)
    ins = np.concatenate(inside)
    outs = np.concatenate(outside)
    return Boundaries(
        pairs=np.stack([ins, outs], axis=1),
        inner=np.unique(ins, axis=0),
        outer=np.unique(outs, axis=0),
    )


def inner_boundary_indices(r: Rectangle) -> np.ndarray:
    """Flat indices of the inner boundary, computed without site lists."""
    shape = r.shape
    mask = np.zeros(shape, dtype=bool)
    for ax, w in enumerate(shape):
        sl = [slice(None)] * len(shape)
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = w - 1
        mask[tuple(sl)] = True
    return np.flatnonzero(mask.ravel())


def _check_subset(J: Iterable[int], n: int) -> tuple[int, ...]:
    J = tuple(sorted(set(int(j) for j in J)))
    if not J:
        raise ValueError("index subset J must be nonempty")
    if J[0] < 1 or J[-1] > n:
        raise ValueError(f"J must be a subset of 1..{n}")
    return J


def projection(r: Rectangle, J: Iterable[int] | None = None) -> frozenset:
    """Union of one-particle cubes C_{L_j}(u_j), j in J, as a set of d-tuples."""
    J = _check_subset(range(1, r.n + 1) if J is None else J, r.n)
    out: set[tuple[int, ...]] = set()
    for j in J:
        lo, hi = r.one_particle_cube(j - 1)
        out.update(map(tuple, cube_sites(lo, hi).tolist()))
    return frozenset(out)


def _disjoint_matrix(ca, La, cb, Lb) -> np.ndarray:
    """[i, j] is True when C_{La_i}(ca_i) and C_{Lb_j}(cb_j) do not meet."""
    dist = np.abs(ca[:, None, :] - cb[None, :, :]).max(axis=2)
    return dist > (np.asarray(La)[:, None] + np.asarray(Lb)[None, :])


def subsets(n: int) -> list[tuple[int, ...]]:
    """Nonempty subsets of 1..n in lexicographic order."""
    out = [c for k in range(1, n + 1) for c in itertools.combinations(range(1, n + 1), k)]
    return sorted(out)


def pre_separable_witness(a: Rectangle, b: Rectangle) -> tuple[int, ...] | None:
    """Smallest J with Pi_J a disjoint from Pi_{J^c} a and from Pi b, or None."""
    ca, cb = a.center_array, b.center_array
    self_dis = _disjoint_matrix(ca, a.radii, ca, a.radii)
    cross_dis = _disjoint_matrix(ca, a.radii, cb, b.radii)
    for J in subsets(a.n):
        idx = [j - 1 for j in J]
        rest = [k for k in range(a.n) if k not in idx]
        if cross_dis[idx].all() and self_dis[np.ix_(idx, rest)].all():
            return J
    return None


@dataclass(frozen=True)
class SeparabilityVerdict:
    separable: bool
    witness_subset: tuple[int, ...] | None
    distance: int
    pre_separable: bool = False
    witness_side: str | None = None  # "first": a from b, "second": b from a

    def to_json(self) -> dict:
        return {
            "separable": self.separable,
            "witness_subset": None if self.witness_subset is None else list(self.witness_subset),
            "distance": self.distance,
            "pre_separable": self.pre_separable,
            "witness_side": self.witness_side,
        }


def is_separable(a: Rectangle, b: Rectangle, N: int) -> SeparabilityVerdict:
    if (a.n, a.d) != (b.n, b.d):
        raise ShapeError("rectangles must share n and d")
    L = max(a.radii + b.radii)
    dist = max_norm(a.center, b.center)
    side, J = "first", pre_separable_witness(a, b)
    if J is None:
        side, J = "second", pre_separable_witness(b, a)
    if J is None:
        side = None
    return SeparabilityVerdict(
        separable=J is not None and dist > 7 * N * L,
        witness_subset=J,
        distance=dist,
        pre_separable=J is not None,
        witness_side=side,
    )


def candidate_centers(x, L: int | None = None) -> list[np.ndarray]:
    """The n^n configurations (x_{s(1)}, ..., x_{s(n)}), s: {1..n} -> {1..n}.

    ``L`` is accepted for symmetry with the covering statement; the family
    itself does not depend on it.
    """
    a = as_config(x)
    n = a.shape[0]
    return [a[list(s)] for s in itertools.product(range(n), repeat=n)]


def _preseparable_mask(x: np.ndarray, Y: np.ndarray, L: int) -> np.ndarray:
    """Vectorized pre-separability of C_L(x) and C_L(y) for a batch Y (M, n, d)."""
    n = x.shape[0]
    two_L = 2 * L
    dxx = np.abs(x[:, None, :] - x[None, :, :]).max(axis=2) > two_L           # (n, n)
    dyy = np.abs(Y[:, :, None, :] - Y[:, None, :, :]).max(axis=3) > two_L     # (M, n, n)
    dxy = np.abs(x[None, :, None, :] - Y[:, None, :, :]).max(axis=3) > two_L  # (M, n, n) [x_i, y_k]
    ok = np.zeros(Y.shape[0], dtype=bool)
    for J in subsets(n):
        idx = [j - 1 for j in J]
        rest = [k for k in range(n) if k not in idx]
        # x from y
        if dxx[np.ix_(idx, rest)].all():
            ok |= dxy[:, idx, :].all(axis=(1, 2))
        # y from x
        inner = dyy[:, idx][:, :, rest].all(axis=(1, 2)) if rest else np.ones(len(ok), bool)
        ok |= inner & dxy[:, :, idx].all(axis=(1, 2))
    return ok


def verify_candidate_centers(x, L: int, N: int, half_width: int | None = None,
                             chunk: int = 200_000) -> int:
    """Exhaustive check of the candidate-center covering claim around ``x``.

    Enumerates every y whose coordinates lie within ``half_width``
    (default 10*N*L) of x_1 and counts partners y with |y - x| > 7NL that avoid
    every radius-2nL cube at the candidate centers yet are not separable
    from x.  Returns the number of such counterexamples.
    """
    x = as_config(x)
    n, d = x.shape
    h = 10 * N * L if half_width is None else half_width
    cands = np.stack(candidate_centers(x))  # (K, n, d)
    span = np.arange(-h, h + 1, dtype=np.int64)
    total = span.size ** (n * d)
    bad = 0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = np.array(np.unravel_index(idx, (span.size,) * (n * d))).T
        Y = span[digits].reshape(-1, n, d) + x[0][None, None, :]
        far = np.abs(Y - x[None]).max(axis=(1, 2)) > 7 * N * L
        dist_c = np.abs(Y[:, None] - cands[None]).max(axis=(2, 3))
        outside = (dist_c > 2 * n * L).all(axis=1)
        sel = far & outside
        if sel.any():
            bad += int((~_preseparable_mask(x, Y[sel], L)).sum())
    return bad


def separable_from_B(x, y, L: int, N: int) -> bool:
    """Sufficient condition for C_L(x) to be pre-separable from C_L(y)."""
    a, b = _pair(x, y)
    spread = int(np.abs(b[:, None, :] - b[None, :, :]).max(initial=0))
    return max_norm(a, b) > spread + 3 * N * L


def diameter(x) -> int:
    a = as_config(x)
    return int(np.abs(a[:, None, :] - a[None, :, :]).max(initial=0))


def _components(adj: np.ndarray) -> list[list[int]]:
    n = adj.shape[0]
    seen, comps = set(), []
    for s in range(n):
        if s in seen:
            continue
        stack, comp = [s], []
        seen.add(s)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        comps.append(sorted(comp))
    return comps


def find_split(r: Rectangle, r0: int) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
    """Split (J, J^c) with dist(Pi_J r, Pi_{J^c} r) > r0, via single linkage.

    Particles i, j are linked when their one-particle cubes come within r0
    (|u_i - u_j| <= L_i + L_j + r0).  J is the cluster holding particle 1.
    Returns None if all particles form one cluster.
    """
    c = r.center_array
    radii = np.array(r.radii)
    dist = np.abs(c[:, None, :] - c[None, :, :]).max(axis=2)
    adj = dist <= radii[:, None] + radii[None, :] + r0
    comps = _components(adj)
    if len(comps) == 1:
        return None
    J = tuple(i + 1 for i in comps[0])
    Jc = tuple(i for i in range(1, r.n + 1) if i not in J)
    return J, Jc


def projection_distance(r: Rectangle, J: Sequence[int], K: Sequence[int]) -> int:
    """Max-norm distance between Pi_J r and Pi_K r (0 if they meet)."""
    c = r.center_array
    best = None
    for j in J:
        for k in K:
            gap = int(np.abs(c[j - 1] - c[k - 1]).max()) - r.radii[j - 1] - r.radii[k - 1]
            best = gap if best is None else min(best, gap)
    return max(best, 0)


@dataclass(frozen=True)
class InteractivityVerdict:
    kind: str  # "FI" or "PI"
    diameter: int
    split: tuple[tuple[int, ...], tuple[int, ...]] | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "diameter": self.diameter,
            "split": None if self.split is None else [list(self.split[0]), list(self.split[1])],
        }


def classify_interactivity(c: Rectangle, r0: int) -> InteractivityVerdict:
    if not c.is_cube:
        raise ValueError("classification needs a cube (equal radii)")
    L, n = c.radii[0], c.n
    diam = diameter(c.center)
    if diam <= n * (2 * L + r0):
        return InteractivityVerdict("FI", diam)
    split = find_split(c, r0)
    # diam > n(2L + r0) forces a gap in the single-linkage chain
    assert split is not None
    return InteractivityVerdict("PI", diam, split)


@dataclass(frozen=True)
class DisjointnessCheck:
    disjoint: bool
    preconditions_met: bool
    notes: tuple[str, ...] = ()


def fi_projection_disjointness(u, v, L: int, r0: int) -> DisjointnessCheck:
    """Projections of two distant FI cubes, compared by explicit site sets."""
    a, b = Rectangle.cube(u, L), Rectangle.cube(v, L)
    notes = []
    for name, c in (("u", a), ("v", b)):
        if classify_interactivity(c, r0).kind != "FI":
            notes.append(f"cube at {name} is not FI")
    if max_norm(a.center, b.center) <= 7 * a.n * L:
        notes.append("|u-v| <= 7nL")
    if L <= 2 * r0:
        notes.append("L <= 2 r0")
    disjoint = projection(a).isdisjoint(projection(b))
    return DisjointnessCheck(disjoint, not notes, tuple(notes))


@dataclass(frozen=True)
class SingularCounts:
    M: int
    M_sep: int
    M_PI: int
    M_FI: int
    M_PI_sep: int
    exact: bool
    implication_holds: bool | None  # M >= n^n + 2  =>  M_sep >= 2

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _max_clique(compat: np.ndarray, members: list[int], exact: bool) -> int:
    """Largest pairwise-compatible subset of ``members``."""
    if not members:
        return 0
    if not exact:
        chosen: list[int] = []
        for i in members:
            if all(compat[i, j] for j in chosen):
                chosen.append(i)
        return len(chosen)
    g = nx.Graph()
    g.add_nodes_from(members)
    g.add_edges_from((a, b) for a, b in itertools.combinations(members, 2) if compat[a, b])
    return len(nx.max_weight_clique(g, weight=None)[0])


def count_singular(centers: Sequence, singular_flags: Sequence[bool],
                   interactivity: Sequence[InteractivityVerdict], L_k: int, N: int,
                   exact_limit: int = 60) -> SingularCounts:
    if not (len(centers) == len(singular_flags) == len(interactivity)):
        raise ValueError("centers, flags and verdicts must be parallel lists")
    sing = [i for i, f in enumerate(singular_flags) if f]
    exact = len(sing) <= exact_limit
    cubes = {i: Rectangle.cube(centers[i], L_k) for i in sing}
    n = cubes[sing[0]].n if sing else as_config(centers[0]).shape[0] if len(centers) else 1
    m = len(centers)
    far = np.zeros((m, m), dtype=bool)
    sep = np.zeros((m, m), dtype=bool)
    for a, b in itertools.combinations(sing, 2):
        f = max_norm(cubes[a].center, cubes[b].center) > 7 * N * L_k
        s = f and is_separable(cubes[a], cubes[b], N).separable
        far[a, b] = far[b, a] = f
        sep[a, b] = sep[b, a] = s
    pi = [i for i in sing if interactivity[i].kind == "PI"]
    fi = [i for i in sing if interactivity[i].kind == "FI"]
    M = _max_clique(far, sing, exact)
    M_sep = _max_clique(sep, sing, exact)
    holds = None
    if exact and M >= n ** n + 2:
        holds = M_sep >= 2
    return SingularCounts(
        M=M,
        M_sep=M_sep,
        M_PI=_max_clique(far, pi, exact),
        M_FI=_max_clique(far, fi, exact),
        M_PI_sep=_max_clique(sep, pi, exact),
        exact=exact,
        implication_holds=holds,
    )


@dataclass(frozen=True)
class ScaleLadder:
    L0: int
    levels: tuple[int, ...]
    alpha: tuple[int, int] = (3, 2)
    relaxed: bool = False

    def __getitem__(self, k: int) -> int:
        return self.levels[k]

    def __len__(self) -> int:
        return len(self.levels)

    def level_of(self, L: int) -> int:
        try:
            return self.levels.index(L)
        except ValueError:
            raise ValueError(f"L={L} is not on the ladder {self.levels}") from None

    def to_json(self) -> dict:
        return {"L0": self.L0, "alpha": "3/2", "levels": list(self.levels), "relaxed": self.relaxed}


def next_scale(L: int) -> int:
    # floor(L^{3/2}) = isqrt(L^3), exact in integers
    return math.isqrt(L ** 3) + 1


def scale_ladder(L0: int, K: int, strict: bool = True) -> ScaleLadder:
    if K < 0:
        raise ValueError("K must be non-negative")
    if strict and L0 <= 3:
        raise ValueError("L0 > 3 required (pass strict=False for the relaxed mode)")
    if L0 < 2:
        raise ValueError("L0 >= 2 required")
    levels = [int(L0)]
    for _ in range(K):
        levels.append(next_scale(levels[-1]))
    return ScaleLadder(int(L0), tuple(levels), relaxed=not strict or L0 <= 3)


@dataclass(frozen=True)
class EdgeProbe:
    k: int
    m_well: int
    C_km: int
    centers: tuple[tuple[tuple[int, ...], ...], ...]
    n: int
    d: int
    disjoint: bool

    @property
    def radius(self) -> int:
        return self.k * self.m_well

    def cube(self, ell: int) -> Rectangle:
        """Cube of radius k*m at the center with label ``ell`` (1-based)."""
        return Rectangle.cube(self.centers[ell - 1], self.radius)

    def to_json(self) -> dict:
        return {
            "k": self.k, "m_well": self.m_well, "C_km": self.C_km,
            "centers": [[list(p) for p in c] for c in self.centers],
            "n": self.n, "d": self.d, "disjoint": self.disjoint,
        }


def edge_probe(N: int, d: int, r0: int, k: int, m_well: int, num_centers: int,
               n: int | None = None) -> EdgeProbe:
    if min(N, d, k, m_well, num_centers) < 1 or r0 < 0:
        raise ValueError("edge probe parameters must be positive")
    n = N if n is None else n
    C = r0 + 2 * k * m_well + N * d + 1
    centers = []
    for ell in range(1, num_centers + 1):
        flat = C * (C * ell + np.arange(1, n * d + 1, dtype=np.int64))
        centers.append(_to_tuple(flat.reshape(n, d)))
    # all single-particle coordinates are spaced at least C > 2km apart,
    # so every pair of one-particle cubes of radius km is disjoint
    coords = np.array([c for cen in centers for p in cen for c in p])
    gaps = np.diff(np.sort(coords)) if coords.size > 1 else np.array([C])
    disjoint = bool(gaps.min() > 2 * k * m_well)
    return EdgeProbe(k, m_well, C, tuple(centers), n, d, disjoint)


@dataclass(frozen=True)
class AnnulusSpec:
    u: tuple[tuple[int, ...], ...]
    k: int
    R_u: int
    b_k: float
    b: float
    inner_radius: float
    outer_radius: float
    N: int
    contains_candidates: bool

    def contains(self, x) -> bool:
        r = max_norm(x, self.u)
        return self.inner_radius < r <= self.outer_radius

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["u"] = [list(p) for p in self.u]
        return out


def annulus(u, ladder: ScaleLadder, k: int, b: float, N: int) -> AnnulusSpec:
    if b <= 1:
        raise ValueError("b must exceed 1")
    a = as_config(u)
    L_k, L_next = ladder[k], ladder[k + 1]
    R = max(max_norm(a, c) for c in candidate_centers(a))
    b_k = 7 * N + R / L_k
    # inner radius in exact integer form: b_k * L_k = 7 N L_k + R
    inner = 7 * N * L_k + R
    outer = b * (7 * N * L_next + R)
    # a point within 7 N L_k of a candidate is within 7 N L_k + R of u
    ok = all(max_norm(a, c) + 7 * N * L_k <= inner for c in candidate_centers(a))
    return AnnulusSpec(_to_tuple(a), k, R, b_k, float(b), inner, outer, N, ok)
