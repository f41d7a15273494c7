"""Spectra, Green functions and the multi-scale predicates.

Conventions: ``L`` of a rectangle is its minimal radius; resonance
thresholds are e^{-L^beta}; the singularity threshold of an n-particle
cube of radius L is e^{-gamma(m, L, n) L}.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (Rectangle, ScaleLadder, classify_interactivity, inner_boundary_indices,
                       is_separable)
from .operator import (InteractionSpec, NO_INTERACTION, OperatorMatrix, PotentialSample, assemble,
                       tensor_split)

RESONANCE_CUTOFF = 1e-12


class SolverError(RuntimeError):
    pass


class ResonantEnergyError(SolverError):
    def __init__(self, eta: float):
        super().__init__(f"energy within {eta:.3g} of the spectrum")
        self.eta = eta


@dataclass(frozen=True)
class ModelParams:
    N: int = 2
    n: int = 2
    d: int = 1
    p: float = 13.0
    L0: int = 6
    m: float = 0.5
    E_star: float = 2.0
    r0: int = 1
    mode: str = "calibrated"
    alpha: float = 1.5
    beta: float = 0.5
    relaxed: bool = False

    def __post_init__(self):
        if not 1 <= self.n <= self.N:
            raise ValueError("need 1 <= n <= N")
        if self.d < 1 or self.L0 < 2:
            raise ValueError("need d >= 1 and L0 >= 2")
        if self.mode not in ("paper", "calibrated"):
            raise ValueError("mode must be 'paper' or 'calibrated'")
        if self.m <= 0 or self.E_star <= 0:
            raise ValueError("m and E_star must be positive")
        if not self.relaxed:
            if self.p <= 6 * self.N * self.d:
                raise ValueError(f"p > 6Nd = {6 * self.N * self.d} required (set relaxed for smaller p)")
            if self.L0 <= 3:
                raise ValueError("L0 > 3 required (set relaxed for L0 >= 2)")
        if self.mode == "paper":
            m, E = paper_constants(self.N, self.d, self.L0)
            if (self.m, self.E_star) != (m, E):
                raise ValueError("paper mode fixes m and E_star; use ModelParams.paper")

    @classmethod
    def paper(cls, N: int, n: int, d: int, p: float, L0: int, r0: int = 1, relaxed: bool = False):
        m, E = paper_constants(N, d, L0)
        return cls(N=N, n=n, d=d, p=p, L0=L0, m=m, E_star=E, r0=r0, mode="paper", relaxed=relaxed)

    @property
    def s_star(self) -> float:
        return 2 * self.p / self.alpha - self.N * self.d - 1

    def to_json(self) -> dict:
        return asdict(self)


def paper_constants(N: int, d: int, L0: int) -> tuple[float, float]:
    """(m, E*) with m = (14 N^N + 6Nd) L0^{-1/2} and E* = 12Nd 2^{N+1} m."""
    c1 = 14 * N ** N + 6 * N * d
    root = math.sqrt(L0)
    return c1 / root, 12 * N * d * 2 ** (N + 1) * c1 / root


def initial_gap_constant(N: int, d: int) -> int:
    return 12 * N * d * 2 ** (N + 1) * (14 * N ** N + 6 * N * d)


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    residual_bound: float


def eig(op: OperatorMatrix, want_vectors: bool = False, dense_threshold: int = 3000,
        k: int = 6, tol: float = 1e-8) -> SpectralData:
    """Full dense decomposition for small operators, lowest ``k`` pairs otherwise."""
    H = op.matrix
    if op.dim <= dense_threshold:
        A = H.toarray()
        if want_vectors:
            w, v = la.eigh(A)
            res = float(np.linalg.norm(A @ v - v * w, axis=0).max())
            return SpectralData(w, v, res)
        w = la.eigvalsh(A)
        return SpectralData(w, None, float(np.finfo(float).eps * max(1.0, np.abs(w).max()) * op.dim))
    k = min(k, op.dim - 2)
    sigma = float(H.diagonal().min()) - 2 * op.rectangle.n * op.rectangle.d - 1.0
    sigma = min(sigma, -1.0)
    w, v = spla.eigsh(H.tocsc(), k=k, sigma=sigma, which="LM", tol=0)
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    res = float(np.linalg.norm(H @ v - v * w, axis=0).max())
    if res > tol * max(1.0, float(np.abs(w).max())):
        raise SolverError(f"iterative eigensolver residual {res:.3g} above tolerance")
    return SpectralData(w, v if want_vectors else None, res)


def lowest_eigenvalue(op: OperatorMatrix, dense_threshold: int = 400) -> float:
    r = op.rectangle
    if r.n * r.d == 1:
        H = op.matrix
        w = la.eigh_tridiagonal(H.diagonal(), H.diagonal(1), eigvals_only=True,
                                select="i", select_range=(0, 0))
        return float(w[0])
    return float(eig(op, dense_threshold=dense_threshold, k=1).eigenvalues[0])


def spectrum_distance(eigenvalues: np.ndarray, E) -> np.ndarray | float:
    """dist(E, sigma) for scalar or array E; ``eigenvalues`` must be sorted."""
    w = np.asarray(eigenvalues)
    Es = np.atleast_1d(np.asarray(E, dtype=float))
    pos = np.searchsorted(w, Es)
    lo = np.abs(Es - w[np.clip(pos - 1, 0, len(w) - 1)])
    hi = np.abs(Es - w[np.clip(pos, 0, len(w) - 1)])
    out = np.minimum(lo, hi)
    return float(out[0]) if np.ndim(E) == 0 else out


@dataclass
class GreenColumn:
    E: float
    source: tuple
    values: np.ndarray
    eta: float
    residual: float

    def at(self, op: OperatorMatrix, config) -> float:
        return float(self.values[op.index_of(config)])


def green_column(op: OperatorMatrix, E: float, source, eta: float | None = None) -> GreenColumn:
    if eta is None:
        if op.dim <= 3000:
            eta = spectrum_distance(la.eigvalsh(op.dense()), E)
        else:
            w = spla.eigsh(op.matrix.tocsc(), k=1, sigma=E, which="LM", return_eigenvectors=False)
            eta = float(np.abs(w - E).min())
    if eta < RESONANCE_CUTOFF:
        raise ResonantEnergyError(eta)
    i = op.index_of(source)
    rhs = np.zeros(op.dim)
    rhs[i] = 1.0
    A = (op.matrix - E * sp.identity(op.dim, format="csr")).tocsc()
    g = spla.splu(A).solve(rhs)
    res = float(np.abs(A @ g - rhs).max())
    if res > 1e-8 * (1 + np.linalg.norm(g)):
        raise SolverError(f"linear solve residual {res:.3g}")
    return GreenColumn(float(E), tuple(np.asarray(source).ravel().tolist()), g, float(eta), res)


def spectral_green(eigenvalues, eigenvectors, i: int, j, E) -> np.ndarray:
    """G(i, j; E) = sum_k psi_k(i) psi_k(j) / (lambda_k - E) for index arrays/energies."""
    w = np.asarray(eigenvalues)
    W = eigenvectors[np.atleast_1d(j)] * eigenvectors[i][None, :]
    return W @ (1.0 / (w[:, None] - np.atleast_1d(E)[None, :]))


def resonance_threshold(L: int, beta: float = 0.5) -> float:
    return math.exp(-L ** beta)


def is_e_resonant(op_or_eigs, E: float, params: ModelParams | None = None, L: int | None = None,
                  beta: float | None = None) -> tuple[bool, float]:
    """(resonant, margin) with margin = dist(E, sigma) - e^{-L^beta}."""
    if isinstance(op_or_eigs, OperatorMatrix):
        L = op_or_eigs.rectangle.L if L is None else L
        w = la.eigvalsh(op_or_eigs.dense())
    else:
        w = np.sort(np.asarray(op_or_eigs))
    if L is None:
        raise ValueError("L is needed when passing eigenvalues")
    beta = (params.beta if params else 0.5) if beta is None else beta
    margin = spectrum_distance(w, E) - resonance_threshold(L, beta)
    return margin < 0, float(margin)


def gamma(m: float, L: int, n: int, N: int) -> float:
    if L < 1 or not 1 <= n <= N or m <= 0:
        raise ValueError("need L >= 1, 1 <= n <= N, m > 0")
    return m * (1 + L ** -0.125) ** (N - n + 1)


def singular_threshold(m: float, L: int, n: int, N: int) -> float:
    return math.exp(-gamma(m, L, n, N) * L)


def min_subradius(L: int) -> int:
    """Smallest integer radius l with l >= L^{2/3}, i.e. l^3 >= L^2."""
    l = max(1, int(round(L ** (2 / 3))) - 1)
    while l ** 3 < L ** 2:
        l += 1
    while l > 1 and (l - 1) ** 3 >= L ** 2:
        l -= 1
    return l


@dataclass
class SingularResult:
    singular: bool
    max_boundary: float
    threshold: float
    gamma: float
    resonant: bool
    eta: float

    def to_json(self) -> dict:
        return asdict(self)


def is_em_singular(op: OperatorMatrix, E: float, params: ModelParams,
                   spectral: SpectralData | None = None) -> SingularResult:
    r = op.rectangle
    L = r.L
    g = gamma(params.m, L, r.n, params.N)
    thr = math.exp(-g * L)
    if spectral is None:
        spectral = eig(op, want_vectors=op.dim <= 3000)
    eta = spectrum_distance(spectral.eigenvalues, E) if op.dim <= 3000 else None
    if eta is not None and eta < RESONANCE_CUTOFF:
        return SingularResult(True, math.inf, thr, g, True, float(eta))
    center = op.index_of(r.center_array)
    bnd = inner_boundary_indices(r)
    if spectral.eigenvectors is not None and len(spectral.eigenvalues) == op.dim:
        vals = spectral_green(spectral.eigenvalues, spectral.eigenvectors, center, bnd, E)[:, 0]
    else:
        try:
            col = green_column(op, E, r.center_array, eta=eta)
        except ResonantEnergyError as exc:
            return SingularResult(True, math.inf, thr, g, True, exc.eta)
        vals, eta = col.values[bnd], col.eta
    mx = float(np.abs(vals).max())
    return SingularResult(mx > thr, mx, thr, g, False, float(eta))


class SingularityProfile:
    """Singularity of one cube across many energies from a single eigendecomposition."""

    def __init__(self, op: OperatorMatrix, params: ModelParams, spectral: SpectralData | None = None):
        self.op = op
        r = op.rectangle
        self.L = r.L
        self.gamma = gamma(params.m, self.L, r.n, params.N)
        self.threshold = math.exp(-self.gamma * self.L)
        sd = spectral if spectral is not None else eig(op, want_vectors=True, dense_threshold=10 ** 9)
        self.eigenvalues = sd.eigenvalues
        center = op.index_of(r.center_array)
        bnd = inner_boundary_indices(r)
        self._weights = sd.eigenvectors[bnd] * sd.eigenvectors[center][None, :]

    def max_boundary(self, energies) -> np.ndarray:
        Es = np.atleast_1d(np.asarray(energies, dtype=float))
        out = np.empty(Es.size)
        for s in range(0, Es.size, 512):
            chunk = Es[s:s + 512]
            diff = self.eigenvalues[:, None] - chunk[None, :]
            diff[diff == 0.0] = 1.0  # exact hits are overwritten with inf below
            G = self._weights @ (1.0 / diff)
            out[s:s + 512] = np.abs(G).max(axis=0)
        out[spectrum_distance(self.eigenvalues, Es) < RESONANCE_CUTOFF] = np.inf
        return out

    def singular(self, energies) -> np.ndarray:
        return self.max_boundary(energies) > self.threshold


@dataclass
class BelowSpectrumCheck:
    """Result of the factorization shortcut at the top grid energy."""

    below: bool  # E_top < lowest eigenvalue, certified by positive LDL pivots
    max_boundary: float
    singular: bool


def below_spectrum_check(op: OperatorMatrix, E_top: float, params: ModelParams) -> BelowSpectrumCheck:
    """Certify E_top < inf sigma and evaluate singularity at E_top.

    With nonpositive off-diagonal entries, H - E is an M-matrix for every E
    below the spectrum, so G(u, v; E) is positive and nondecreasing in E.
    Singularity at some E <= E_top below the spectrum therefore implies
    singularity at E_top.
    """
    r = op.rectangle
    thr = singular_threshold(params.m, r.L, r.n, params.N)
    A = (op.matrix - E_top * sp.identity(op.dim, format="csr")).tocsc()
    lu = spla.splu(A, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    pivots = lu.U.diagonal()
    natural = np.array_equal(lu.perm_r, np.arange(op.dim)) and np.array_equal(lu.perm_c, np.arange(op.dim))
    if not natural or pivots.min() <= 1e-10:
        return BelowSpectrumCheck(False, math.nan, False)
    rhs = np.zeros(op.dim)
    rhs[op.index_of(r.center_array)] = 1.0
    g = lu.solve(rhs)
    mx = float(np.abs(g[inner_boundary_indices(r)]).max())
    return BelowSpectrumCheck(True, mx, mx > thr)


@dataclass
class SubCube:
    radius: int
    center: tuple
    eigenvalues: np.ndarray
    index: np.ndarray = field(repr=False, default=None)


class SubcubeSpectra:
    """Spectra of all (or a sample of) sub-cubes of radius >= L^{2/3} inside a cube.

    Restrictions are entrywise, so each sub-cube operator is a principal
    submatrix of the host restriction.
    """

    def __init__(self, op: OperatorMatrix, beta: float = 0.5, budget: int = 10 ** 6,
                 sample: int | None = None, seed: int = 0, keep_vectors: bool = False):
        r = op.rectangle
        if not r.is_cube or r.L < 2:
            raise ValueError("CNR needs a cube of radius >= 2")
        self.op, self.beta, self.L = op, beta, r.L
        self.exact = sample is None
        radii = list(range(min_subradius(r.L), r.L + 1))
        nd = r.n * r.d
        counts = {l: (2 * (r.L - l) + 1) ** nd for l in radii}
        total = sum(counts.values())
        if self.exact and total > budget:
            raise ValueError(f"{total} sub-cubes exceed the budget {budget}; use sampled mode")
        plan = []
        if self.exact:
            for l in radii:
                for off in itertools.product(range(-(r.L - l), r.L - l + 1), repeat=nd):
                    plan.append((l, np.array(off)))
        else:
            rng = np.random.default_rng(seed)
            per = max(1, sample // len(radii))
            for l in radii:
                offs = rng.integers(-(r.L - l), r.L - l + 1, size=(min(per, counts[l]), nd))
                plan.extend((l, o) for o in offs)
        self.dense = op.dense()
        lows = r.lows
        shape = r.shape
        c = r.center_array.ravel()
        self.cubes: list[SubCube] = []
        for l, off in plan:
            v = c + off
            axes = [np.arange(v[a] - l, v[a] + l + 1) - lows[a] for a in range(nd)]
            idx = np.ravel_multi_index(np.meshgrid(*axes, indexing="ij"), shape).ravel()
            w = la.eigvalsh(self.dense[np.ix_(idx, idx)])
            center = tuple(int(t) for t in v)
            self.cubes.append(SubCube(l, center, w, idx if keep_vectors else None))
        self.total = total
        lo, hi = [], []
        for cube in self.cubes:
            wdt = resonance_threshold(cube.radius, beta)
            lo.append(cube.eigenvalues - wdt)
            hi.append(cube.eigenvalues + wdt)
        self._lo = np.concatenate(lo) if lo else np.empty(0)
        self._hi = np.concatenate(hi) if hi else np.empty(0)
        self._merged = _merge_open_intervals(self._lo, self._hi)

    @property
    def resonant_intervals(self) -> np.ndarray:
        """Disjoint open intervals of energies E for which the cube is not E-CNR."""
        return self._merged

    def is_cnr(self, energies) -> np.ndarray:
        return ~_in_open_intervals(self._merged, np.atleast_1d(np.asarray(energies, dtype=float)))

    def witness(self, E: float) -> SubCube | None:
        for cube in self.cubes:
            if spectrum_distance(cube.eigenvalues, E) < resonance_threshold(cube.radius, self.beta):
                return cube
        return None


def _merge_open_intervals(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    if lo.size == 0:
        return np.empty((0, 2))
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    out = [[lo[0], hi[0]]]
    for a, b in zip(lo[1:], hi[1:]):
        if a < out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return np.array(out)


def _in_open_intervals(iv: np.ndarray, E: np.ndarray) -> np.ndarray:
    if iv.size == 0:
        return np.zeros(E.shape, dtype=bool)
    k = np.searchsorted(iv[:, 0], E, side="left") - 1
    ok = k >= 0
    kk = np.clip(k, 0, None)
    return ok & (E > iv[kk, 0]) & (E < iv[kk, 1])


def intervals_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Whether two unions of disjoint sorted open intervals share a point."""
    i = j = 0
    while i < len(a) and j < len(b):
        if max(a[i, 0], b[j, 0]) < min(a[i, 1], b[j, 1]):
            return True
        if a[i, 1] < b[j, 1]:
            i += 1
        else:
            j += 1
    return False


def is_e_cnr(op: OperatorMatrix, E: float, params: ModelParams | None = None,
             enumeration: str = "exact", count: int = 200, budget: int = 10 ** 6,
             seed: int = 0) -> tuple[bool, SubCube | None]:
    beta = params.beta if params else 0.5
    fam = SubcubeSpectra(op, beta, budget=budget, sample=None if enumeration == "exact" else count, seed=seed)
    ok = bool(fam.is_cnr(E)[0])
    return ok, None if ok else fam.witness(E)


@dataclass
class CTReport:
    holds: bool
    worst_ratio: float
    eta: float
    eta_used: float
    pairs: int

    def to_json(self) -> dict:
        return asdict(self)


def combes_thomas_check(op: OperatorMatrix, E: float, sample_columns: int | None = None,
                        seed: int = 0) -> CTReport:
    r = op.rectangle
    w = la.eigvalsh(op.dense())
    eta = spectrum_distance(w, E)
    if eta <= 0:
        raise ValueError("E lies in the spectrum")
    eta_c = min(eta, 1.0)
    nu = r.n * r.d
    sites = r.sites()
    A = op.dense() - E * np.eye(op.dim)
    if sample_columns is None or sample_columns >= op.dim:
        cols = np.arange(op.dim)
        G = la.inv(A)
    else:
        cols = np.sort(np.random.default_rng(seed).choice(op.dim, sample_columns, replace=False))
        rhs = np.zeros((op.dim, cols.size))
        rhs[cols, np.arange(cols.size)] = 1.0
        G = la.solve(A, rhs, assume_a="sym")
    dist = np.abs(sites[:, None, :] - sites[None, cols, :]).max(axis=2)
    bound = 2.0 / eta_c * np.exp(-eta_c * dist / (12 * nu))
    ratio = np.abs(G) / bound
    worst = float(ratio.max())
    return CTReport(worst <= 1.0, worst, float(eta), eta_c, int(ratio.size))


@dataclass
class HNRResult:
    hnr: bool
    left_fail: tuple | None = None   # (mu_j, witness radius, witness center)
    right_fail: tuple | None = None

    def to_json(self) -> dict:
        return asdict(self)


def _pi_factors(cube: Rectangle, pot: PotentialSample, spec: InteractionSpec):
    v = classify_interactivity(cube, spec.r0)
    if v.kind != "PI":
        raise ValueError("predicate needs a partially interactive cube")
    return tensor_split(cube, pot, spec)


def is_hnr(cube: Rectangle, E: float, pot: PotentialSample, spec: InteractionSpec = NO_INTERACTION,
           params: ModelParams | None = None, enumeration: str = "exact", count: int = 200,
           budget: int = 10 ** 6) -> HNRResult:
    beta = params.beta if params else 0.5
    ts = _pi_factors(cube, pot, spec)
    lam = la.eigvalsh(ts.left.dense())
    mu = la.eigvalsh(ts.right.dense())
    sample = None if enumeration == "exact" else count
    fl = SubcubeSpectra(ts.left, beta, budget=budget, sample=sample)
    fr = SubcubeSpectra(ts.right, beta, budget=budget, sample=sample)
    left_fail = right_fail = None
    bad = np.flatnonzero(~fl.is_cnr(E - mu))
    if bad.size:
        w = fl.witness(E - mu[bad[0]])
        left_fail = (float(mu[bad[0]]), w.radius, w.center)
    bad = np.flatnonzero(~fr.is_cnr(E - lam))
    if bad.size:
        w = fr.witness(E - lam[bad[0]])
        right_fail = (float(lam[bad[0]]), w.radius, w.center)
    return HNRResult(left_fail is None and right_fail is None, left_fail, right_fail)


def hnr_failure_witness_check(cube: Rectangle, E: float, pot: PotentialSample,
                              spec: InteractionSpec, result: HNRResult, beta: float = 0.5) -> bool:
    """Confirm that a non-HNR cube has an E-resonant sub-rectangle of the stated form."""
    if result.hnr:
        return True
    ts = _pi_factors(cube, pot, spec)
    L = cube.radii[0]
    labels_l, labels_r = ts.J, ts.Jc
    n = cube.n
    if result.left_fail is not None:
        _, l, c = result.left_fail
        radii_of = {j: l for j in labels_l} | {j: L for j in labels_r}
        centers = _place(cube, labels_l, c)
    else:
        _, l, c = result.right_fail
        radii_of = {j: L for j in labels_l} | {j: l for j in labels_r}
        centers = _place(cube, labels_r, c)
    rect = Rectangle(tuple(centers[j] for j in range(1, n + 1)), tuple(radii_of[j] for j in range(1, n + 1)))
    w = la.eigvalsh(assemble(rect, pot, spec).dense())
    return spectrum_distance(w, E) < resonance_threshold(rect.L, beta)


def _place(cube: Rectangle, labels, flat_center) -> dict:
    d = cube.d
    centers = {j: cube.center[j - 1] for j in range(1, cube.n + 1)}
    for k, j in enumerate(labels):
        centers[j] = tuple(int(t) for t in flat_center[k * d:(k + 1) * d])
    return centers


@dataclass
class TunnellingResult:
    left: bool
    right: bool
    witness: dict | None = None
    separable_pairs: int = 0

    @property
    def tunnelling(self) -> bool:
        return self.left or self.right

    def to_json(self) -> dict:
        out = asdict(self)
        out["tunnelling"] = self.tunnelling
        return out


def _factor_tunnelling(factor: OperatorMatrix, shifts: np.ndarray, l: int, params: ModelParams,
                       step: int | None, max_pairs_centers: int = 4000) -> tuple[bool, dict | None, int]:
    r = factor.rectangle
    L, nd = r.L, r.n * r.d
    if step is None:
        step = 1 if (2 * (L - l) + 1) ** nd <= max_pairs_centers else max(1, l // 4)
    span = np.arange(-(L - l), L - l + 1, step)
    c = r.center_array.ravel()
    centers = [c + np.array(o) for o in itertools.product(span, repeat=nd)]
    cubes = [Rectangle.cube(v.reshape(r.n, r.d), l) for v in centers]
    C = np.array(centers)
    far = np.abs(C[:, None, :] - C[None, :, :]).max(axis=2) > 7 * params.N * l
    cand = [(int(a), int(b)) for a, b in zip(*np.nonzero(np.triu(far, 1)))]
    if r.n == 1:
        # one particle: distance above 7Nl > 2l already makes the cubes disjoint
        pairs = cand
    else:
        pairs = [(a, b) for a, b in cand if is_separable(cubes[a], cubes[b], params.N).separable]
    if not pairs:
        return False, None, 0
    involved = sorted({i for p in pairs for i in p})
    dense = factor.dense()
    flags = {}
    sub_params = ModelParams(N=params.N, n=r.n, d=r.d, p=params.p, L0=params.L0, m=params.m,
                             E_star=params.E_star, r0=params.r0, relaxed=True)
    for i in involved:
        v = centers[i]
        axes = [np.arange(v[a] - l, v[a] + l + 1) - r.lows[a] for a in range(nd)]
        idx = np.ravel_multi_index(np.meshgrid(*axes, indexing="ij"), r.shape).ravel()
        sub = OperatorMatrix(cubes[i], sp.csr_matrix(dense[np.ix_(idx, idx)]), np.zeros(idx.size))
        w, vec = la.eigh(dense[np.ix_(idx, idx)])
        prof = SingularityProfile(sub, sub_params, SpectralData(w, vec, 0.0))
        flags[i] = prof.singular(shifts)
    for a, b in pairs:
        both = flags[a] & flags[b]
        if both.any():
            j = int(np.flatnonzero(both)[0])
            return True, {"shift": float(shifts[j]), "centers": [cubes[a].center, cubes[b].center]}, len(pairs)
    return False, None, len(pairs)


def is_tunnelling(cube: Rectangle, E, m: float, pot: PotentialSample, spec: InteractionSpec,
                  params: ModelParams, ladder: ScaleLadder, step: int | None = None) -> TunnellingResult:
    """Left/right tunnelling at energy E (scalar) or at some energy of an array E."""
    L = cube.radii[0]
    k1 = ladder.level_of(L)
    if k1 == 0:
        raise ValueError("cube radius must be above the first ladder level")
    l = ladder[k1 - 1]
    p = ModelParams(**{**params.to_json(), "m": m, "mode": "calibrated", "relaxed": True})
    ts = _pi_factors(cube, pot, spec)
    lam = la.eigvalsh(ts.left.dense())
    mu = la.eigvalsh(ts.right.dense())
    Es = np.atleast_1d(np.asarray(E, dtype=float))
    lt, wl, npl = _factor_tunnelling(ts.left, (Es[:, None] - mu[None, :]).ravel(), l, p, step)
    rt, wr, npr = _factor_tunnelling(ts.right, (Es[:, None] - lam[None, :]).ravel(), l, p, step)
    return TunnellingResult(lt, rt, wl or wr, npl + npr)


@dataclass
class ExpansionReport:
    hnr: bool
    non_tunnelling: bool | None
    non_singular: bool
    implication_holds: bool | None
    identity_error: float
    inequality_holds: bool
    max_boundary: float
    threshold: float

    def to_json(self) -> dict:
        return asdict(self)


def tensor_ns_implication_check(cube: Rectangle, E: float, m: float, pot: PotentialSample,
                                spec: InteractionSpec, params: ModelParams,
                                ladder: ScaleLadder | None = None) -> ExpansionReport:
    """Check HNR and NT => NS on a PI cube, and the tensor expansion of G behind it."""
    ts = _pi_factors(cube, pot, spec)
    p = ModelParams(**{**params.to_json(), "m": m, "mode": "calibrated", "relaxed": True})
    hnr = is_hnr(cube, E, pot, spec, p).hnr
    nt = None
    if ladder is not None and cube.radii[0] in ladder.levels[1:]:
        nt = not is_tunnelling(cube, E, m, pot, spec, p, ladder).tunnelling
    full = assemble(cube, pot, spec)
    sres = is_em_singular(full, E, p)
    lam, phi = la.eigh(ts.left.dense())
    Gr = ts.right
    u = cube.center_array
    bnd = inner_boundary_indices(cube)
    sites = cube.sites().reshape(-1, cube.n, cube.d)
    J = [j - 1 for j in ts.J]
    Jc = [j - 1 for j in ts.Jc]
    mu, psi = la.eigh(Gr.dense())
    ul = ts.left.index_of(u[J].ravel())
    ur = Gr.index_of(u[Jc].ravel())
    A = full.dense()
    G_full = la.solve(A - E * np.eye(full.dim), np.eye(full.dim)[:, full.index_of(u.ravel())])
    worst_err, ineq = 0.0, True
    for b in bnd:
        v = sites[b]
        vl = ts.left.index_of(v[J].ravel())
        vr = Gr.index_of(v[Jc].ravel())
        # G''(u'', v''; E - lambda_i) for all i via the right factor's eigenbasis
        g2 = (psi[ur] * psi[vr]) @ (1.0 / (mu[:, None] - (E - lam)[None, :]))
        terms = phi[ul] * phi[vl] * g2
        exp_val = terms.sum()
        worst_err = max(worst_err, abs(exp_val - G_full[b]) / max(1.0, abs(G_full[b])))
        ineq &= abs(G_full[b]) <= np.abs(terms).sum() * (1 + 1e-10) + 1e-300
    premise = hnr and (nt is None or nt)
    implication = (not sres.singular) if (premise and nt is not None) else None
    return ExpansionReport(hnr, nt, not sres.singular, implication, float(worst_err), bool(ineq),
                           sres.max_boundary, sres.threshold)


@dataclass
class PredicateReport:
    e_resonant: bool
    resonance_margin: float
    e_cnr: bool | None
    cnr_witness: dict | None
    em_singular: bool
    max_boundary: float
    gamma: float
    threshold: float
    resonant_flag: bool
    interactivity: str | None = None
    hnr: bool | None = None
    tunnelling: bool | None = None
    E: float | None = None
    center: list | None = None
    radius: int | None = None

    def to_json(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = repr(v)
        return out


def evaluate_predicates(cube: Rectangle, E: float, pot: PotentialSample, spec: InteractionSpec,
                        params: ModelParams, cnr: bool = True, ladder: ScaleLadder | None = None) -> PredicateReport:
    op = assemble(cube, pot, spec)
    sd = eig(op, want_vectors=True)
    res, margin = is_e_resonant(sd.eigenvalues, E, params, L=cube.L)
    e_cnr, wit = None, None
    if cnr and cube.is_cube and cube.L >= 2:
        fam = SubcubeSpectra(op, params.beta)
        e_cnr = bool(fam.is_cnr(E)[0])
        if not e_cnr:
            w = fam.witness(E)
            wit = {"radius": w.radius, "center": list(w.center)}
    s = is_em_singular(op, E, params, sd)
    kind = hnr = tun = None
    if cube.is_cube:
        kind = classify_interactivity(cube, spec.r0).kind
        if kind == "PI" and cube.L >= 2:
            hnr = is_hnr(cube, E, pot, spec, params).hnr
            if ladder is not None and cube.L in ladder.levels[1:]:
                tun = is_tunnelling(cube, E, params.m, pot, spec, params, ladder).tunnelling
    return PredicateReport(res, margin, e_cnr, wit, s.singular, s.max_boundary, s.gamma, s.threshold,
                           s.resonant, kind, hnr, tun, float(E), [list(p) for p in cube.center], cube.L)


def tensor_spectrum_error(r: Rectangle, pot: PotentialSample, spec: InteractionSpec) -> float:
    """Max relative gap between the sorted spectrum of a split rectangle and the sums lambda_i + mu_j."""
    ts = tensor_split(r, pot, spec)
    lam = la.eigvalsh(ts.left.dense())
    mu = la.eigvalsh(ts.right.dense())
    sums = np.sort((lam[:, None] + mu[None, :]).ravel())
    full = la.eigvalsh(assemble(r, pot, spec).dense())
    return float((np.abs(full - sums) / np.maximum(1.0, np.abs(full))).max())


def raise_projection(pot: PotentialSample, r: Rectangle, particle: int, t: float) -> PotentialSample:
    """Potential raised by t on every site of the one-particle projection of ``particle`` (0-based)."""
    lo, hi = r.one_particle_cube(particle)
    vals = dict(pot.values)
    for site in vals:
        if all(lo[a] <= site[a] <= hi[a] for a in range(r.d)):
            vals[site] += t
    return PotentialSample(pot.d, vals)


def stollmann_rise(r: Rectangle, pot: PotentialSample, spec: InteractionSpec, particle: int,
                   t: float) -> float:
    """Smallest increase of the sorted eigenvalues after raising one particle's projection by t."""
    before = la.eigvalsh(assemble(r, pot, spec).dense())
    after = la.eigvalsh(assemble(r, raise_projection(pot, r, particle, t), spec).dense())
    return float((after - before).min())
