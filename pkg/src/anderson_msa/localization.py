"""Finite-volume proxies for spectral edge, eigenfunction decay and dynamical localization."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import expm_multiply

from .geometry import EdgeProbe, Rectangle, ScaleLadder
from .msa import run_trials
from .operator import (BoxVector, DisorderEnsemble, InteractionSpec, NO_INTERACTION, PotentialSample,
                       apply_ambient, assemble, sample_for)
from .solver import lowest_eigenvalue

PSD_TOL = 1e-9
DECAY_FLOOR = 1e-12


# --------------------------------------------------------------------------- spectral edge

def free_chain_ground(L: int) -> float:
    """Lowest Dirichlet eigenvalue of the discrete Laplacian on 2L+1 sites."""
    return 2 - 2 * math.cos(math.pi / (2 * L + 2))


def _edge_trial(ensemble, interaction, n, d, L, i):
    cube = Rectangle.cube(np.zeros((n, d), dtype=int), L)
    return lowest_eigenvalue(assemble(cube, sample_for(ensemble, i, cube), interaction))


def spectral_edge_sweep(ensemble: DisorderEnsemble, interaction: InteractionSpec, n: int, d: int,
                        box_sizes: Sequence[int], realizations: int, workers: int = 1) -> dict:
    """Lowest restricted eigenvalue per (L, realization), all particles in the cube at the origin."""
    rows, medians = [], {}
    for L in box_sizes:
        fn = functools.partial(_edge_trial, ensemble, interaction, n, d, L)
        E0 = run_trials(fn, range(realizations), workers)
        rows += [{"L": L, "realization": i, "E0": e} for i, e in enumerate(E0)]
        medians[L] = float(np.median(E0))
    ordered = [medians[L] for L in sorted(box_sizes)]
    return {
        "rows": rows,
        "medians": medians,
        "strictly_decreasing": all(a > b for a, b in zip(ordered, ordered[1:])),
        "min_E0": min(r["E0"] for r in rows),
        "nonnegative": all(r["E0"] >= -PSD_TOL for r in rows),
    }


# --------------------------------------------------------------------------- Weyl sequences

@dataclass
class WeylResidual:
    m_well: int
    E: float
    residual: float
    free_residual: float
    potential_part: float
    potential_bound: float

    def to_json(self) -> dict:
        return asdict(self)


def quasi_mode(E: float, n: int, d: int, radius: int, taper: int) -> np.ndarray:
    """Real plane wave at energy E times a linear taper, on a cube of the given radius."""
    nd = n * d
    if not 0 <= E <= 4 * nd:
        raise ValueError(f"E must lie in [0, {4 * nd}]")
    theta = math.acos(1 - E / (2 * nd))
    r = np.arange(-radius, radius + 1)
    ramp = np.clip((radius + 1 - np.abs(r)) / taper, 0.0, 1.0)
    axis = np.cos(theta * r) * ramp
    phi = axis
    for _ in range(nd - 1):
        phi = np.multiply.outer(phi, axis)
    return phi


def weyl_residual(E: float, probe_fn, well_eps: float | None, m_list: Sequence[int],
                  ensemble: DisorderEnsemble, interaction: InteractionSpec = NO_INTERACTION,
                  realization: int = 0) -> list[WeylResidual]:
    """Residual ||(H - E) phi|| / ||phi|| of quasi-modes planted in low-potential wells.

    ``probe_fn(m)`` returns an EdgeProbe; the first probe cube is used. On the
    well the potential is rescaled to [0, well_eps]; the default well_eps is
    1 / (k m).
    """
    out = []
    for m in m_list:
        probe: EdgeProbe = probe_fn(m)
        cube = probe.cube(1)
        n, d = probe.n, probe.d
        eps = 1.0 / (probe.k * m) if well_eps is None else well_eps
        R = probe.radius
        phi = quasi_mode(E, n, d, R, max(1, m // 4))
        grown = Rectangle(cube.center, tuple(r + 1 for r in cube.radii))
        pot = sample_for(ensemble, realization, grown)
        planted = PotentialSample(d, {s: eps * min(max(v, 0.0), 1.0) if _in_well(s, cube) else v
                                      for s, v in pot.values.items()})
        zero = PotentialSample(d, {s: 0.0 for s in pot.values})
        vec = BoxVector(tuple(int(x) for x in cube.lows), phi)
        norm = float(np.linalg.norm(phi))
        full = apply_ambient(vec, planted, interaction, n, d).values
        free = apply_ambient(vec, zero, NO_INTERACTION, n, d).values
        pad = np.pad(phi, 1)
        res = float(np.linalg.norm(full - E * pad)) / norm
        res0 = float(np.linalg.norm(free - E * pad)) / norm
        vpart = float(np.linalg.norm(full - free)) / norm
        out.append(WeylResidual(m, E, res, res0, vpart, n * eps))
    return out


def _in_well(site: tuple, cube: Rectangle) -> bool:
    d = cube.d
    for i in range(cube.n):
        lo, hi = cube.one_particle_cube(i)
        if all(lo[a] <= site[a] <= hi[a] for a in range(d)):
            return True
    return False


# --------------------------------------------------------------------------- eigenfunction decay

@dataclass
class DecayFit:
    eigenvalue: float
    center: tuple
    rate: float
    r2: float
    mass_tail: float
    shells: int

    def to_json(self) -> dict:
        out = asdict(self)
        out["center"] = [list(p) for p in self.center]
        return out


def shell_maxima(psi: np.ndarray, sites: np.ndarray, center: np.ndarray) -> np.ndarray:
    dist = np.abs(sites - center[None, :]).max(axis=1)
    out = np.zeros(dist.max() + 1)
    np.maximum.at(out, dist, np.abs(psi))
    return out


def fit_decay(psi: np.ndarray, sites: np.ndarray, floor: float = DECAY_FLOOR,
              tail_radius: float | None = None) -> tuple[float, float, float, int, np.ndarray]:
    """Least-squares fit of log shell maxima against max-norm distance from argmax |psi|."""
    c = sites[int(np.argmax(np.abs(psi)))]
    sm = shell_maxima(psi, sites, c)
    keep = np.flatnonzero(sm > floor)
    # stop at the first shell that falls below the floor
    cut = np.flatnonzero(sm <= floor)
    if cut.size:
        keep = keep[keep < cut[0]]
    dist = np.abs(sites - c[None, :]).max(axis=1)
    R = (dist.max() / 2) if tail_radius is None else tail_radius
    tail = float((psi[dist > R] ** 2).sum() / (psi ** 2).sum())
    if keep.size < 3:
        return math.nan, math.nan, tail, int(keep.size), c
    r = keep.astype(float)
    y = np.log(sm[keep])
    A = np.vstack([np.ones_like(r), r]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - float((resid ** 2).sum()) / sst if sst > 0 else 0.0
    return float(-coef[1]), float(min(max(r2, 0.0), 1.0)), tail, int(keep.size), c


def decay_spectrum(box: Rectangle, ensemble: DisorderEnsemble, realization: int = 0,
                   interaction: InteractionSpec = NO_INTERACTION,
                   window: tuple[float, float] | None = None, fraction: float | None = 0.1) -> list[DecayFit]:
    """Decay fits for eigenstates in an energy window, or the lowest ``fraction`` of states."""
    op = assemble(box, sample_for(ensemble, realization, box), interaction)
    w, V = la.eigh(op.dense())
    if window is not None:
        sel = np.flatnonzero((w >= window[0]) & (w <= window[1]))
    else:
        sel = np.arange(max(1, int(math.ceil(fraction * w.size))))
    sites = box.sites()
    out = []
    for j in sel:
        rate, r2, tail, shells, c = fit_decay(V[:, j], sites)
        out.append(DecayFit(float(w[j]), tuple(tuple(int(v) for v in c[i * box.d:(i + 1) * box.d])
                                               for i in range(box.n)), rate, r2, tail, shells))
    return out


# --------------------------------------------------------------------------- dynamics

def s_star(p: float, alpha: float, N: int, d: int) -> float:
    return 2 * p / alpha - N * d - 1


@dataclass
class DynMoment:
    s: float
    interval: tuple[float, float]
    K: list
    times: list
    values: list
    correlator_bound: float
    states_in_window: int

    @property
    def bounded(self) -> bool:
        return all(v <= self.correlator_bound * (1 + 1e-9) for v in self.values)

    def to_json(self) -> dict:
        out = asdict(self)
        out["bounded"] = self.bounded
        return out


def _position_weight(sites: np.ndarray, s: float) -> np.ndarray:
    return np.abs(sites).max(axis=1).astype(float) ** s


def _k_indices(box: Rectangle, K) -> np.ndarray:
    pts = np.asarray(K, dtype=np.int64).reshape(-1, box.n * box.d)
    if not box.contains(pts).all():
        raise ValueError("K must lie inside the box")
    return np.asarray(box.index_of(pts), dtype=int)


def k_ball(box: Rectangle, radius: int) -> np.ndarray:
    """Configurations of the box with max-norm at most ``radius``."""
    sites = box.sites()
    return sites[np.abs(sites).max(axis=1) <= radius]


def dyn_moment_from_eigs(w, V, sites, kidx, s, interval, times) -> tuple[list, float, int]:
    sel = (w >= interval[0]) & (w <= interval[1])
    lam, Psi = w[sel], V[:, sel]
    weight = _position_weight(sites, s)
    PK = Psi[kidx]  # (|K|, states)
    values = []
    for t in times:
        A = (Psi * np.exp(-1j * t * lam)[None, :]) @ PK.T  # (sites, |K|)
        values.append(float((weight[:, None] * np.abs(A) ** 2).sum()))
    bound = float((np.sqrt(weight @ Psi ** 2) * np.linalg.norm(PK, axis=0)).sum() ** 2)
    return values, bound, int(sel.sum())


def dyn_moment(box: Rectangle, ensemble: DisorderEnsemble, realization: int,
               interaction: InteractionSpec, s: float, K, times: Sequence[float],
               interval: tuple[float, float] = (0.0, math.inf), s_max: float | None = None,
               shift: float = 0.0) -> DynMoment:
    """Hilbert-Schmidt moment ||X^{s/2} e^{-itH} P_I 1_K||^2 and its eigenfunction-correlator bound.

    ``shift`` adds a constant to every site potential; ``s_max`` enforces s < s*.
    """
    if s_max is not None and not 0 < s < s_max:
        raise ValueError(f"s must lie in (0, {s_max})")
    pot = sample_for(ensemble, realization, box)
    if shift:
        pot = PotentialSample(pot.d, {k: v + shift for k, v in pot.values.items()})
    op = assemble(box, pot, interaction)
    w, V = la.eigh(op.dense())
    kidx = _k_indices(box, K)
    values, bound, count = dyn_moment_from_eigs(w, V, box.sites(), kidx, s, interval, times)
    Klist = np.asarray(K, dtype=np.int64).reshape(-1, box.n * box.d).tolist()
    return DynMoment(s, (float(interval[0]), float(interval[1])), Klist,
                     [float(t) for t in times], values, bound, count)


def dyn_moment_direct(box: Rectangle, ensemble: DisorderEnsemble, realization: int,
                      interaction: InteractionSpec, s: float, K, t: float) -> float:
    """Same moment with P_I = identity, by a Krylov exponential instead of eigenvectors."""
    op = assemble(box, sample_for(ensemble, realization, box), interaction)
    kidx = _k_indices(box, K)
    B = np.zeros((op.dim, kidx.size), dtype=complex)
    B[kidx, np.arange(kidx.size)] = 1.0
    A = expm_multiply(-1j * t * op.matrix.tocsc(), B)
    weight = _position_weight(box.sites(), s)
    return float((weight[:, None] * np.abs(A) ** 2).sum())


# --------------------------------------------------------------------------- kernel decay

def annulus_index(dist: int, ladder: ScaleLadder, N: int) -> int:
    """Largest j with dist > 7 N L_j, or -1."""
    j = -1
    for i, L in enumerate(ladder.levels):
        if dist > 7 * N * L:
            j = i
    return j


def kernel_decay(box: Rectangle, ensemble: DisorderEnsemble, realization: int,
                 interaction: InteractionSpec, pairs: Sequence[tuple], times: Sequence[float],
                 interval: tuple[float, float] = (0.0, math.inf),
                 ladder: ScaleLadder | None = None, N: int | None = None) -> list[dict]:
    """|<delta_x, f(H) P_I delta_y>| for f = 1 (t = None) and f = exp(-itH), by two routes.

    The spectral route sums psi(x) f(lambda) psi(y) over the window. The
    operator route forms P_I delta_y, propagates it with a Krylov exponential
    and takes the Hilbert-Schmidt norm of the rank-one operator
    delta_x <delta_x, .> f(H) P_I delta_y <delta_y, .>.
    """
    op = assemble(box, sample_for(ensemble, realization, box), interaction)
    w, V = la.eigh(op.dense())
    sel = (w >= interval[0]) & (w <= interval[1])
    lam, Psi = w[sel], V[:, sel]
    H = op.matrix.tocsc()
    rows = []
    for x, y in pairs:
        ix, iy = (int(box.index_of(z)[0]) for z in (x, y))
        py = Psi @ Psi[iy]
        dist = int(np.abs(np.asarray(x) - np.asarray(y)).max())
        for t in [None, *times]:
            f = np.ones_like(lam) if t is None else np.exp(-1j * t * lam)
            spectral = abs(complex((Psi[ix] * f * Psi[iy]).sum()))
            vec = py if t is None else expm_multiply(-1j * t * H, py.astype(complex))
            rank_one = np.zeros((1, 1), dtype=complex)
            rank_one[0, 0] = vec[ix]
            hs = float(np.linalg.norm(rank_one, "fro"))
            rows.append({"x": list(np.ravel(x)), "y": list(np.ravel(y)), "dist": dist,
                         "t": math.nan if t is None else float(t),
                         "spectral": spectral, "hs": hs, "diff": abs(spectral - hs),
                         "annulus": annulus_index(dist, ladder, N) if ladder is not None else None})
    return rows
