import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anderson_msa import geometry as geo
from anderson_msa.geometry import Rectangle


# --------------------------------------------------------------------------- brute-force oracles

def _proj(c: Rectangle, labels):
    """Union of one-particle cubes as an explicit set of lattice points (d = 1)."""
    pts = set()
    for j in labels:
        u, L = c.center[j - 1][0], c.radii[j - 1]
        pts.update(range(u - L, u + L + 1))
    return pts


def _pre_sep_brute(a: Rectangle, b: Rectangle) -> bool:
    n = a.n
    full_b = _proj(b, range(1, n + 1))
    for k in range(1, n + 1):
        for J in itertools.combinations(range(1, n + 1), k):
            Jc = [i for i in range(1, n + 1) if i not in J]
            PJ = _proj(a, J)
            if not PJ & (_proj(a, Jc) | full_b):
                return True
    return False


def _sep_brute(a, b, N):
    L = max(a.radii + b.radii)
    dist = max(abs(p[0] - q[0]) for p, q in zip(a.center, b.center))
    return (_pre_sep_brute(a, b) or _pre_sep_brute(b, a)) and dist > 7 * N * L


configs = st.integers(1, 3).flatmap(
    lambda n: st.lists(st.integers(-12, 12), min_size=n, max_size=n).map(lambda v: [[x] for x in v]))


# --------------------------------------------------------------------------- rectangles and norms

def test_rectangle_basics():
    r = Rectangle.cube([[0], [5]], 2)
    assert r.n == 2 and r.d == 1 and r.is_cube and r.L == 2
    assert r.shape == (5, 5) and r.size == 25
    assert r.sites().shape == (25, 2)
    assert geo.max_norm([[0], [3]], [[2], [-1]]) == 4
    assert geo.l1_norm([[0], [3]], [[2], [-1]]) == 6


@given(configs, st.integers(1, 3))
def test_index_roundtrip(c, L):
    r = Rectangle.cube(c, L)
    sites = r.sites()
    idx = r.index_of(sites)
    assert np.array_equal(idx, np.arange(r.size))
    k = r.size // 2
    assert np.array_equal(r.config_of(k).ravel(), sites[k])


def test_boundaries_free_chain():
    b = geo.boundaries(Rectangle.cube([[0]], 1))
    inner = sorted(int(p[0]) for p in b.inner)
    outer = sorted(int(p[0]) for p in b.outer)
    assert inner == [-1, 1] and outer == [-2, 2]


def test_shape_error():
    with pytest.raises(geo.ShapeError):
        geo.is_separable(Rectangle.cube([[0]], 1), Rectangle.cube([[0], [1]], 1), 2)


# --------------------------------------------------------------------------- separability

@settings(max_examples=300, deadline=None)
@given(configs, st.integers(-40, 40), st.integers(1, 3), st.integers(1, 3))
def test_separable_matches_brute_force(x, shift, L, N):
    y = [[v[0] + shift + k] for k, v in enumerate(x)]
    a, b = Rectangle.cube(x, L), Rectangle.cube(y, L)
    v = geo.is_separable(a, b, N)
    assert v.separable == _sep_brute(a, b, N)
    assert v.pre_separable == (_pre_sep_brute(a, b) or _pre_sep_brute(b, a))
    # the recorded witness is valid on its side
    if v.witness_subset is not None:
        src, other = (a, b) if v.witness_side == "first" else (b, a)
        J = v.witness_subset
        Jc = [i for i in range(1, src.n + 1) if i not in J]
        assert not _proj(src, J) & (_proj(src, Jc) | _proj(other, range(1, src.n + 1)))


@settings(max_examples=200, deadline=None)
@given(configs, st.integers(-30, 30), st.integers(1, 3))
def test_vectorized_mask_matches_scalar(x, shift, L):
    y = np.array([[v[0] + shift - k] for k, v in enumerate(x)])
    mask = geo._preseparable_mask(np.array(x), y[None], L)[0]
    a, b = Rectangle.cube(x, L), Rectangle.cube(y, L)
    assert mask == (_pre_sep_brute(a, b) or _pre_sep_brute(b, a))


def test_separable_example():
    v = geo.is_separable(Rectangle.cube([[0], [0]], 1), Rectangle.cube([[20], [20]], 1), 2)
    assert v.separable and v.witness_subset == (1, 2) and v.witness_side == "first"


def test_candidate_centers_count_and_content():
    x = [[0], [3], [7]]
    cands = geo.candidate_centers(x)
    assert len(cands) == 27
    assert all(set(c.ravel()) <= {0, 3, 7} for c in cands)


@pytest.mark.parametrize("n,L", [(1, 1), (2, 1), (2, 2)])
def test_covering_claim_small(n, L):
    x = np.arange(n).reshape(n, 1) * L
    assert geo.verify_candidate_centers(x, L, N=n) == 0


def test_non_separable_far_partners_sit_near_candidates():
    # a spread configuration has far partners that are not separable; each lies near a candidate
    x = np.array([[0], [20]])
    L, N = 1, 2
    h = 10 * N * 20
    cands = geo.candidate_centers(x)
    g = np.arange(-h, h + 1)
    ys = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2, 1)
    far = np.abs(ys - x).max(axis=(1, 2)) > 7 * N * L
    ys = ys[far]
    bad = ys[~geo._preseparable_mask(x, ys, L)]
    assert any(np.array_equal(y, [[20], [0]]) for y in bad)
    near = np.abs(bad[:, None] - np.asarray(cands)[None]).max(axis=(2, 3)).min(axis=1)
    assert (near <= 7 * N * L).all()


@settings(max_examples=200, deadline=None)
@given(configs, st.integers(-60, 60), st.integers(1, 3))
def test_spread_condition_implies_pre_separable(x, shift, L):
    n = len(x)
    N = max(n, 1)
    y = [[v[0] + shift] for v in x]
    if geo.separable_from_B(x, y, L, N):
        a, b = Rectangle.cube(x, L), Rectangle.cube(y, L)
        assert geo.pre_separable_witness(a, b) is not None or geo.pre_separable_witness(b, a) is not None


# --------------------------------------------------------------------------- interactivity

def test_classify_and_split():
    v = geo.classify_interactivity(Rectangle.cube([[0], [3], [20]], 1), 1)
    assert v.kind == "PI" and v.split == ((1, 2), (3,))
    assert geo.classify_interactivity(Rectangle.cube([[0], [3]], 1), 1).kind == "FI"


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(-15, 15), min_size=2, max_size=3), st.integers(1, 3), st.integers(0, 2))
def test_split_projection_distance(u, L, r0):
    r = Rectangle.cube([[v] for v in u], L)
    split = geo.find_split(r, r0)
    if split is None:
        return
    J, Jc = split
    # oracle: explicit site sets
    gap = min(abs(p - q) for p in _proj(r, J) for q in _proj(r, Jc))
    assert gap > r0
    assert 1 in J


def test_fi_projections_of_distant_cubes_are_disjoint():
    chk = geo.fi_projection_disjointness([[0], [2]], [[200], [201]], 2, 1)
    assert chk.disjoint


# --------------------------------------------------------------------------- ladders, probes, annuli

def test_scale_ladders():
    assert geo.scale_ladder(6, 2).levels == (6, 15, 59)
    assert geo.scale_ladder(4, 3).levels == (4, 9, 28, 149)
    assert geo.next_scale(65) == 525
    with pytest.raises(ValueError):
        geo.scale_ladder(3, 1)
    assert geo.scale_ladder(2, 1, strict=False).levels == (2, 3)


@given(st.integers(4, 10 ** 6))
def test_next_scale_exceeds_three_halves_power(L):
    Ln = geo.next_scale(L)
    assert Ln ** 2 > L ** 3 >= (Ln - 1) ** 2


def test_edge_probe_centers_and_disjointness():
    p = geo.edge_probe(2, 1, 1, 1, 2, 2)
    assert p.C_km == 8
    assert p.centers[0] == ((72,), (80,)) and p.centers[1] == ((136,), (144,))
    assert p.disjoint


def test_annulus_membership():
    lad = geo.scale_ladder(6, 2)
    a = geo.annulus([[0], [0]], lad, 0, 2.0, 2)
    assert not a.contains([[a.inner_radius], [0]])
    assert a.contains([[a.inner_radius + 1], [0]])
    assert a.contains([[int(a.outer_radius)], [0]])


# --------------------------------------------------------------------------- counts

def test_count_singular_far_pairs():
    L = 1
    centers = [[[0], [0]], [[100], [100]], [[1], [1]]]
    verd = [geo.classify_interactivity(Rectangle.cube(c, L), 1) for c in centers]
    cnt = geo.count_singular(centers, [True, True, True], verd, L, 2)
    assert cnt.M == 2 and cnt.M_FI == 2 and cnt.M_PI == 0 and cnt.exact
    assert geo.count_singular(centers, [False] * 3, verd, L, 2).M == 0


def _clique_brute(compat, members):
    best = 0
    for k in range(1, len(members) + 1):
        for sub in itertools.combinations(members, k):
            if all(compat[a, b] for a, b in itertools.combinations(sub, 2)):
                best = k
    return best


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 9).flatmap(lambda m: st.tuples(
    st.just(m), st.lists(st.booleans(), min_size=m * m, max_size=m * m),
    st.lists(st.integers(0, m - 1), max_size=m, unique=True))))
def test_max_clique_matches_subset_enumeration(data):
    m, bits, members = data
    A = np.array(bits).reshape(m, m)
    A = A | A.T
    assert geo._max_clique(A, members, True) == _clique_brute(A, members)
    greedy = geo._max_clique(A, members, False)
    assert greedy <= _clique_brute(A, members) and (greedy >= 1 or not members)
