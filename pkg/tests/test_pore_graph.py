import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from porodiff.errors import ConfigError, EmptyInput
from porodiff.pore_graph import (
    ACTIVE,
    ExtractionConfig,
    PoreGraph,
    canonical_order,
    decompose,
    edge_index,
    equivalent_radius,
    extract_pore_graph,
    pair_lookup,
    select_nmax,
)
from porodiff.synth import SynthConfig, generate, rasterize_ball
from porodiff.voxel import VoxelVolume

from oracles import interface_pairs


def ball_volume(radius, pad=2):
    c = radius + pad
    return VoxelVolume(rasterize_ball((2 * c + 1,) * 3, (c, c, c), radius).astype(np.uint8))


def dumbbell():
    dims = (40, 24, 24)
    m = rasterize_ball(dims, (10, 12, 12), 6) | rasterize_ball(dims, (29, 12, 12), 6)
    x, y, z = np.ogrid[:40, :24, :24]
    m |= ((y - 12) ** 2 + (z - 12) ** 2 <= 4) & (x >= 10) & (x <= 29)
    return VoxelVolume(m.astype(np.uint8))


def test_equivalent_radius_values():
    assert equivalent_radius(1) == pytest.approx(0.620350, abs=1e-6)
    assert equivalent_radius(4189) == pytest.approx(10.0002, abs=1e-4)
    assert equivalent_radius(925) == pytest.approx(6.04437, abs=1e-5)
    with pytest.raises(ValueError):
        equivalent_radius(0)


def test_edge_index_layout():
    iu, ju = edge_index(4)
    assert list(zip(iu, ju)) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    L = pair_lookup(4)
    assert L[2, 1] == L[1, 2] == 3 and L[0, 0] == -1


@pytest.mark.parametrize("radius,count", [(10, 4169), (6, 925)])
def test_ball_yields_single_node(radius, count):
    v = ball_volume(radius)
    g, labels = extract_pore_graph(v, ExtractionConfig(n_max=64))
    assert g.n_active == 1 and not g.throats()
    assert g.B[0, 3] == equivalent_radius(count) / max(v.dims)
    c = (v.dims[0] - 1) / 2
    np.testing.assert_allclose(g.voxel_geometry()[0][0], [c, c, c], atol=1e-12)
    assert labels.data.max() == 1


def test_dumbbell_has_one_throat():
    v = dumbbell()
    g, labels = extract_pore_graph(v, ExtractionConfig(n_max=64))
    assert g.n_active == 2
    assert g.throats() == [(0, 1)]
    assert interface_pairs(labels.data) == {(1, 2)}


def test_small_bodies_dropped():
    a = np.zeros((20, 20, 20), dtype=np.uint8)
    a[1:3, 1:3, 1:3] = 1  # 8 voxels < v_min
    a[8:14, 8:14, 8:14] = 1
    g, _ = extract_pore_graph(VoxelVolume(a), ExtractionConfig(v_min=16, n_max=64))
    assert g.n_active == 1


def test_truncation_keeps_largest():
    v = generate(SynthConfig(dims=(48, 48, 48), target_porosity=0.3, seed=4))
    _, regions, _ = decompose(v)
    assert len(regions) > 64
    g, labels = extract_pore_graph(v, ExtractionConfig(n_max=64))
    assert g.n_active == 64
    kept = sorted((r.count for r in regions), reverse=True)[:64]
    got = sorted(np.bincount(labels.data.ravel())[1:65].tolist(), reverse=True)
    assert got == kept
    g.check()


def test_config_validation():
    with pytest.raises(ConfigError):
        ExtractionConfig(n_max=100)
    with pytest.raises(ConfigError):
        ExtractionConfig(connectivity=18)


def test_extraction_is_canonical_and_idempotent():
    v = generate(SynthConfig(dims=(32, 32, 32), seed=1))
    g, _ = extract_pore_graph(v, ExtractionConfig(n_max=128))
    assert canonical_order(g) == g
    z = g.B[g.active, 2]
    assert np.all(np.diff(z) >= 0)


@given(st.integers(0, 2**32 - 1))
def test_canonical_order_undoes_permutations(seed):
    v = generate(SynthConfig(dims=(24, 24, 24), seed=3))
    g, _ = extract_pore_graph(v, ExtractionConfig(n_max=64))
    perm = np.random.default_rng(seed).permutation(64)
    assert canonical_order(g.permuted(perm)) == g


def test_permuted_preserves_structure():
    v = generate(SynthConfig(dims=(24, 24, 24), seed=3))
    g, _ = extract_pore_graph(v, ExtractionConfig(n_max=64))
    perm = np.random.default_rng(0).permutation(64)
    h = g.permuted(perm)
    inv = np.argsort(perm)
    assert h.permuted(inv) == g
    A, Ah = g.adjacency(), h.adjacency()
    np.testing.assert_array_equal(Ah, A[np.ix_(perm, perm)])


def test_json_roundtrip():
    v = generate(SynthConfig(dims=(24, 24, 24), seed=8))
    g, _ = extract_pore_graph(v, ExtractionConfig(n_max=64))
    assert PoreGraph.from_json(g.to_json()) == g


def test_check_and_sanitize():
    g = PoreGraph(64, (16, 16, 16))
    g.C[:2] = ACTIVE
    g.B[:2] = [[0.5, 0.5, 0.5, 0.1]] * 2
    g.E[pair_lookup(64)[0, 2]] = 1
    with pytest.raises(ValueError):
        g.check()
    s = g.sanitized()
    s.check()
    assert not s.throats()


def test_select_nmax():
    assert select_nmax([10] * 100) == 64
    assert select_nmax(list(range(1, 101))) == 128  # p99 = 99
    assert select_nmax([65]) == 128
    with pytest.raises(EmptyInput):
        select_nmax([])
