import math

import numpy as np
import pytest

from porodiff.boundary import (
    BoundaryComponent,
    BoundaryGraph,
    BoundaryParams,
    boundary_graph_from_slices,
    boundary_graph_from_volume,
    build_boundary_graph,
    consistency_score,
    extract_boundary_components,
    match_top_bottom,
    segment_slice,
)
from porodiff.errors import Overflow
from porodiff.pore_graph import ACTIVE, THROAT, pair_lookup
from porodiff.synth import SynthConfig, generate


def disc(shape, center, radius):
    x, y = np.ogrid[: shape[0], : shape[1]]
    return ((x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius**2).astype(np.uint8)


def comp(x, y, r, xi=(0.0,), side="bottom"):
    return BoundaryComponent(side, (x, y), r, np.array(xi, dtype=float), np.zeros((1, 2), dtype=int))


def test_disc_component():
    (c,) = extract_boundary_components(disc((32, 32), (15, 15), 8), "bottom")
    assert c.area == 197
    assert c.radius == pytest.approx(math.sqrt(197 / math.pi)) and c.radius == pytest.approx(7.91878, abs=1e-5)
    assert c.centroid == (15.0, 15.0)
    assert c.descriptor.shape == (9,)


def test_segment_threshold():
    np.testing.assert_array_equal(segment_slice([[0.2, 0.5, 0.7]], 0.5), [[0, 0, 1]])


def test_consistency_score_examples():
    a = comp(0, 0, 3)
    assert consistency_score(a, comp(4, 0, 3), 4, 2, 1) == pytest.approx(math.exp(-0.5))
    assert consistency_score(a, comp(0, 0, 3), 4, 2, 1) == 1.0
    b = comp(4, 0, 5, xi=(1.0,))
    assert consistency_score(a, b, 4, 2, 1) == pytest.approx(0.22313, abs=1e-5)


def test_mutual_knn_matches_aligned_components():
    bottom = disc((32, 32), (8, 8), 3) | disc((32, 32), (24, 24), 3)
    top = disc((32, 32), (8, 9), 3) | disc((32, 32), (24, 24), 3)
    bs = extract_boundary_components(bottom, "bottom")
    ts = extract_boundary_components(top, "top")
    params = BoundaryParams(standardize=False, sigma_xi=50.0)
    pairs = match_top_bottom(bs, ts, params)
    assert [(a, b) for a, b, _ in pairs] == [(0, 0), (1, 1)]
    assert all(p > params.tau_bt for *_, p in pairs)


def test_boundary_graph_masks():
    bottom = disc((32, 32), (8, 8), 3) | disc((32, 32), (8, 16), 3)
    top = disc((32, 32), (20, 20), 4)
    gb = boundary_graph_from_slices(bottom, top, 64, depth=20)
    gb.check()
    assert gb.n_observed == 3
    assert list(gb.side[:4]) == [0, 0, 1, -1]
    assert np.all(gb.values.C[:3] == ACTIVE) and gb.mask_B[:3].all() and not gb.mask_B[3:].any()
    np.testing.assert_array_equal(gb.values.B[:2, 2], [0.0, 0.0])
    assert gb.values.B[2, 2] == 1.0
    # the two bottom discs overlap after one-pixel dilation
    k = pair_lookup(64)[0, 1]
    assert gb.mask_E_obs[k] and gb.values.E[k] == THROAT and gb.mask_E_obs.sum() == 1


def test_overflow():
    comps = [comp(float(i), 0.0, 1.0) for i in range(65)]
    with pytest.raises(Overflow):
        build_boundary_graph(comps, [], [], 64, (32, 32, 32))


def test_json_roundtrip():
    v = generate(SynthConfig(dims=(32, 32, 32), seed=2))
    gb = boundary_graph_from_volume(v, 64)
    back = BoundaryGraph.from_json(gb.to_json())
    assert back.values == gb.values
    for name in ("mask_B", "mask_C", "mask_E_obs", "mask_E_soft", "soft_weight", "side"):
        np.testing.assert_array_equal(getattr(back, name), getattr(gb, name))
