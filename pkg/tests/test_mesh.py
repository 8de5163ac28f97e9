import math

import numpy as np
import pytest

from pcalderon.geometry import Kind, build_scenario
from pcalderon.mesh import MeshFailure, OUTER, triangulate

from conftest import UNIT_DISK, disk_scenario


def test_mesh_is_conforming(mixed_mesh):
    mixed_mesh.check()
    assert np.all(mixed_mesh.areas > 0)
    assert mixed_mesh.circumdiameters.max() <= 0.05 * 1.0001


def test_area_matches_domain(mixed_mesh, mixed_scenario):
    # polygonal approximation of the unit circle loses O(h^2) of the area
    assert mixed_mesh.areas.sum() == pytest.approx(math.pi, rel=2e-3)
    for i, comp in enumerate(mixed_scenario.inclusions):
        assert mixed_mesh.areas[mixed_mesh.region == i + 1].sum() == pytest.approx(comp.shape.area, rel=5e-3)


def test_region_tags_follow_geometry(mixed_mesh, mixed_scenario):
    tags = mixed_scenario.region_of(mixed_mesh.centroids)
    assert np.array_equal(tags, mixed_mesh.region)
    assert mixed_mesh.region_mask(Kind.INSULATING).sum() == (mixed_mesh.region == 2).sum()


def test_outer_nodes_on_boundary(mixed_mesh):
    r = np.linalg.norm(mixed_mesh.nodes[mixed_mesh.outer_nodes], axis=1)
    assert r == pytest.approx(np.ones_like(r), abs=1e-12)
    assert (mixed_mesh.edge_tags == OUTER).sum() == len(mixed_mesh.outer_nodes)


def test_graded_mesh_resolves_inclusion():
    sc = disk_scenario()
    m = triangulate(sc, 0.1, h_fine=0.02, band=0.1)
    assert m.resolved_h() <= 0.02 * 1.5
    assert m.circumdiameters.max() <= 0.1 * 1.0001
    assert m.n_nodes < triangulate(sc, 0.02).n_nodes


def test_retagged_swaps_kinds_only():
    sc = disk_scenario("superconducting")
    ins = disk_scenario("insulating")
    m = triangulate(sc, 0.08)
    r = m.retagged(ins)
    assert r.kinds == (Kind.INSULATING,) and r.n_triangles == m.n_triangles
    with pytest.raises(ValueError):
        m.retagged(disk_scenario("insulating", radius=0.25))


def test_bad_size_rejected(sc_disk):
    with pytest.raises(MeshFailure):
        triangulate(sc_disk, 0.0)


def test_square_domain():
    sc = build_scenario({"kind": "square", "center": [0, 0], "side": 2.0},
                        [{"kind": "insulating", "shape": "polygon", "vertices": [[-0.3, -0.2], [0.4, -0.1], [0.0, 0.4]]}])
    m = triangulate(sc, 0.08)
    m.check()
    assert m.areas.sum() == pytest.approx(4.0, rel=1e-12)
