import numpy as np
import pytest

from pcalderon import fem
from pcalderon.geometry import build_scenario
from pcalderon.mesh import triangulate

from conftest import UNIT_DISK, boundary_angle, disk_scenario


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_linear_data_reproduced_exactly(p):
    # affine functions are p-harmonic for every p and lie in the P1 space
    sc = build_scenario(UNIT_DISK, [], p=p)
    m = triangulate(sc, 0.1)
    xy = m.nodes
    exact = 0.3 + 0.7 * xy[:, 0] - 0.2 * xy[:, 1]
    sol = fem.solve_p(sc, m, exact[m.outer_nodes]) if p != 2 else fem.solve_p2(sc, m, exact[m.outer_nodes])
    assert np.abs(sol.nodal_values - exact).max() <= 1e-8


def test_newton_matches_linear_solver_at_p2(mixed_scenario, mixed_mesh):
    f = np.cos(boundary_angle(mixed_mesh)) + 0.3 * np.sin(3 * boundary_angle(mixed_mesh))
    a = fem.solve_p2(mixed_scenario, mixed_mesh, f)
    b = fem.solve_p(mixed_scenario, mixed_mesh, f, p=2.0)
    assert np.abs(a.nodal_values - b.nodal_values).max() <= 1e-9


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_euler_lagrange_and_component_flux(mixed_mesh, p):
    sc = mixed_mesh.scenario.with_p(p)
    f = np.cos(boundary_angle(mixed_mesh)) + 0.3 * np.sin(2 * boundary_angle(mixed_mesh))
    sol = fem.solve_p(sc, mixed_mesh, f)
    assert sol.converged
    assert fem.el_residual(sol) <= 1e-8
    assert abs(fem.component_flux(sol, 0)) <= 1e-9
    # superconductor is a single tied value
    nodes = mixed_mesh.inclusion_nodes(0)
    assert np.ptp(sol.nodal_values[nodes]) == 0.0
    assert sol.component_constants[0] == pytest.approx(sol.nodal_values[nodes[0]])


def test_flux_vanishes_inside_inclusions(mixed_mesh, mixed_scenario):
    sol = fem.solve_p2(mixed_scenario, mixed_mesh, np.cos(boundary_angle(mixed_mesh)))
    fl = fem.flux_field(sol)
    assert np.all(fl[mixed_mesh.region > 0] == 0.0)
    assert np.abs(fl[mixed_mesh.region == 0]).max() > 0.1


def test_energy_is_minimal(mixed_scenario, mixed_mesh):
    # any admissible perturbation raises the energy
    sc = mixed_scenario.with_p(3.0)
    f = np.cos(boundary_angle(mixed_mesh))
    sol = fem.solve_p(sc, mixed_mesh, f)
    e0 = fem.energy(sol)
    dm = sol.dofmap
    rng = np.random.default_rng(1)
    for _ in range(3):
        dx = rng.normal(size=dm.n_dofs) * 1e-3
        u = dm.expand(dm.restrict(sol.nodal_values) + dx, sol.nodal_values)
        pert = fem.DiscreteSolution(sc, mixed_mesh, u, {}, 3.0, 0.0, dofmap=dm)
        assert fem.energy(pert) > e0


def test_energy_converges_under_refinement():
    sc = disk_scenario("insulating", p=3.0)
    vals = []
    for h in (0.1, 0.05, 0.025):
        m = triangulate(sc, h)
        vals.append(fem.energy(fem.solve_p(sc, m, np.cos(boundary_angle(m)))))
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 < 0.6 * d1


def test_bad_trace_rejected(sc_disk_mesh, sc_disk):
    with pytest.raises(ValueError):
        fem.solve_p2(sc_disk, sc_disk_mesh, np.zeros(3))
    bad = np.zeros(len(sc_disk_mesh.outer_nodes))
    bad[0] = np.nan
    with pytest.raises(ValueError):
        fem.solve_p2(sc_disk, sc_disk_mesh, bad)


def test_csv_outputs(sc_disk, sc_disk_mesh):
    sol = fem.solve_p2(sc_disk, sc_disk_mesh, np.cos(boundary_angle(sc_disk_mesh)))
    assert fem.solution_csv(sol).splitlines()[0] == "node,x,y,u"
    assert len(fem.flux_csv(sol).splitlines()) == sc_disk_mesh.n_triangles + 1
