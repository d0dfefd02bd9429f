import numpy as np
import pytest

from dropletmm.grid import (DIRICHLET, EXTERIOR, INTERIOR, DomainError, ForcingPositivityError,
                            build_disk_complement_domain, build_domain_from_labels, build_interval_domain,
                            coarsen, dirichlet_values, domain_from_config)


def test_interval_layout():
    d = build_interval_domain(2.0, 0.25)
    assert d.shape == (9,)
    assert d.cell_class[0] == DIRICHLET
    assert np.all(d.cell_class[1:] == INTERIOR)
    assert d.guard[-2:].all() and not d.guard[:-2].any()
    np.testing.assert_allclose(d.coordinates()[0], 0.25 * np.arange(9))
    assert d.cell_measure == 0.25


def test_two_sided_interval_has_no_guard():
    d = build_interval_domain(1.0, 0.125, two_sided=True, phi_right=1.5)
    assert d.cell_class[0] == d.cell_class[-1] == DIRICHLET
    assert not d.guard.any()
    assert d.phi[-1] == 1.5


@pytest.mark.parametrize("length,h", [(1.0, 0.3), (0.5, 0.25), (-1.0, 0.1)])
def test_interval_rejects_bad_geometry(length, h):
    with pytest.raises(DomainError):
        build_interval_domain(length, h)


def test_disk_domain_classes():
    d = build_disk_complement_domain([(0.0, 0.0)], 1.0, ((-3, 3), (-3, 3)), 0.25)
    X, Y = d.coordinates()
    r = np.hypot(X, Y)
    # a cell fully inside the disk is EXTERIOR, a cell far outside INTERIOR
    assert np.all(d.cell_class[r < 1.0 - 0.36] == EXTERIOR)
    assert np.all(d.cell_class[r > 1.0 + 0.36] == INTERIOR)
    assert d.dirichlet.sum() > 0
    # four-neighbour ring around the DIRICHLET layer, all INTERIOR
    ring = d.dirichlet_ring()
    assert ring.any() and np.all(d.interior[ring])
    assert d.check_connectivity()


def test_disk_domain_guard_band():
    d = build_disk_complement_domain([(0.0, 0.0)], 1.0, ((-3, 3), (-3, 3)), 0.25, guard_band=3)
    assert d.guard[:3].all() and d.guard[:, -3:].all()
    assert not d.guard[3:-3, 3:-3].any()
    adj = d.guard_adjacent()
    assert adj[3, 3:-3].all() and not np.any(adj & d.guard)


def test_disk_validation():
    with pytest.raises(DomainError):
        build_disk_complement_domain([(0.0, 0.0)], 1.0, ((-1.2, 3), (-3, 3)), 0.25)
    with pytest.raises(DomainError):
        build_disk_complement_domain([(0.0, 0.0), (1.5, 0.0)], 1.0, ((-3, 5), (-3, 3)), 0.25)


def test_labels_connectivity_enforced():
    labels = np.array([DIRICHLET, INTERIOR, EXTERIOR, INTERIOR])
    with pytest.raises(DomainError):
        build_domain_from_labels(labels, 1.0)


def test_phi_below_one_rejected():
    labels = np.array([DIRICHLET, INTERIOR, INTERIOR])
    with pytest.raises(DomainError):
        build_domain_from_labels(labels, 1.0, phi=np.array([0.5, 0, 0]))


def test_dirichlet_values_and_floor():
    d = build_interval_domain(1.0, 0.25)
    g = dirichlet_values(d, 0.7)
    assert g[0] == 0.7 and np.all(g[1:] == 0)
    with pytest.raises(ForcingPositivityError):
        dirichlet_values(d, 1e-9)


def test_domain_from_config_roundtrip():
    d = domain_from_config({"kind": "disks", "centers": [[0, 0]], "r0": 1.0, "box": [[-2, 2], [-2, 2]], "h": 0.25})
    assert d.recipe["kind"] == "disks" and d.shape == (16, 16)
    with pytest.raises(DomainError):
        domain_from_config({"kind": "torus"})


def test_coarsen_classes():
    d = build_disk_complement_domain([(0.0, 0.0)], 1.0, ((-4, 4), (-4, 4)), 0.125)
    c = coarsen(d, 4)
    assert c.shape == (16, 16) and c.h == 0.5
    assert c.dirichlet.any() and c.interior.any()
    assert coarsen(d, 1) is d


def test_domain_is_immutable():
    d = build_interval_domain(1.0, 0.25)
    with pytest.raises(ValueError):
        d.cell_class[1] = DIRICHLET
