"""The compiled kernels must agree with the numpy fallback."""
import numpy as np
import pytest

from cyclicbp.kernels import available_backends, get_backend
from cyclicbp.network import compile_network

from conftest import random_instance

pytestmark = pytest.mark.skipif("cython" not in available_backends(), reason="extension not built")


@pytest.fixture(scope="module")
def pair():
    return get_backend("python"), get_backend("cython")


def nets(n=15):
    rng = np.random.default_rng(5)
    out = []
    for _ in range(n):
        topo, tr, _ = random_instance(rng)
        out.append(compile_network(topo, tr))
    return out, rng


def test_weights_agree(pair):
    py, cy = pair
    ns, rng = nets()
    for net in ns:
        q = rng.normal(5, 4, net.n_roads)
        qbar = rng.random(net.link_src.shape[0])
        a = py.bp_weights(q, net.link_src, net.link_dst, qbar, net.ent_phase, net.ent_road, net.ent_rate, net.n_phases)
        b = cy.bp_weights(q, net.link_src, net.link_dst, qbar, net.ent_phase, net.ent_road, net.ent_rate, net.n_phases)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
        for floor in (False, True):
            assert np.array_equal(py.queue_sum_weights(q, net.ent_phase, net.ent_road, net.n_phases, floor),
                                  cy.queue_sum_weights(q, net.ent_phase, net.ent_road, net.n_phases, floor))


def test_allocations_agree(pair):
    py, cy = pair
    ns, rng = nets()
    for net in ns:
        w = rng.normal(0, 20, net.n_phases)
        for eta in (1e-9, 0.25, 2.5, 1e3):
            assert np.allclose(py.softmax_alloc(w, net.junction_ptr, eta, 0.9),
                               cy.softmax_alloc(w, net.junction_ptr, eta, 0.9), rtol=1e-12, atol=1e-15)
        assert np.array_equal(py.argmax_alloc(w, net.junction_ptr, 0.9), cy.argmax_alloc(w, net.junction_ptr, 0.9))
        aw = np.abs(w)
        assert np.allclose(py.proportional_alloc(aw, net.junction_ptr, 0.9),
                           cy.proportional_alloc(aw, net.junction_ptr, 0.9), rtol=1e-12)


def test_transfer_agrees(pair):
    py, cy = pair
    ns, rng = nets()
    for net in ns:
        alloc = rng.random(net.n_phases)
        m1 = py.service_means(alloc, net.ent_phase, net.ent_road, net.ent_rate, net.n_roads, 0.5)
        m2 = cy.service_means(alloc, net.ent_phase, net.ent_road, net.ent_rate, net.n_roads, 0.5)
        assert np.allclose(m1, m2, rtol=1e-12)
        q = rng.uniform(0, 10, net.n_roads)
        arr = rng.uniform(0, 3, net.n_roads)
        r1 = py.fluid_transfer(q, m1, arr, net.link_src, net.link_dst, net.p_bar, net.exit_share)
        r2 = cy.fluid_transfer(q, m1, arr, net.link_src, net.link_dst, net.p_bar, net.exit_share)
        assert np.allclose(r1[0], r2[0], rtol=1e-12, atol=1e-12)
        assert np.allclose(r1[1], r2[1], rtol=1e-12)
        assert r1[2] == pytest.approx(r2[2], rel=1e-12)
