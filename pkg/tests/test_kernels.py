"""Kernel backends: correctness against naive oracles, plus c/py parity."""

import math

import numpy as np
import pytest

from pedflow import kernels


def naive_lstm_step(pre, c_prev):
    """Scalar-loop oracle for the fused gate kernel."""
    b, h4 = pre.shape
    h = h4 // 4
    sig = lambda v: 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1 + math.exp(v))
    hh = np.zeros((b, h))
    cc = np.zeros((b, h))
    for bi in range(b):
        for k in range(h):
            i = sig(pre[bi, k])
            f = sig(pre[bi, h + k])
            g = math.tanh(pre[bi, 2 * h + k])
            o = sig(pre[bi, 3 * h + k])
            cc[bi, k] = f * c_prev[bi, k] + i * g
            hh[bi, k] = o * math.tanh(cc[bi, k])
    return hh, cc


class TestLstmGates:
    def test_forward_matches_naive(self, rng):
        pre = rng.normal(0, 2, (5, 12))
        c_prev = rng.normal(0, 1, (5, 3))
        h, c, act = kernels.lstm_gates_forward(pre, c_prev)
        h0, c0 = naive_lstm_step(pre, c_prev)
        np.testing.assert_allclose(h, h0, rtol=1e-12)
        np.testing.assert_allclose(c, c0, rtol=1e-12)
        assert act.shape == (5, 12)

    def test_forward_extreme_preactivations_stay_finite(self):
        pre = np.array([[1000.0, -1000.0, 50.0, -50.0]])
        c_prev = np.array([[0.7]])
        h, c, act = kernels.lstm_gates_forward(pre, c_prev)
        assert np.all(np.isfinite(h)) and np.all(np.isfinite(c))

    def test_backward_matches_numeric(self, rng):
        b, h = 3, 4
        pre = rng.normal(0, 1.5, (b, 4 * h))
        c_prev = rng.normal(0, 1, (b, h))
        dh = rng.normal(0, 1, (b, h))
        dc_next = rng.normal(0, 1, (b, h))

        def loss(p, cp):
            hh, cc, _ = kernels.lstm_gates_forward(p, cp)
            return float((hh * dh).sum() + (cc * dc_next).sum())

        _, c, act = kernels.lstm_gates_forward(pre, c_prev)
        dpre, dc_prev = kernels.lstm_gates_backward(dh, dc_next, act, c_prev, c)
        eps = 1e-6
        for arr, grad in ((pre, dpre), (c_prev, dc_prev)):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                up = loss(pre, c_prev)
                arr[idx] = orig - eps
                dn = loss(pre, c_prev)
                arr[idx] = orig
                num = (up - dn) / (2 * eps)
                assert abs(num - grad[idx]) < 1e-7 * max(1.0, abs(num))


class TestOccupancy:
    EDGES = (1.0, 2.0, 3.0, 4.0)

    def test_ahead_neighbor_ring_placement(self):
        for dist, ring in ((0.5, 0), (1.5, 1), (2.5, 2), (3.5, 3)):
            counts = kernels.occupancy_counts(
                np.array([[dist, 0.0]]), 1.0, 0.0, self.EDGES, 8)
            assert counts[ring * 8] == 1 and counts.sum() == 1

    def test_ring_boundary_belongs_inward(self):
        counts = kernels.occupancy_counts(np.array([[1.0, 0.0]]), 1.0, 0.0, self.EDGES, 8)
        assert counts[0] == 1

    def test_beyond_last_ring_ignored(self):
        counts = kernels.occupancy_counts(np.array([[4.5, 0.0]]), 1.0, 0.0, self.EDGES, 8)
        assert counts.sum() == 0

    def test_heading_rotates_frame(self):
        # heading north, neighbor to the world east = 90 degrees to the right
        counts = kernels.occupancy_counts(
            np.array([[1.0, 0.0]]), np.cos(np.pi / 2), np.sin(np.pi / 2), self.EDGES, 8)
        assert counts[6] == 1

    def test_empty(self):
        counts = kernels.occupancy_counts(np.zeros((0, 2)), 1.0, 0.0, self.EDGES, 8)
        assert counts.sum() == 0 and counts.shape == (32,)

    def test_all_pairs_matches_single(self, rng):
        pos = rng.uniform(-5, 5, (12, 2))
        theta = rng.uniform(-np.pi, np.pi, 12)
        all_counts = kernels.occupancy_counts_all(
            pos, np.cos(theta), np.sin(theta), self.EDGES, 8)
        for i in range(12):
            rel = np.delete(pos, i, axis=0) - pos[i]
            single = kernels.occupancy_counts(
                rel, np.cos(theta[i]), np.sin(theta[i]), self.EDGES, 8)
            np.testing.assert_array_equal(all_counts[i], single)

    def test_total_count_conserved(self, rng):
        pos = rng.uniform(-2, 2, (9, 2))
        theta = rng.uniform(-np.pi, np.pi, 9)
        counts = kernels.occupancy_counts_all(pos, np.cos(theta), np.sin(theta),
                                              self.EDGES, 8)
        r = np.hypot(*(pos[None] - pos[:, None]).transpose(2, 0, 1))
        within = (r <= 4.0).sum() - 9  # discount the diagonal
        assert counts.sum() == within


class TestAvoidance:
    A, B, GAIN = 10.0, 0.8, 2.5

    def test_pair_at_inflection_distance(self):
        pos = np.array([[0.0, 0.0], [0.8, 0.0]])
        disp, nc = kernels.avoidance_terms(pos, self.A, self.B, self.GAIN, 1e-9)
        # s(0.8) = gain/2; each agent pushed directly away from the other
        np.testing.assert_allclose(disp[0], [-1.25, 0.0], rtol=1e-12)
        np.testing.assert_allclose(disp[1], [1.25, 0.0], rtol=1e-12)
        assert nc.sum() == 0

    def test_far_pair_negligible(self):
        pos = np.array([[0.0, 0.0], [10.0, 0.0]])
        disp, _ = kernels.avoidance_terms(pos, self.A, self.B, self.GAIN, 1e-9)
        assert np.abs(disp).max() < 1e-30

    def test_antisymmetric_pair(self, rng):
        pos = rng.uniform(-1, 1, (2, 2))
        disp, _ = kernels.avoidance_terms(pos, self.A, self.B, self.GAIN, 1e-9)
        np.testing.assert_allclose(disp[0], -disp[1], rtol=1e-12)

    def test_coincident_counted_not_summed(self):
        pos = np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]])
        disp, nc = kernels.avoidance_terms(pos, self.A, self.B, self.GAIN, 1e-9)
        assert list(nc) == [1, 1, 0]
        assert np.all(np.isfinite(disp))

    def test_single_agent(self):
        disp, nc = kernels.avoidance_terms(np.array([[0.0, 0.0]]),
                                           self.A, self.B, self.GAIN, 1e-9)
        assert np.all(disp == 0) and nc[0] == 0


@pytest.mark.skipif(len(kernels.available_backends()) < 2,
                    reason="compiled kernels not built")
class TestBackendParity:
    """c and py backends agree to near machine precision on random data.

    Not bitwise: numpy's vectorized exp/tanh and libm may differ in the
    final ulp. Within one backend results are bit-reproducible.
    """

    def setup_method(self):
        self.c = kernels.get_backend("c")
        self.py = kernels.get_backend("py")

    def test_lstm_forward_backward(self, rng):
        pre = rng.normal(0, 3, (16, 64))
        c_prev = rng.normal(0, 1, (16, 16))
        hc, cc, actc = self.c.lstm_gates_forward(pre, c_prev)
        hp, cp_, actp = self.py.lstm_gates_forward(pre, c_prev)
        np.testing.assert_allclose(hc, hp, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(cc, cp_, rtol=1e-12, atol=1e-15)
        dh = rng.normal(0, 1, (16, 16))
        dc = rng.normal(0, 1, (16, 16))
        gc = self.c.lstm_gates_backward(dh, dc, actc, c_prev, cc)
        gp = self.py.lstm_gates_backward(dh, dc, actp, c_prev, cp_)
        for a, b in zip(gc, gp):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-14)

    def test_occupancy(self, rng):
        pos = rng.uniform(-6, 6, (40, 2))
        th = rng.uniform(-np.pi, np.pi, 40)
        a = self.c.occupancy_counts_all(pos, np.cos(th), np.sin(th), (1.0, 2.0, 3.0, 4.0), 8)
        b = self.py.occupancy_counts_all(pos, np.cos(th), np.sin(th), (1.0, 2.0, 3.0, 4.0), 8)
        np.testing.assert_array_equal(a, b)

    def test_avoidance(self, rng):
        pos = rng.uniform(-3, 3, (30, 2))
        da, na = self.c.avoidance_terms(pos, 10.0, 0.8, 2.5, 1e-9)
        db, nb = self.py.avoidance_terms(pos, 10.0, 0.8, 2.5, 1e-9)
        np.testing.assert_allclose(da, db, rtol=1e-12, atol=1e-15)
        np.testing.assert_array_equal(na, nb)

    def test_sigmoid(self, rng):
        x = rng.normal(0, 100, 500)
        np.testing.assert_allclose(self.c.sigmoid(x), self.py.sigmoid(x),
                                   rtol=1e-13, atol=0)
