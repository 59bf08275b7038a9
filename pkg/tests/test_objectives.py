import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpgnn.core import (
    AugmentedModel,
    CompletionNetwork,
    LinearPrior,
    completion_forward,
    init_augmented,
    unflatten_params,
)
from wpgnn.errors import ConfigurationError
from wpgnn.objectives import (
    Dataset,
    Hyperparams,
    RegSet,
    WeightVector,
    kernel_weights,
    model_weights,
    residuals,
    total_cost,
    v_data,
    v_phy_classical,
    v_reg_weighted,
)

PRIOR = LinearPrior.scalar(0.8187, 0.1813)


def random_model(rng, prior=PRIOR, n_n=4, g=False, scale=0.3):
    m = init_augmented(prior, n_n, int(rng.integers(1 << 30)), output_completion=g)
    return unflatten_params(m, rng.normal(size=m.n_params) * scale)


def random_problem(rng, N=3, Nbar=2, n_x=1, n_u=1, n_y=1, g=False):
    if n_x == 1 and n_u == 1 and n_y == 1:
        prior = PRIOR
    else:
        prior = LinearPrior(rng.normal(size=(n_x, n_x)) * 0.3, rng.normal(size=(n_x, n_u)),
                            rng.normal(size=(n_y, n_x)), rng.normal(size=(n_y, n_u)))
    m = random_model(rng, prior, g=g)
    d = Dataset(rng.normal(size=(N, n_u)), rng.normal(size=(N, n_y)))
    reg = RegSet.from_prior(prior, rng.normal(size=(Nbar, n_u)) * 2)
    hp = Hyperparams(gamma=rng.uniform(0.01, 2), gamma_x=rng.uniform(0.01, 2),
                     gamma_y=rng.uniform(0.01, 2), sigma=rng.uniform(0.2, 2),
                     epsilon=rng.uniform(0.01, 1))
    return m, d, reg, hp


def loop_sim(m, u, x0):
    """Reference free-run simulation written directly from the model equations."""
    x = np.array(x0, dtype=float)
    xs, ys, fs, gs = [], [], [], []
    for uk in np.atleast_2d(u):
        f = completion_forward(m.f_net, x, uk)
        g = completion_forward(m.g_net, x, uk) if m.g_net is not None else np.zeros(m.prior.n_y)
        xs.append(x)
        ys.append(m.prior.output(x, uk) + g)
        fs.append(f)
        gs.append(g)
        x = m.prior.state(x, uk) + f
    return np.array(xs), np.array(ys), np.array(fs), np.array(gs)


def brute_cost(mode, m, d, reg, hp, weights=None):
    x0 = np.zeros(m.prior.n_x)
    xs, ys, _, _ = loop_sim(m, d.u.values, x0)
    vd = sum(float(np.sum((d.y.values[k] - ys[k]) ** 2)) for k in range(d.N)) / d.N
    if mode == "baseline":
        return vd
    xb, yb, fb, gb = loop_sim(m, reg.u_bar.values, x0)
    if mode == "classical":
        _, yp, _, _ = loop_sim(AugmentedModel(m.prior, _zero_like(m.f_net)), reg.u_bar.values, x0)
        return vd + hp.gamma * sum(float(np.sum((yp[j] - yb[j]) ** 2)) for j in range(reg.N)) / reg.N
    if weights is None:
        weights = []
        for j in range(reg.N):
            zj = np.concatenate((xb[j], reg.u_bar.values[j]))
            s = 0.0
            for k in range(d.N):
                zk = np.concatenate((xs[k], d.u.values[k]))
                s += math.exp(-float(np.sum((zk - zj) ** 2)) / (2 * hp.sigma ** 2))
            weights.append(1.0 / (s + hp.epsilon))
    total = 0.0
    for j in range(reg.N):
        total += weights[j] * (hp.gamma_x * float(np.sum(fb[j] ** 2))
                               + hp.gamma_y * float(np.sum(gb[j] ** 2)))
    return vd + total / reg.N


def _zero_like(net):
    return CompletionNetwork(np.zeros_like(net.W_in), np.zeros_like(net.b_hidden),
                             np.zeros_like(net.W_out), np.zeros_like(net.b_out),
                             np.zeros_like(net.A_lin), np.zeros_like(net.B_lin))


class TestVData:
    def test_exact_model(self):
        m = init_augmented(PRIOR, 3, 0)
        u = np.sin(np.arange(20))
        from wpgnn.core import simulate
        d = Dataset(u, simulate(PRIOR, u)[1])
        assert v_data(m, d) == 0.0

    def test_hand_value(self):
        # zero-state prior with C = 1 and u = 0 gives yhat = 0
        m = init_augmented(PRIOR, 3, 0)
        d = Dataset([0.0, 0.0], [1.0, -1.0])
        assert v_data(m, d) == 1.0

    def test_divergence_is_inf(self):
        m = init_augmented(LinearPrior.scalar(1e200, 1.0), 2, 0)
        d = Dataset(np.ones(5), np.zeros(5))
        assert v_data(m, d, [1e200]) == math.inf


class TestVPhy:
    def test_zero_completion(self):
        rng = np.random.default_rng(0)
        m = init_augmented(PRIOR, 5, 1)
        reg = RegSet(rng.normal(size=50))
        assert v_phy_classical(m, PRIOR, reg) == 0.0

    def test_hand_value(self):
        net = CompletionNetwork(np.zeros((1, 2)), [0.0], [[0.0]], [0.0], [[0.0]], [[0.0]])
        gnet = CompletionNetwork(np.zeros((1, 2)), [0.0], [[0.0]], [-0.5], [[0.0]], [[0.0]])
        m = AugmentedModel(PRIOR, net, gnet)
        reg = RegSet([0.0], [1.0])  # reference output 1, model output -0.5
        assert v_phy_classical(m, PRIOR, reg) == pytest.approx(2.25)
        m = AugmentedModel(PRIOR, net, CompletionNetwork(np.zeros((1, 2)), [0.0], [[0.0]],
                                                         [0.5], [[0.0]], [[0.0]]))
        assert v_phy_classical(m, PRIOR, RegSet([0.0], [1.0])) == pytest.approx(0.25)


class TestKernelWeights:
    def test_coincident(self):
        w = kernel_weights([([0.3], [0.1])], [([0.3], [0.1])], 1.0, 0.1)
        assert w.w[0] == pytest.approx(1 / 1.1, rel=1e-15)

    def test_far_field(self):
        w = kernel_weights(np.zeros((5, 2)), np.array([[1e3, 1e3]]), 0.1, 0.1)
        assert w.w[0] == pytest.approx(10.0, rel=1e-15)

    def test_hand_value(self):
        # squared distance 0.002 with sigma^2 = 0.001
        w = kernel_weights(np.array([[0.0, 0.0]]), np.array([[math.sqrt(0.002), 0.0]]),
                           math.sqrt(0.001), 0.1)
        assert w.w[0] == pytest.approx(1 / (math.exp(-1) + 0.1), rel=1e-12)
        assert w.w[0] == pytest.approx(2.13730, abs=1e-5)

    def test_bad_params(self):
        with pytest.raises(ConfigurationError):
            kernel_weights(np.zeros((1, 2)), np.zeros((1, 2)), 0.0, 0.1)
        with pytest.raises(ConfigurationError):
            kernel_weights(np.zeros((1, 2)), np.zeros((1, 2)), 1.0, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounds_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        zt = rng.normal(size=(int(rng.integers(1, 30)), dim))
        zr = rng.normal(size=(int(rng.integers(1, 30)), dim)) * 2
        sigma, eps = rng.uniform(0.05, 2), rng.uniform(0.01, 1)
        w = kernel_weights(zt, zr, sigma, eps).w
        assert np.all(w > 0) and np.all(w <= 1 / eps)
        w2 = kernel_weights(np.vstack((zt, rng.normal(size=(1, dim)))), zr, sigma, eps).w
        assert np.all(w2 <= w)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
        assert kernel_weights(a, b, 0.7, 0.1).w[0] == kernel_weights(b, a, 0.7, 0.1).w[0]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        zt, zr = rng.normal(size=(40, 2)), rng.normal(size=(30, 2))
        sigma, eps = 0.5, 0.1
        ref = [1 / (sum(math.exp(-float(np.sum((a - b) ** 2)) / (2 * sigma ** 2)) for a in zt)
                    + eps) for b in zr]
        np.testing.assert_allclose(kernel_weights(zt, zr, sigma, eps).w, ref, rtol=1e-13)


class TestVReg:
    def test_zero_init(self):
        m = init_augmented(PRIOR, 5, 0, output_completion=True)
        reg = RegSet(np.random.default_rng(0).normal(size=20))
        assert v_reg_weighted(m, reg, np.full(20, 3.0), Hyperparams()) == 0.0

    def test_zero_weights(self):
        rng = np.random.default_rng(1)
        m = random_model(rng, g=True)
        reg = RegSet(rng.normal(size=20))
        assert v_reg_weighted(m, reg, np.zeros(20), Hyperparams()) == 0.0

    def test_hand_value(self):
        net = CompletionNetwork(np.zeros((1, 2)), [0.0], [[0.0]], [0.2], [[0.0]], [[0.0]])
        m = AugmentedModel(PRIOR, net)
        hp = Hyperparams(gamma_x=0.5, gamma_y=0.0)
        assert v_reg_weighted(m, RegSet([0.0]), WeightVector([2.0]), hp) == pytest.approx(0.04)

    def test_length_check(self):
        m = init_augmented(PRIOR, 2, 0)
        with pytest.raises(ConfigurationError):
            v_reg_weighted(m, RegSet(np.zeros(3)), np.ones(2), Hyperparams())


class TestTotalCost:
    def test_mode_reductions(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m, d, reg, hp = random_problem(rng, N=10, Nbar=8, g=True)
            base = total_cost("baseline", m, d)
            assert base == v_data(m, d)
            assert total_cost("wpgnn", m, d, reg, hp, weights=np.zeros(reg.N)) == base
            z = Hyperparams(gamma=0.0, gamma_x=0.0, gamma_y=0.0)
            assert total_cost("classical", m, d, reg, z) == base
            assert total_cost("wpgnn", m, d, reg, z) == base

    def test_unit_weights_is_state_level_penalty(self):
        rng = np.random.default_rng(6)
        m, d, reg, hp = random_problem(rng, N=10, Nbar=8, g=True)
        _, _, fb, gb = loop_sim(m, reg.u_bar.values, np.zeros(1))
        expect = v_data(m, d) + hp.gamma_x / reg.N * np.sum(fb ** 2) + hp.gamma_y / reg.N * np.sum(gb ** 2)
        got = total_cost("wpgnn", m, d, reg, hp, weights=np.ones(reg.N))
        assert got == pytest.approx(expect, rel=1e-12)

    def test_missing_reg(self):
        m = init_augmented(PRIOR, 2, 0)
        d = Dataset([0.0], [0.0])
        for mode in ("classical", "wpgnn"):
            with pytest.raises(ConfigurationError):
                total_cost(mode, m, d)
        with pytest.raises(ConfigurationError):
            total_cost("nope", m, d)

    @pytest.mark.parametrize("mode", ["baseline", "classical", "wpgnn"])
    @pytest.mark.parametrize("g", [False, True])
    def test_brute_force_oracle(self, mode, g):
        rng = np.random.default_rng(7)
        for _ in range(10):
            m, d, reg, hp = random_problem(rng, N=3, Nbar=2, g=g)
            ref = brute_cost(mode, m, d, reg, hp)
            assert total_cost(mode, m, d, reg, hp) == pytest.approx(ref, rel=1e-12)
            R = residuals(mode, m, d, reg, hp)
            assert float(R @ R) == pytest.approx(ref, rel=1e-12)

    def test_brute_force_mimo(self):
        rng = np.random.default_rng(8)
        for mode in ("baseline", "classical", "wpgnn"):
            m, d, reg, hp = random_problem(rng, N=4, Nbar=3, n_x=2, n_u=2, n_y=2, g=True)
            assert total_cost(mode, m, d, reg, hp) == pytest.approx(
                brute_cost(mode, m, d, reg, hp), rel=1e-12)

    def test_model_weights_match_brute(self):
        rng = np.random.default_rng(9)
        m, d, reg, hp = random_problem(rng, N=5, Nbar=4)
        w = model_weights(m, d, reg, hp).w
        xs, *_ = loop_sim(m, d.u.values, np.zeros(1))
        xb, *_ = loop_sim(m, reg.u_bar.values, np.zeros(1))
        zt = np.hstack((xs, d.u.values))
        zr = np.hstack((xb, reg.u_bar.values))
        np.testing.assert_allclose(w, kernel_weights(zt, zr, hp.sigma, hp.epsilon).w, rtol=1e-13)


class TestResiduals:
    @pytest.mark.parametrize("mode", ["baseline", "classical", "wpgnn"])
    def test_identity(self, mode):
        rng = np.random.default_rng(10)
        for _ in range(100):
            m, d, reg, hp = random_problem(rng, N=12, Nbar=9, g=bool(rng.integers(2)))
            R = residuals(mode, m, d, reg, hp)
            assert float(R @ R) == pytest.approx(total_cost(mode, m, d, reg, hp), rel=1e-12)

    def test_shapes(self):
        rng = np.random.default_rng(11)
        m = init_augmented(PRIOR, 3, 0)
        d = Dataset(np.zeros(4), np.zeros(4))
        assert residuals("baseline", m, d).shape == (4,)
        d = Dataset(rng.normal(size=200), rng.normal(size=200))
        reg = RegSet(rng.normal(size=1000))
        assert residuals("wpgnn", m, d, reg, Hyperparams()).shape == (1200,)
        m_g = init_augmented(PRIOR, 3, 0, output_completion=True)
        assert residuals("wpgnn", m_g, d, reg, Hyperparams()).shape == (2200,)
        assert residuals("classical", m, d, RegSet.from_prior(PRIOR, reg.u_bar),
                         Hyperparams()).shape == (1200,)

    def test_divergence_sentinel(self):
        m = init_augmented(LinearPrior.scalar(1e200, 1.0), 2, 0)
        d = Dataset(np.ones(5), np.zeros(5))
        R = residuals("baseline", m, d, x0=[1e200])
        assert np.all(np.isinf(R)) and R.shape == (5,)
