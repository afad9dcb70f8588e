import numpy as np
import pytest

from natgrad.errors import (
    CovarianceCollapseError,
    DimensionMismatchError,
    SingularInnovationError,
)
from natgrad.kalman import (
    GaussianPosterior,
    KalmanConfig,
    LinearGaussianInstance,
    ObservationNoise,
    RKalmanOptimizer,
    estimate_r,
    jacobian,
    kalman_ngd_equivalence_check,
    load_posterior,
    predict,
    regularized_gain,
    save_posterior,
    update,
)
from natgrad.model import Layer, Network, init_network
from natgrad.oracle import full_cov_kalman_step


class TestPredict:
    def test_zero_process_noise(self):
        post = GaussianPosterior(np.array([1.0, 2.0]), np.array([0.1, 0.2]))
        out = predict(post, 0.0)
        assert np.array_equal(out.mu, post.mu)
        assert np.array_equal(out.sigma, post.sigma)

    def test_additive_noise(self):
        post = GaussianPosterior(np.zeros(1), np.array([0.1]))
        assert predict(post, 0.05).sigma[0] == pytest.approx(0.15)

    def test_default_q_is_zero(self):
        assert KalmanConfig().q == 0.0


class TestJacobian:
    def test_linear_blocks_are_input_copies(self):
        net = Network([Layer(np.zeros((2, 3)), "identity", bias=False)])
        x = np.array([0.5, -1.0, 2.0])
        jac = jacobian(net, x)
        assert np.array_equal(jac[0, :3], x)
        assert np.array_equal(jac[1, 3:], x)
        assert np.all(jac[0, 3:] == 0.0) and np.all(jac[1, :3] == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(70)
        net = init_network([2, 5, 2], rng=rng)
        x = rng.standard_normal(2)
        mu = net.flat_weights()
        jac = jacobian(net, x, mu)
        eps = 1e-6
        from natgrad.model import forward

        fd = np.zeros_like(jac)
        for k in range(mu.size):
            up = mu.copy(); up[k] += eps
            net.set_flat_weights(up)
            o_up = forward(net, x[None, :])[0].outputs[0]
            dn = mu.copy(); dn[k] -= eps
            net.set_flat_weights(dn)
            o_dn = forward(net, x[None, :])[0].outputs[0]
            fd[:, k] = (o_up - o_dn) / (2 * eps)
        rel = np.linalg.norm(jac - fd) / np.linalg.norm(fd)
        assert rel < 1e-6

    def test_dead_relu_path(self):
        rng = np.random.default_rng(71)
        net = init_network([3, 4, 1], activations=["relu", "identity"],
                           bias=False, rng=rng)
        jac = jacobian(net, np.zeros(3))
        first_layer = net.layers[0].weight.size
        assert np.all(jac[:, :first_layer] == 0.0)


class TestEstimateR:
    def test_beta_one_keeps_r(self):
        noise = ObservationNoise(np.array([[0.7]]), 1.0)
        out = estimate_r(np.array([1.0]), np.array([0.4]), np.ones((1, 3)),
                         np.full(3, 0.2), noise)
        assert np.array_equal(out.r_mat, noise.r_mat)

    def test_first_step_from_zero(self):
        beta = 0.9
        h = np.array([[1.0, 0.0], [0.0, 2.0]])
        sigma = np.array([0.1, 0.2])
        y = np.array([1.0, -1.0])
        y_hat = np.array([0.5, 0.5])
        noise = ObservationNoise(np.zeros((2, 2)), beta)
        out = estimate_r(y, y_hat, h, sigma, noise)
        resid = y - y_hat
        want = (1 - beta) * (np.outer(resid, resid) + (h * sigma) @ h.T)
        assert np.allclose(out.r_mat, want, atol=1e-15)

    def test_result_symmetric(self):
        rng = np.random.default_rng(72)
        h = rng.standard_normal((3, 5))
        noise = ObservationNoise(rng.standard_normal((3, 3)), 0.95)
        noise.r_mat = noise.r_mat @ noise.r_mat.T
        out = estimate_r(rng.standard_normal(3), rng.standard_normal(3), h,
                         rng.uniform(0.1, 1.0, 5), noise)
        assert np.array_equal(out.r_mat, out.r_mat.T)

    def test_default_beta_in_stable_band(self):
        assert 0.94 <= KalmanConfig().beta <= 0.99

    def test_shape_guard(self):
        noise = ObservationNoise(np.zeros((2, 2)), 0.9)
        with pytest.raises(DimensionMismatchError):
            estimate_r(np.ones(3), np.ones(2), np.ones((2, 4)), np.ones(4), noise)


class TestRegularizedGain:
    def test_scalar_example(self):
        # sigma=1, H=1, R=1, rho=1: regularized noise 0.5, gain 1/1.5
        noise = ObservationNoise(np.array([[1.0]]), 0.9)
        gain = regularized_gain(np.array([1.0]), np.array([[1.0]]), noise, 1.0)
        assert gain[0, 0] == pytest.approx(2.0 / 3.0, rel=1e-12)

    def test_rho_zero_identical_both_modes(self):
        rng = np.random.default_rng(73)
        h = rng.standard_normal((2, 6))
        sigma = rng.uniform(0.05, 0.4, 6)
        r = rng.standard_normal((2, 2))
        noise = ObservationNoise(r @ r.T + 0.3 * np.eye(2), 0.9)
        g_exact = regularized_gain(sigma, h, noise, 0.0, "exact")
        g_neum = regularized_gain(sigma, h, noise, 0.0, "first-order")
        assert np.array_equal(g_exact, g_neum)

    def test_neumann_error_quadratic_in_rho(self):
        rng = np.random.default_rng(74)
        h = rng.standard_normal((3, 8))
        sigma = rng.uniform(0.05, 0.4, 8)
        b = rng.standard_normal((3, 3))
        r = b @ b.T
        from natgrad.linalg import spectral_norm

        r /= spectral_norm(r)
        noise = ObservationNoise(r, 0.9)
        errs = []
        for rho in (0.02, 0.04, 0.08):
            g_e = regularized_gain(sigma, h, noise, rho, "exact")
            g_n = regularized_gain(sigma, h, noise, rho, "first-order")
            errs.append(np.max(np.abs(g_e - g_n)))
        assert 3.2 <= errs[1] / errs[0] <= 4.8
        assert 3.2 <= errs[2] / errs[1] <= 4.8

    def test_singular_innovation(self):
        # zero prior and zero noise leave nothing to invert
        noise = ObservationNoise(np.zeros((2, 2)), 0.9)
        with pytest.raises(SingularInnovationError):
            regularized_gain(np.zeros(3), np.ones((2, 3)), noise, 0.0)

    def test_rejects_unknown_mode(self):
        noise = ObservationNoise(np.eye(1), 0.9)
        with pytest.raises(ValueError):
            regularized_gain(np.ones(1), np.ones((1, 1)), noise, 0.0, "pade")


class TestUpdate:
    def test_uninformative_observation(self):
        prior = GaussianPosterior(np.array([1.0, -1.0]), np.array([0.3, 0.4]))
        h = np.zeros((1, 2))
        gain = np.zeros((2, 1))
        post = update(prior, gain, h, np.array([0.7]))
        assert np.array_equal(post.mu, prior.mu)
        assert np.array_equal(post.sigma, prior.sigma)

    def test_scalar_conjugate_bayes(self):
        sigma0, r, mu0, y = 0.5, 0.2, 1.0, 2.0
        prior = GaussianPosterior(np.array([mu0]), np.array([sigma0]))
        noise = ObservationNoise(np.array([[r]]), 1.0)
        h = np.array([[1.0]])
        gain = regularized_gain(prior.sigma, h, noise, 0.0)
        post = update(prior, gain, h, np.array([y - mu0]))
        precision = 1.0 / sigma0 + 1.0 / r
        want_mu = (mu0 / sigma0 + y / r) / precision
        assert post.mu[0] == pytest.approx(want_mu, abs=1e-10)
        assert post.sigma[0] == pytest.approx(1.0 / precision, abs=1e-10)

    def test_disjoint_rows_match_full_covariance(self):
        # H rows hit disjoint coordinates, so the diagonal update equals
        # the full-covariance update restricted to the diagonal
        rng = np.random.default_rng(75)
        sigma = rng.uniform(0.1, 0.5, 4)
        h = np.array([[1.5, 0.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]])
        r = np.diag([0.3, 0.7])
        noise = ObservationNoise(r, 1.0)
        mu = rng.standard_normal(4)
        resid = rng.standard_normal(2)
        prior = GaussianPosterior(mu.copy(), sigma.copy())
        gain = regularized_gain(prior.sigma, h, noise, 0.0)
        post = update(prior, gain, h, resid)
        full = full_cov_kalman_step(mu, np.diag(sigma), h, r,
                                    resid, np.zeros(2), rho=0.0)
        assert np.max(np.abs(post.mu - full.mu)) < 1e-10
        assert np.max(np.abs(post.sigma - np.diag(full.sigma))) < 1e-10
        assert np.max(np.abs(full.sigma - np.diag(np.diag(full.sigma)))) < 1e-12

    def test_floor_applies(self):
        prior = GaussianPosterior(np.zeros(1), np.array([1.0]))
        # contraction 1 - c in (floor/10, floor) band: floored silently
        gain = np.array([[1.0 - 5e-13]])
        h = np.array([[1.0]])
        post = update(prior, gain, h, np.zeros(1))
        assert post.sigma[0] == 1e-12

    def test_collapse_detected(self):
        prior = GaussianPosterior(np.zeros(1), np.array([1.0]))
        gain = np.array([[2.0]])
        h = np.array([[1.0]])
        with pytest.raises(CovarianceCollapseError):
            update(prior, gain, h, np.zeros(1))


class TestRKalmanOptimizer:
    def test_default_sigma0_in_reported_band(self):
        assert 0.04 <= KalmanConfig().sigma0 <= 0.2

    def test_plain_ekf_when_all_regularization_off(self):
        rng = np.random.default_rng(76)
        net = init_network([2, 3, 1], rng=rng)
        opt = RKalmanOptimizer(net, KalmanConfig(rho=0.0, beta=1.0, sigma0=0.1))
        opt.noise = ObservationNoise(np.array([[0.3]]), 1.0)
        x = rng.standard_normal(2)
        y = np.array([0.8])

        mu0 = opt.posterior.mu.copy()
        sigma0 = opt.posterior.sigma.copy()
        h = jacobian(net, x, mu0)
        from natgrad.model import forward

        y_hat = forward(net, x[None, :])[0].outputs[0]
        s = (h * sigma0) @ h.T + 0.3
        k = sigma0[:, None] * h.T / s
        mu_want = mu0 + (k @ (y - y_hat))
        sigma_want = sigma0 * (1.0 - (k * h.T).sum(axis=1))

        opt.step(x, y)
        assert np.max(np.abs(opt.posterior.mu - mu_want)) < 1e-12
        assert np.max(np.abs(opt.posterior.sigma - sigma_want)) < 1e-12

    def test_stream_matches_full_covariance_oracle(self):
        # scaled one-hot inputs keep the true posterior exactly diagonal,
        # so the diagonal filter must track the full filter
        rng = np.random.default_rng(77)
        net = Network([Layer(rng.standard_normal((2, 3)) * 0.3, "identity",
                             bias=False)])
        opt = RKalmanOptimizer(net, KalmanConfig(rho=0.0, beta=1.0, sigma0=0.2))
        r = np.diag([0.4, 0.6])
        opt.noise = ObservationNoise(r.copy(), 1.0)

        mu = opt.posterior.mu.copy()
        sigma_full = np.diag(opt.posterior.sigma.copy())
        for step in range(30):
            j = step % 3
            x = np.zeros(3)
            x[j] = rng.uniform(0.5, 2.0)
            y = rng.standard_normal(2)
            w = mu.reshape(2, 3)
            y_hat = w @ x
            h = np.zeros((2, 6))
            h[0, :3] = x
            h[1, 3:] = x
            full = full_cov_kalman_step(mu, sigma_full, h, r, y, y_hat, rho=0.0)
            mu, sigma_full = full.mu, full.sigma
            opt.step(x, y)
            assert np.max(np.abs(opt.posterior.mu - mu)) < 1e-10
            assert np.max(np.abs(opt.posterior.sigma - np.diag(sigma_full))) < 1e-10

    def test_sigma_monotone_and_positive_long_run(self):
        rng = np.random.default_rng(78)
        net = init_network([2, 1], bias=False, rng=rng)
        opt = RKalmanOptimizer(net, KalmanConfig(rho=0.0, beta=1.0, sigma0=0.1))
        opt.noise = ObservationNoise(np.array([[0.5]]), 1.0)
        prev = opt.posterior.sigma.copy()
        for _ in range(10_000):
            x = rng.standard_normal(2)
            y = np.array([x[0] - 0.5 * x[1]]) + 0.1 * rng.standard_normal(1)
            opt.step(x, y)
            assert np.all(opt.posterior.sigma <= prev + 1e-15)
            assert np.all(opt.posterior.sigma > 0.0)
            prev = opt.posterior.sigma.copy()

    def test_determinism(self):
        streams = []
        for _ in range(2):
            rng = np.random.default_rng(80)
            net = init_network([2, 3, 2], head="categorical", rng=rng)
            opt = RKalmanOptimizer(net, KalmanConfig(rho=1e-4, beta=0.97, sigma0=0.1))
            reports = []
            for _ in range(20):
                x = rng.standard_normal(2)
                y = rng.integers(0, 2)
                reports.append(opt.step(x, np.array([y])))
            streams.append(reports)
        assert streams[0] == streams[1]

    def test_categorical_head_runs(self):
        rng = np.random.default_rng(81)
        net = init_network([2, 4, 3], head="categorical", rng=rng)
        opt = RKalmanOptimizer(net, KalmanConfig(rho=1e-4, beta=0.96, sigma0=0.1))
        for _ in range(10):
            rep = opt.step(rng.standard_normal(2), np.array([rng.integers(0, 3)]))
        assert np.isfinite(rep.loss)
        assert np.all(opt.posterior.sigma > 0)


class TestEquivalenceCheck:
    def test_scalar_identities_exact(self):
        inst = LinearGaussianInstance(
            h=np.array([[1.0]]), r=np.array([[1.0]]),
            sigma_prior=np.array([[1.0]]), mu_prior=np.array([0.0]),
            y=np.array([0.1]), y_hat=np.array([0.3]),
        )
        rep = kalman_ngd_equivalence_check(inst)
        assert rep.mean_identity_deviation < 1e-12
        assert rep.precision_identity_deviation < 1e-12

    def test_zero_jacobian(self):
        inst = LinearGaussianInstance(
            h=np.zeros((2, 3)), r=np.eye(2),
            sigma_prior=np.eye(3), mu_prior=np.zeros(3),
            y=np.ones(2), y_hat=np.zeros(2),
        )
        rep = kalman_ngd_equivalence_check(inst)
        assert rep.mean_identity_deviation == 0.0
        assert rep.precision_identity_deviation == 0.0


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(82)
        post = GaussianPosterior(rng.standard_normal(7), rng.uniform(0.01, 1.0, 7))
        noise = ObservationNoise(np.array([[0.4, 0.1], [0.1, 0.9]]), 0.97)
        config = KalmanConfig(rho=1e-3, beta=0.97, sigma0=0.05, q=0.0,
                              neumann="first-order")
        path = tmp_path / "post.txt"
        save_posterior(path, post, noise, config)
        post2, noise2, config2 = load_posterior(path)
        assert np.array_equal(post2.mu, post.mu)
        assert np.array_equal(post2.sigma, post.sigma)
        assert np.array_equal(noise2.r_mat, noise.r_mat)
        assert config2 == config

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nonsense\n")
        with pytest.raises(ValueError):
            load_posterior(path)


class TestConfigValidation:
    def test_bounds(self):
        with pytest.raises(ValueError):
            KalmanConfig(sigma0=0.0)
        with pytest.raises(ValueError):
            KalmanConfig(beta=0.0)
        with pytest.raises(ValueError):
            KalmanConfig(beta=1.5)
        with pytest.raises(ValueError):
            KalmanConfig(rho=-1.0)
        with pytest.raises(ValueError):
            KalmanConfig(neumann="secondorder")


class TestResume:
    def test_resume_restores_state_and_weights(self, tmp_path):
        rng = np.random.default_rng(83)
        net = init_network([2, 3, 1], rng=rng)
        opt = RKalmanOptimizer(net, KalmanConfig(rho=1e-3, beta=0.96, sigma0=0.1))
        for _ in range(5):
            opt.step(rng.standard_normal(2), rng.standard_normal(1))
        path = tmp_path / "ckpt.txt"
        opt.save(path)

        fresh = init_network([2, 3, 1], rng=np.random.default_rng(999))
        resumed = RKalmanOptimizer.resume(fresh, path)
        assert np.array_equal(resumed.posterior.mu, opt.posterior.mu)
        assert np.array_equal(resumed.posterior.sigma, opt.posterior.sigma)
        assert np.array_equal(resumed.noise.r_mat, opt.noise.r_mat)
        assert resumed.config == opt.config
        assert np.array_equal(fresh.flat_weights(), opt.posterior.mu)
        # resumed trainer continues identically to the original
        x, y = rng.standard_normal(2), rng.standard_normal(1)
        a = opt.step(x.copy(), y.copy())
        b = resumed.step(x.copy(), y.copy())
        assert np.array_equal(opt.posterior.mu, resumed.posterior.mu)
        assert a.loss == b.loss
