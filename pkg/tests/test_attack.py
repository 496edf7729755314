import numpy as np
import pytest

from kktforge import attack, data, kkt, net
from kktforge.errors import ValidationError

from conftest import away_from_boundaries, planted_exact_kkt, random_params


def fd_attack_gradients(params, X, y, lam, weights, h=1e-6):
    def sq_loss(Xa, la):
        _, sq = attack.evaluate_losses(params, Xa, y, la, weights)
        return sq

    xg = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            xg[i, j] = (sq_loss(Xp, lam) - sq_loss(Xm, lam)) / (2 * h)
    lg = np.zeros_like(lam)
    for i in range(lam.shape[0]):
        lp, lm = lam.copy(), lam.copy()
        lp[i] += h
        lm[i] -= h
        lg[i] = (sq_loss(X, lp) - sq_loss(X, lm)) / (2 * h)
    return xg, lg


class TestAttackGradients:
    def test_zero_residual_zero_x_grads(self):
        params, ds, lam_true = planted_exact_kkt()
        xg, _ = attack.attack_gradients(
            params, ds.X, ds.y, lam_true, kkt.KKTLossWeights()
        )
        assert np.max(np.abs(xg)) < 1e-12

    def test_zero_multiplier_decouples(self):
        rng = np.random.default_rng(0)
        params = random_params(rng, k=5, d=3)
        X = rng.normal(size=(3, 3))
        y = np.array([1.0, -1.0, 1.0])
        lam = np.array([0.0, 0.7, 0.7])
        xg, _ = attack.attack_gradients(params, X, y, lam, kkt.KKTLossWeights())
        assert np.max(np.abs(xg[0])) == 0.0

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        weights = kkt.KKTLossWeights(1.3, 2.1)
        for trial in range(15):
            params = random_params(rng, k=6, d=4)
            X = np.stack([away_from_boundaries(params, rng) for _ in range(3)])
            y = np.where(rng.random(3) > 0.5, 1.0, -1.0)
            # keep lambda away from the penalty kink at zero
            lam = np.where(rng.random(3) > 0.3, rng.uniform(0.5, 1.5, 3),
                           rng.uniform(-1.5, -0.5, 3))
            xg, lg = attack.attack_gradients(params, X, y, lam, weights)
            xg_fd, lg_fd = fd_attack_gradients(params, X, y, lam, weights)
            assert np.max(np.abs(xg - xg_fd) / (1 + np.abs(xg_fd))) < 1e-5
            assert np.max(np.abs(lg - lg_fd) / (1 + np.abs(lg_fd))) < 1e-5


class TestMinimize:
    def test_objective_consistency_and_monotone(self):
        rng = np.random.default_rng(2)
        params = random_params(rng, k=8, d=5)
        X0 = rng.normal(size=(6, 5))
        y = attack.assign_labels(6, "balanced")
        lam0 = np.full(6, 1.0 / 6)
        weights = kkt.KKTLossWeights()
        logged = []

        def cb(it, loss, X, lam):
            recomputed = kkt.kkt_loss(params, X, y, kkt.Multipliers(lam), weights)
            assert abs(loss - recomputed) < 1e-9
            logged.append(loss)

        attack.minimize_kkt_loss(params, X0, y, lam0, weights, 0.5, 60, loss_callback=cb)
        assert logged
        assert all(b <= a + 1e-12 for a, b in zip(logged, logged[1:]))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, k=8, d=5)
        X0 = rng.normal(size=(6, 5))
        y = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        lam0 = rng.uniform(0.1, 0.3, 6)
        weights = kkt.KKTLossWeights()
        Xa, la, _ = attack.minimize_kkt_loss(params, X0, y, lam0, weights, 0.5, 40)
        perm = np.array([4, 2, 0, 5, 1, 3])
        Xb, lb, _ = attack.minimize_kkt_loss(
            params, X0[perm], y[perm], lam0[perm], weights, 0.5, 40
        )
        assert np.allclose(Xb, Xa[perm], atol=1e-12)
        assert np.allclose(lb, la[perm], atol=1e-12)


class TestReconstruct:
    def test_zero_network_immediate(self):
        params = net.NetworkParams(np.zeros((3, 4)), np.zeros(3), np.zeros(3))
        cfg = attack.AttackConfig(m=4, init=attack.SphereInit(1.0), iterations=50,
                                  restarts=2, seed=0)
        res = attack.reconstruct(params, cfg)
        assert res.final_kkt_loss == 0.0

    def test_planted_fixed_point(self):
        params, ds, lam_true = planted_exact_kkt()
        cfg = attack.AttackConfig(m=2, init=attack.SphereInit(1.0), iterations=200,
                                  restarts=1, seed=0)
        res = attack.reconstruct(
            params, cfg, init_state=(ds.X, ds.y, lam_true)
        )
        theta_norm = np.linalg.norm(net.flatten_params(params))
        assert res.final_kkt_loss <= 1e-8 * (1 + theta_norm)
        assert np.max(np.abs(res.candidates - ds.X)) <= 1e-6

    def test_restart_determinism(self):
        rng = np.random.default_rng(4)
        params = random_params(rng, k=6, d=4)
        cfg = attack.AttackConfig(m=5, init=attack.SphereInit(1.5), iterations=40,
                                  restarts=3, seed=9)
        a = attack.reconstruct(params, cfg)
        b = attack.reconstruct(params, cfg)
        assert np.array_equal(a.candidates, b.candidates)
        assert np.array_equal(a.multipliers, b.multipliers)
        assert np.array_equal(a.restart_losses, b.restart_losses)

    def test_best_restart_selected(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, k=6, d=4)
        cfg = attack.AttackConfig(m=5, init=attack.SphereInit(1.5), iterations=40,
                                  restarts=4, seed=11)
        res = attack.reconstruct(params, cfg)
        assert res.final_kkt_loss == res.restart_losses.min()
        recomputed = kkt.kkt_loss(
            params, res.candidates, res.labels, kkt.Multipliers(res.multipliers),
            cfg.weights,
        )
        assert abs(res.final_kkt_loss - recomputed) < 1e-9

    def test_label_assignments(self):
        assert attack.assign_labels(4, "balanced").tolist() == [1, 1, -1, -1]
        assert attack.assign_labels(3, "all_positive").tolist() == [1, 1, 1]
        assert attack.assign_labels(2, "all_negative").tolist() == [-1, -1]

    def test_nn_distance_filled_with_true_set(self):
        rng = np.random.default_rng(6)
        params = random_params(rng, k=5, d=3)
        ds = data.LabeledDataset(rng.normal(size=(4, 3)), np.array([1.0, 1.0, -1.0, -1.0]))
        cfg = attack.AttackConfig(m=4, init=attack.SphereInit(1.0), iterations=20,
                                  restarts=1, seed=2)
        res = attack.reconstruct(params, cfg, true_set=ds)
        assert res.per_candidate_nn_distance is not None
        assert res.per_candidate_nn_distance.shape == (4,)


class TestNNMetrics:
    def test_exact_match(self):
        ds = data.LabeledDataset(np.eye(3), np.array([1.0, 1.0, -1.0]))
        dists, mean = attack.nn_metrics(np.eye(3), ds, top_k=3)
        assert np.array_equal(dists, np.zeros(3)) and mean == 0.0

    def test_single_candidate(self):
        ds = data.LabeledDataset(
            np.array([[0.0, 0.0], [10.0, 0.0]]), np.array([1.0, -1.0])
        )
        dists, mean = attack.nn_metrics(np.array([[3.0, 0.0]]), ds, top_k=1)
        assert dists.tolist() == [3.0] and mean == 3.0

    def test_against_naive_scan(self):
        rng = np.random.default_rng(7)
        cands = rng.normal(size=(8, 4))
        pts = rng.normal(size=(11, 4))
        ds = data.LabeledDataset(pts, np.where(rng.random(11) > 0.5, 1.0, -1.0))
        dists, mean = attack.nn_metrics(cands, ds, top_k=3)
        naive = np.array([
            min(np.linalg.norm(c - p) for p in pts) for c in cands
        ])
        assert np.allclose(dists, naive)
        assert mean == pytest.approx(np.sort(naive)[:3].mean())

    def test_top_k_bounds(self):
        ds = data.LabeledDataset(np.ones((2, 2)), np.array([1.0, -1.0]))
        with pytest.raises(ValidationError):
            attack.nn_metrics(np.zeros((2, 2)), ds, top_k=3)


class TestConfigValidation:
    def test_bad_radius(self):
        with pytest.raises(ValidationError):
            attack.SphereInit(0.0)

    def test_bad_box(self):
        with pytest.raises(ValidationError):
            attack.BoxInit(1.0, 1.0)

    def test_bad_m(self):
        with pytest.raises(ValidationError):
            attack.AttackConfig(m=0, init=attack.SphereInit(1.0))
