import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ris_hmr.channel import ConfigError, SystemDims, generate_channel
from ris_hmr.numerics import DimensionError, unitary_dft
from ris_hmr.system import (PHI_KINDS, MeasurementSet, depilot_and_stack, make_measurements,
                            make_phase_matrix, make_pilot, partial_dft_rows, preprocess,
                            simulate_rx, snr_to_precision, structured_s)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestPhaseMatrix:
    @pytest.mark.parametrize("l,n", [(16, 32), (24, 32), (32, 32), (3, 8)])
    def test_partial_dft_row_orthonormal(self, l, n):
        Phi = make_phase_matrix(l, n, "partial_dft")
        assert Phi.shape == (l, n)
        assert np.linalg.norm(Phi @ Phi.conj().T - np.eye(l)) < 1e-12
        assert np.allclose(np.abs(Phi), n ** -0.5)

    def test_uniform_rows(self):
        assert list(partial_dft_rows(3, 8)) == [0, 2, 5]
        assert list(partial_dft_rows(4, 4, np.random.default_rng(0))) == [0, 1, 2, 3]

    def test_uniform_rows_null_beam_row(self):
        # L=24 of N=32 drops every 4th bin; one x-axis beam row of a 4 x 8 panel is invisible
        Phi = make_phase_matrix(24, 32, "partial_dft")
        F2 = np.kron(unitary_dft(4), unitary_dft(8))
        energy = np.linalg.norm(Phi @ F2, axis=0) ** 2
        assert np.sum(energy < 1e-20) == 8

    def test_random_rows_subset(self):
        rows = partial_dft_rows(24, 32, np.random.default_rng(1))
        assert len(set(rows)) == 24 and np.all(np.diff(rows) > 0)
        Phi = make_phase_matrix(24, 32, "partial_dft_random", np.random.default_rng(1))
        assert np.allclose(Phi, unitary_dft(32)[rows])

    @pytest.mark.parametrize("kind", ["random_phase", "bernoulli"])
    def test_unit_modulus(self, kind):
        Phi = make_phase_matrix(6, 10, kind, np.random.default_rng(2))
        assert np.allclose(np.abs(Phi), 10 ** -0.5)

    def test_errors(self):
        with pytest.raises(DimensionError):
            make_phase_matrix(9, 8)
        with pytest.raises(ConfigError):
            make_phase_matrix(4, 8, "hadamard")
        assert "hadamard" not in PHI_KINDS


class TestPilots:
    @pytest.mark.parametrize("k,t", [(1, 1), (2, 2), (3, 5), (32, 32)])
    def test_orthonormal(self, k, t):
        X = make_pilot(k, t)
        assert np.linalg.norm(X @ X.conj().T - np.eye(k)) < 1e-12

    def test_short(self):
        with pytest.raises(ConfigError):
            make_pilot(3, 2)


class TestStructuredS:
    def test_triple_loop(self):
        rng = np.random.default_rng(3)
        G, H = crandn(rng, 3, 4), crandn(rng, 4, 2)
        S = structured_s(G, H)
        assert S.shape == (4, 6)
        for n in range(4):
            for k in range(2):
                for m in range(3):
                    assert abs(S[n, k * 3 + m] - H[n, k] * G[m, n]) < 1e-14


class TestSimulate:
    def _setup(self, seed=4):
        dims = SystemDims(m=4, k=2, n1=2, n2=2, l=3)
        chan = generate_channel(dims, np.random.default_rng(seed))
        Phi = make_phase_matrix(3, 4, "random_phase", np.random.default_rng(seed))
        return dims, chan, Phi, make_pilot(2, 2)

    def test_loop_oracle_noiseless(self):
        dims, chan, Phi, X = self._setup()
        Y = simulate_rx(chan, Phi, X, np.inf)
        for l in range(3):
            ref = chan.G @ np.diag(Phi[l]) @ chan.H @ X
            assert np.max(np.abs(Y[l] - ref)) < 1e-12

    def test_noise_variance(self):
        dims, chan, Phi, X = self._setup()
        beta = 4.0
        rng = np.random.default_rng(5)
        clean = np.stack(simulate_rx(chan, Phi, X, np.inf))
        res = np.concatenate([(np.stack(simulate_rx(chan, Phi, X, beta, rng)) - clean).ravel()
                              for _ in range(500)])
        assert abs(np.mean(np.abs(res) ** 2) - 1 / beta) < 0.02 / beta
        assert abs(np.mean(res.real ** 2) - np.mean(res.imag ** 2)) < 0.02 / beta

    def test_bad_precision(self):
        dims, chan, Phi, X = self._setup()
        with pytest.raises(ConfigError):
            simulate_rx(chan, Phi, X, 0.0)

    def test_bad_phi(self):
        dims, chan, Phi, X = self._setup()
        with pytest.raises(DimensionError):
            simulate_rx(chan, Phi[:, :3], X, np.inf)


class TestDepilot:
    def test_noiseless_identity(self):
        dims = SystemDims(m=4, k=2, n1=2, n2=4, t=3)
        chan = generate_channel(dims, np.random.default_rng(6))
        Phi = make_phase_matrix(5, 8, "partial_dft")
        X = make_pilot(2, 3)
        Ystack = depilot_and_stack(simulate_rx(chan, Phi, X, np.inf), X)
        assert np.max(np.abs(Ystack - Phi @ structured_s(chan.G, chan.H))) < 1e-12

    def test_noise_stays_white(self):
        # X X^H = I keeps the de-piloted noise variance at 1/beta
        rng = np.random.default_rng(7)
        X = make_pilot(2, 4)
        W = [crandn(rng, 3, 4) * np.sqrt(0.5) for _ in range(4000)]
        out = depilot_and_stack(W, X)
        assert abs(np.mean(np.abs(out) ** 2) - 1.0) < 0.03

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            depilot_and_stack([np.ones((2, 3))], make_pilot(2, 4))


class TestPreprocess:
    def test_orthonormal_passthrough(self):
        Phi = make_phase_matrix(4, 8, "partial_dft")
        Y = crandn(np.random.default_rng(8), 4, 6)
        R, Psi, lam = preprocess(Y, Phi)
        assert np.array_equal(R, Y) and np.array_equal(Psi, Phi)
        assert np.array_equal(lam, np.ones(4))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_invariance(self, seed):
        # the residual norm is preserved for any S, so the likelihood is unchanged
        rng = np.random.default_rng(seed)
        Phi = make_phase_matrix(5, 8, "random_phase", rng)
        S, Y = crandn(rng, 8, 3), crandn(rng, 5, 3)
        R, Psi, _ = preprocess(Y, Phi)
        assert np.isclose(np.linalg.norm(R - Psi @ S), np.linalg.norm(Y - Phi @ S), rtol=1e-10)


class TestSnr:
    def test_closed_form(self):
        Phi = np.eye(2)
        S = np.ones((2, 2))
        assert np.isclose(snr_to_precision(Phi, S, 10.0), 10.0)

    def test_zero_power(self):
        with pytest.raises(ConfigError):
            snr_to_precision(np.eye(2), np.zeros((2, 2)), 10.0)

    def test_empirical_snr(self):
        dims = SystemDims(m=8, k=4, n1=2, n2=4, l=6)
        chan = generate_channel(dims, np.random.default_rng(9))
        ms = make_measurements(chan, 10.0, phi_kind="random_phase", rng=np.random.default_rng(9))
        clean = ms.Phi @ structured_s(chan.G, chan.H)
        # noise power averaged over many draws, 10 dB target within 5%
        rng = np.random.default_rng(10)
        X = ms.X
        p_noise = np.mean([np.linalg.norm(depilot_and_stack(
            simulate_rx(chan, ms.Phi, X, ms.beta_true, rng), X) - clean) ** 2 for _ in range(200)])
        assert abs(np.linalg.norm(clean) ** 2 / p_noise / 10.0 - 1) < 0.05


class TestMeasurementSet:
    def test_noiseless_flags(self):
        chan = generate_channel(SystemDims(m=4, k=2, n1=2, n2=2, l=4), np.random.default_rng(11))
        ms = make_measurements(chan, 20.0, noiseless=True, seed=3)
        assert np.isinf(ms.beta_true)
        assert np.max(np.abs(ms.R - ms.Psi @ structured_s(chan.G, chan.H))) < 1e-12

    def test_json_replay(self):
        chan = generate_channel(SystemDims(m=4, k=2, n1=2, n2=2, l=3), np.random.default_rng(12))
        ms = make_measurements(chan, 15.0, phi_kind="random_phase", seed=5)
        R, Psi, lam, beta = MeasurementSet.replay_inputs(ms.to_json())
        assert np.array_equal(R, ms.R) and np.array_equal(Psi, ms.Psi)
        assert np.array_equal(lam, ms.Lambda) and beta == ms.beta_true

    def test_seed_determinism(self):
        chan = generate_channel(SystemDims(m=4, k=2, n1=2, n2=2, l=3), np.random.default_rng(13))
        a = make_measurements(chan, 5.0, phi_kind="partial_dft_random", seed=7)
        b = make_measurements(chan, 5.0, phi_kind="partial_dft_random", seed=7)
        assert np.array_equal(a.R, b.R) and np.array_equal(a.Phi, b.Phi)
