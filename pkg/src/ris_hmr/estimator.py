"""Message-passing estimator of the beamspace channels ``Omega`` and ``Sigma``
from ``R = Psi S + W`` with ``S[n, k*M + m] = H[n, k] G[m, n]``.

One outer iteration runs three parts:

* Part I   -- unitary AMP (UAMP) on the multiple-measurement model, one
  recursion per column of ``S``, producing extrinsic messages on ``S``.
* Part II  -- mean-field messages through the bilinear nodes
  ``s = h * g`` and belief propagation between ``g``/``h`` and Part III.
* Part III -- UAMP with a Gaussian-Gamma (sparse Bayesian learning) prior on
  ``Omega`` (operator ``F1`` per column, fed through ``F2`` per row) and on
  ``Sigma`` (operator ``F2`` per column).

Bilinear messages are held in ``(K, M, N)`` arrays indexed ``[k, m, n]``,
which is ``S.T.reshape(K, M, N)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import DftOperators, DimensionError, remove_scale, resolve_ambiguity

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
VAR_CEIL = 1e12
VACUOUS_VAR = 1e6


class DivergedError(RuntimeError):
    """A field became non-finite.  ``report`` holds the last finite iterate."""

    def __init__(self, iteration: int, report: "EstimateReport | None" = None):
        super().__init__(f"estimator diverged at iteration {iteration}")
        self.iteration = iteration
        self.report = report


@dataclass
class GaussianField:
    mean: np.ndarray
    var: np.ndarray

    def clamped(self, floor: float = VAR_FLOOR, ceil: float = VAR_CEIL) -> "GaussianField":
        return GaussianField(self.mean, np.clip(self.var, floor, ceil))


@dataclass
class GammaField:
    """Gamma hyperprior state: posterior mean precisions plus shape (per column) and rate."""

    gamma_hat: np.ndarray
    shape: np.ndarray
    rate: float


@dataclass
class EstimatorConfig:
    zeta: float = 1e-3
    i_max: int = 30
    damping: float = 1.0
    termination: str = "self_change"
    eta_g: float = 1e-10
    eta_h: float = 1e-10
    variance_floor: float = VAR_FLOOR
    fast: bool = True
    normalize: bool = True
    init: str = "data"
    init_var: float = 0.1
    init_sweeps: int = 1
    fixed_shape: float | None = None
    metric: str = "ambiguity"
    seed: int = 0

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.i_max < 1:
            raise ValueError(f"i_max must be >= 1, got {self.i_max}")
        if self.termination not in ("self_change", "genie"):
            raise ValueError(f"termination must be 'self_change' or 'genie', got {self.termination!r}")
        if self.metric not in ("ambiguity", "scale"):
            raise ValueError(f"metric must be 'ambiguity' or 'scale', got {self.metric!r}")
        if self.init not in ("data", "random"):
            raise ValueError(f"init must be 'data' or 'random', got {self.init!r}")


@dataclass
class SparseBlock:
    """UAMP + SBL state of one beamspace matrix (``Omega`` or ``Sigma``)."""

    x: GaussianField
    gamma: GammaField
    p: np.ndarray
    nu_p: np.ndarray
    mu: np.ndarray


@dataclass
class EstimatorState:
    omega: SparseBlock
    sigma: SparseBlock
    g_belief: GaussianField          # (M, N)
    h_belief: GaussianField          # (K, N), h~[k, n] = H[n, k]
    s_prior: GaussianField           # (N, J)
    s_extrinsic: GaussianField       # mean (N, J), var (J,)
    t: np.ndarray                    # (L, J) UAMP carry of Part I
    z_post: GaussianField            # (L, J)
    beta_hat: float
    iter: int = 0


@dataclass
class EstimateReport:
    omega: np.ndarray
    sigma: np.ndarray
    G: np.ndarray
    H: np.ndarray
    iterations: int
    converged: bool
    beta_hat: float
    trace: list = field(default_factory=list)
    nmse_G_db: float | None = None
    nmse_H_db: float | None = None


# --------------------------------------------------------------------------
# Gaussian message algebra


def gaussian_product(m1, v1, m2, v2):
    """Normalized product of two Gaussian messages, returns ``(mean, var)``."""
    prec = 1.0 / v1 + 1.0 / v2
    var = 1.0 / prec
    return var * (m1 / v1 + m2 / v2), var


def gaussian_division(mb, vb, mf, vf, vacuous: float = VACUOUS_VAR):
    """Belief ``(mb, vb)`` divided by message ``(mf, vf)``.

    Where the precision difference is not positive, a vacuous message
    (variance ``vacuous``, mean ``mb``) is returned instead.
    """
    mb, vb, mf, vf = np.broadcast_arrays(*(np.asarray(a) for a in (mb, vb, mf, vf)))
    prec = 1.0 / vb - 1.0 / vf
    ok = prec > 0
    safe = np.where(ok, prec, 1.0)
    var = np.where(ok, 1.0 / safe, vacuous)
    mean = np.where(ok, (mb / vb - mf / vf) / safe, mb)
    return mean, var


# --------------------------------------------------------------------------
# Part II: bilinear node messages


def assemble_s_prior(g_mean, g_var, h_mean, h_var, floor: float = VAR_FLOOR):
    """Message into ``s = g * h`` from independent Gaussian messages on ``g`` and ``h``.

    Inputs broadcast to ``(K, M, N)``; the result is returned as ``(N, J)``
    mean and variance with ``j = k*M + m``.
    """
    g_mean, g_var, h_mean, h_var = np.broadcast_arrays(g_mean, g_var, h_mean, h_var)
    mean = g_mean * h_mean
    var = np.abs(h_mean) ** 2 * g_var + np.abs(g_mean) ** 2 * h_var + g_var * h_var
    K, M, N = mean.shape
    return (mean.reshape(K * M, N).T.copy(),
            np.maximum(var, floor).reshape(K * M, N).T.copy())


def bilinear_forward(q, nu_q, other_mean, other_var):
    """Mean-field message to one factor of ``s = a * b`` given the belief of the other.

    ``q`` is the extrinsic mean of ``s``, ``nu_q`` its variance; ``other_*``
    describe the belief of the other factor.  All broadcast together.
    """
    power = np.abs(other_mean) ** 2 + other_var
    return q * np.conj(other_mean) / power, nu_q / power


def combine_forward(means, variances, axis: int = 0):
    """Product of Gaussian messages along ``axis``."""
    means, variances = np.broadcast_arrays(means, variances)
    prec = np.sum(1.0 / variances, axis=axis)
    var = 1.0 / prec
    return var * np.sum(means / variances, axis=axis), var


def combine_beliefs(fwd_mean, fwd_var, bwd_mean, bwd_var):
    return gaussian_product(fwd_mean, fwd_var, bwd_mean, bwd_var)


def backward_to_bilinear(belief_mean, belief_var, fwd_mean, fwd_var, vacuous: float = VACUOUS_VAR):
    return gaussian_division(belief_mean, belief_var, fwd_mean, fwd_var, vacuous)


def to_sparse_domain_msg(g_mean, g_var, ops: DftOperators):
    """Move the ``G``-domain message into the ``G~ = G F2`` domain.

    The transformed variance is uniform along each row: a unitary transform
    whose entries all have modulus ``N**-0.5`` averages the variances.
    """
    mean = ops.apply_f2(g_mean.T).T
    var = np.broadcast_to(np.mean(np.broadcast_to(g_var, g_mean.shape), axis=1, keepdims=True),
                          g_mean.shape)
    return mean, var


def from_sparse_domain_msg(p, nu_p, ops: DftOperators):
    """Message ``G' = P F2^H`` back to the ``G`` domain (variance averaged over columns)."""
    mean = ops.apply_f2(p.T, adjoint=True).T
    var = np.full(p.shape, float(np.mean(nu_p)))
    return mean, var


# --------------------------------------------------------------------------
# Part III: UAMP with Gaussian-Gamma prior


def sbl_denoise(q, nu_q, gamma_hat):
    """Posterior of ``x`` under prior ``N(0, 1/gamma)`` and pseudo-observation ``N(q, nu_q)``."""
    denom = 1.0 + nu_q * gamma_hat
    return q / denom, nu_q / denom


def update_gamma(x_mean, x_var, shape, rate):
    """Posterior mean of the Gamma precisions; ``shape`` is per column."""
    return (2.0 * shape + 1.0) / (np.abs(x_mean) ** 2 + x_var + 2.0 * rate)


def update_shape(gamma_hat):
    """Automatic shape tuning ``0.5*sqrt(log(mean g) - mean(log g))`` per column."""
    radicand = np.log(np.mean(gamma_hat, axis=0)) - np.mean(np.log(gamma_hat), axis=0)
    return 0.5 * np.sqrt(np.maximum(radicand, 0.0))


def sparse_block_update(x_in, nu_in, block: SparseBlock, apply, rate: float,
                        floor: float = VAR_FLOOR, damping: float = 1.0,
                        fixed_shape: float | None = None) -> SparseBlock:
    """One UAMP-SBL pass on ``Y = A X`` with ``A`` unitary, applied per column.

    ``x_in, nu_in`` is the incoming Gaussian message on ``A X``; ``apply(X,
    adjoint)`` multiplies by ``A`` or ``A^H``.  Returns the updated block,
    whose ``p, nu_p`` is the outgoing message on ``A X``.
    """
    nu_mu = 1.0 / (block.nu_p + nu_in)
    mu = nu_mu * (x_in - block.p)
    if damping < 1.0:
        mu = damping * mu + (1.0 - damping) * block.mu
    nu_q = 1.0 / np.mean(np.broadcast_to(nu_mu, x_in.shape), axis=0, keepdims=True)
    q = block.x.mean + nu_q * apply(mu, True)
    x_mean, x_var = sbl_denoise(q, nu_q, block.gamma.gamma_hat)
    x_var = np.maximum(x_var, floor)
    gamma_hat = update_gamma(x_mean, x_var, block.gamma.shape, rate)
    shape = update_shape(gamma_hat) if fixed_shape is None else np.full(gamma_hat.shape[1], fixed_shape)
    nu_p = np.clip(np.mean(x_var, axis=0, keepdims=True), floor, VAR_CEIL)
    p = apply(x_mean, False) - nu_p * mu
    return SparseBlock(GaussianField(x_mean, x_var), GammaField(gamma_hat, shape, rate), p, nu_p, mu)


def _new_block(rows: int, cols: int) -> SparseBlock:
    return SparseBlock(
        x=GaussianField(np.zeros((rows, cols), complex), np.ones((rows, cols))),
        gamma=GammaField(np.ones((rows, cols)), np.full(cols, 1e-3), 0.0),
        p=np.zeros((rows, cols), complex),
        nu_p=np.ones((1, cols)),
        mu=np.zeros((rows, cols), complex),
    )


# --------------------------------------------------------------------------
# Part I: UAMP on the MMV model


def update_noise_precision(R, z_mean, z_var) -> float:
    """``beta = L J / sum(|r - z|^2 + nu_z)``, clamped to ``1e12``."""
    denom = float(np.sum(np.abs(R - z_mean) ** 2 + z_var))
    if denom <= 0:
        return VAR_CEIL
    return min(R.size / denom, VAR_CEIL)


def uamp_part1_step(R, Psi, lam2, s_post_mean, s_post_var, t, beta_hat: float,
                    floor: float = VAR_FLOOR):
    """One UAMP recursion for every column of ``R = Psi S + W``.

    ``s_post_mean`` (N, J) and ``s_post_var`` (J,) are the current posterior
    of ``S``; ``t`` is the (L, J) carry.  Returns ``(q, nu_q, t, z_mean,
    z_var, beta_hat)`` where ``q, nu_q`` is the extrinsic message on ``S``.
    """
    N = Psi.shape[1]
    if not np.any(lam2 > 0):
        raise DimensionError("sensing matrix has no nonzero singular value")
    nu_p = np.maximum(lam2[:, None] * s_post_var[None, :], floor)
    p = Psi @ s_post_mean - nu_p * t
    nu_t = 1.0 / (nu_p + 1.0 / beta_hat)
    t = nu_t * (R - p)
    nu_q = np.clip(N / np.sum(lam2[:, None] * nu_t, axis=0), floor, VAR_CEIL)
    q = s_post_mean + nu_q * (Psi.conj().T @ t)
    z_var = 1.0 / (1.0 / nu_p + beta_hat)
    z_mean = z_var * (p / nu_p + beta_hat * R)
    beta_hat = update_noise_precision(R, z_mean, z_var)
    return q, nu_q, t, z_mean, z_var, beta_hat


# --------------------------------------------------------------------------
# driver


def init_state(M: int, K: int, N: int, L: int, rng: np.random.Generator,
               R=None, Psi=None, init: str = "data", init_var: float = 0.1,
               init_sweeps: int = 1) -> EstimatorState:
    """Initial state.

    Part III starts from the all-zero/unit-variance SBL state.  The bilinear
    beliefs cannot start at zero (a fixed point), and random starts lock the
    per-element ``G D, D^-1 H`` degree of freedom at a random ``D``.  With
    ``init="data"`` the ``g`` belief is the dominant BS-side direction of the
    observations, constant across RIS elements, and the ``h`` belief is the
    least-squares fit given it.  ``init="random"`` draws CN(0, 1) means.
    ``init_var`` is the initial belief variance relative to the mean power.
    """
    J = K * M
    if init == "data":
        if R is None or Psi is None:
            raise ValueError("data initialization needs R and Psi")
        g_mean, h_mean = _data_init(R, Psi, M, K, init_sweeps)
        g_mean = g_mean + 1e-3 * np.sqrt(np.mean(np.abs(g_mean) ** 2)) * _cn(rng, (M, N))
        h_mean = h_mean + 1e-3 * np.sqrt(np.mean(np.abs(h_mean) ** 2)) * _cn(rng, (K, N))
        g_var = np.full((M, N), max(init_var * np.mean(np.abs(g_mean) ** 2), VAR_FLOOR))
        h_var = np.full((K, N), max(init_var * np.mean(np.abs(h_mean) ** 2), VAR_FLOOR))
    elif init == "random":
        g_mean, h_mean = _cn(rng, (M, N)), _cn(rng, (K, N))
        g_var, h_var = np.ones((M, N)), np.ones((K, N))
    else:
        raise ValueError(f"unknown init {init!r}")
    s_mean, s_var = assemble_s_prior(g_mean[None, :, :], g_var[None, :, :],
                                     h_mean[:, None, :], h_var[:, None, :])
    return EstimatorState(
        omega=_new_block(M, N),
        sigma=_new_block(N, K),
        g_belief=GaussianField(g_mean, g_var),
        h_belief=GaussianField(h_mean, h_var),
        s_prior=GaussianField(s_mean, s_var),
        s_extrinsic=GaussianField(np.zeros((N, J), complex), np.full(J, np.inf)),
        t=np.zeros((L, J), complex),
        z_post=GaussianField(np.zeros((L, J), complex), np.ones((L, J))),
        beta_hat=1.0,
    )


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _data_init(R, Psi, M: int, K: int, sweeps: int = 1, ridge: float = 1e-6):
    """Rank-one start ``g = u 1^T``, refined by alternating least squares.

    Every per-configuration block ``R_l = G diag(psi_l) H`` (M x K) has its
    columns in the span of ``G``, so the top left singular vector ``u`` of the
    blocks side by side is the dominant BS beam.  Holding ``g`` constant
    across RIS elements fixes the per-element scaling freedom at a pure
    modulation.  ``sweeps`` rounds of ``G | H`` and ``H | G`` least squares
    (lightly ridged) then bring in the weaker BS-side paths.
    """
    L, N = Psi.shape
    blocks = R.reshape(L, K, M)                       # [l, k, m]
    B = blocks.transpose(2, 0, 1).reshape(M, L * K)
    u = np.linalg.svd(B, full_matrices=False)[0][:, 0]
    G = np.outer(u, np.ones(N))
    H = _ridge_solve(Psi, blocks @ u.conj(), ridge)   # (N, K)
    Rg = blocks.reshape(L * K, M)                     # rows (l, k)
    Rh = blocks.transpose(0, 2, 1).reshape(L * M, K)  # rows (l, m)
    for _ in range(sweeps):
        # R[l, k, m] = sum_n Psi[l, n] H[n, k] G[m, n]
        A = (Psi[:, None, :] * H.T[None, :, :]).reshape(L * K, N)
        G = _ridge_solve(A, Rg, ridge).T
        A = (Psi[:, None, :] * G[None, :, :]).reshape(L * M, N)
        H = _ridge_solve(A, Rh, ridge)
    gn, hn = np.linalg.norm(G), np.linalg.norm(H)
    balance = np.sqrt(hn / gn) if gn > 0 and hn > 0 else 1.0
    return G * balance, (H / balance).T


def _ridge_solve(A, Y, ridge: float):
    gram = A.conj().T @ A
    lam = ridge * max(float(np.real(np.trace(gram))) / gram.shape[0], 1e-300)
    return np.linalg.solve(gram + lam * np.eye(gram.shape[0]), A.conj().T @ Y)


def _s_posterior(state: EstimatorState):
    prior, ext = state.s_prior, state.s_extrinsic
    if np.all(np.isinf(ext.var)):
        return prior.mean, np.mean(prior.var, axis=0)
    mean, var = gaussian_product(prior.mean, prior.var, ext.mean, ext.var[None, :])
    return mean, np.mean(var, axis=0)


def _rel_change(new, old) -> float:
    return float(np.linalg.norm(new - old) ** 2 / max(np.linalg.norm(old) ** 2, 1e-300))


def iterate(state: EstimatorState, R, Psi, lam2, ops: DftOperators, config: EstimatorConfig) -> EstimatorState:
    """One full outer iteration (Parts I, II, III for both channels)."""
    floor = config.variance_floor
    damp = config.damping
    L, J = R.shape
    M, N = state.g_belief.mean.shape
    K = state.h_belief.mean.shape[0]

    # Part I
    s_mean, s_var = _s_posterior(state)
    q, nu_q, t, z_mean, z_var, beta = uamp_part1_step(R, Psi, lam2, s_mean, s_var, state.t,
                                                      state.beta_hat, floor)
    if damp < 1.0:
        t = damp * t + (1.0 - damp) * state.t
    q3 = q.T.reshape(K, M, N)
    nu_q2 = nu_q.reshape(K, M)

    # Part II/III, g side
    h = state.h_belief
    g_fwd_mean, g_fwd_var = bilinear_forward(
        q3, np.mean(nu_q2, axis=1)[:, None, None], h.mean[:, None, :], h.var[:, None, :])
    g_fwd_var = np.broadcast_to(g_fwd_var, q3.shape)
    g_comb_mean, g_comb_var = combine_forward(g_fwd_mean, g_fwd_var, axis=0)
    gt_mean, gt_var = to_sparse_domain_msg(g_comb_mean, g_comb_var, ops)
    omega = sparse_block_update(gt_mean, gt_var, state.omega, ops.apply_f1, config.eta_g, floor, damp,
                                config.fixed_shape)
    g_prime_mean, g_prime_var = from_sparse_domain_msg(omega.p, omega.nu_p, ops)
    g_mean, g_var = combine_beliefs(g_comb_mean, g_comb_var, g_prime_mean, g_prime_var)
    if damp < 1.0:
        g_mean = damp * g_mean + (1.0 - damp) * state.g_belief.mean
    g_var = np.clip(g_var, floor, VAR_CEIL)
    g_back_mean, g_back_var = backward_to_bilinear(g_mean[None], g_var[None], g_fwd_mean, g_fwd_var)

    # Part II/III, h side (uses the fresh g belief)
    h_fwd_mean, h_fwd_var = bilinear_forward(
        q3, np.mean(nu_q2, axis=0)[None, :, None], g_mean[None, :, :], g_var[None, :, :])
    h_fwd_var = np.broadcast_to(h_fwd_var, q3.shape)
    h_comb_mean, h_comb_var = combine_forward(h_fwd_mean, h_fwd_var, axis=1)   # (K, N)
    sigma = sparse_block_update(h_comb_mean.T, h_comb_var.T, state.sigma,
                                ops.apply_f2, config.eta_h, floor, damp,
                                config.fixed_shape)
    h_prime_mean = sigma.p.T
    h_prime_var = np.broadcast_to(sigma.nu_p.T, h_prime_mean.shape)
    h_mean, h_var = combine_beliefs(h_comb_mean, h_comb_var, h_prime_mean, h_prime_var)
    if damp < 1.0:
        h_mean = damp * h_mean + (1.0 - damp) * h.mean
    h_var = np.clip(h_var, floor, VAR_CEIL)
    h_back_mean, h_back_var = backward_to_bilinear(h_mean[:, None, :], h_var[:, None, :],
                                                   h_fwd_mean, h_fwd_var)

    s_prior_mean, s_prior_var = assemble_s_prior(g_back_mean, g_back_var, h_back_mean, h_back_var, floor)

    return EstimatorState(
        omega=omega,
        sigma=sigma,
        g_belief=GaussianField(g_mean, g_var),
        h_belief=GaussianField(h_mean, h_var),
        s_prior=GaussianField(s_prior_mean, s_prior_var),
        s_extrinsic=GaussianField(q, nu_q),
        t=t,
        z_post=GaussianField(z_mean, z_var),
        beta_hat=beta,
        iter=state.iter + 1,
    )


def _finite(state: EstimatorState) -> bool:
    arrays = (state.omega.x.mean, state.sigma.x.mean, state.g_belief.mean,
              state.h_belief.mean, state.s_prior.mean, state.t)
    return all(np.all(np.isfinite(a)) for a in arrays) and np.isfinite(state.beta_hat)


def run_estimator(R, Psi, m: int, k: int, n1: int, n2: int,
                  config: EstimatorConfig | None = None, lam=None,
                  genie_omega=None, genie_sigma=None, callback=None) -> EstimateReport:
    """Estimate ``Omega`` (M x N) and ``Sigma`` (N x K) from preprocessed observations.

    ``lam`` are the singular values of the phase matrix (ones for a
    row-orthonormal one; inferred from ``Psi`` when omitted).  Passing the true
    ``genie_omega``/``genie_sigma`` enables the per-iteration NMSE trace and
    the ``genie`` termination rule.
    """
    config = config or EstimatorConfig()
    R = np.asarray(R, dtype=complex)
    Psi = np.asarray(Psi, dtype=complex)
    N = n1 * n2
    L, J = R.shape
    if Psi.shape != (L, N) or J != k * m:
        raise DimensionError(f"R {R.shape} / Psi {Psi.shape} inconsistent with M={m}, K={k}, N={N}")
    if lam is None:
        lam = np.linalg.svd(Psi, compute_uv=False)
    lam2 = np.asarray(lam, float) ** 2
    have_genie = genie_omega is not None and genie_sigma is not None
    if config.termination == "genie" and not have_genie:
        raise ValueError("genie termination needs the true Omega and Sigma")

    ops = DftOperators(m, n1, n2, fast=config.fast)
    scale = 1.0
    if config.normalize:
        power = float(np.sum(np.abs(R) ** 2)) / (J * float(np.sum(lam2)))
        scale = np.sqrt(power) if power > 0 else 1.0
    Rn = R / scale
    root = np.sqrt(scale)

    rng = np.random.default_rng(config.seed)
    state = init_state(m, k, N, L, rng, Rn, Psi, config.init, config.init_var, config.init_sweeps)
    trace = []
    converged = False
    G_true = H_true = None
    if have_genie:
        G_true = ops.apply_f1(ops.apply_f2(np.asarray(genie_omega).T, adjoint=True).T)
        H_true = ops.apply_f2(np.asarray(genie_sigma))

    def report(st, conv):
        omega = st.omega.x.mean * root
        sigma = st.sigma.x.mean * root
        G = ops.apply_f1(ops.apply_f2(omega.T, adjoint=True).T)
        H = ops.apply_f2(sigma)
        rep = EstimateReport(omega, sigma, G, H, st.iter, conv, st.beta_hat / scale ** 2, trace)
        if have_genie:
            if config.metric == "ambiguity":
                fit = resolve_ambiguity(G, H, G_true, H_true, n1, n2)
                eg, eh = fit.nmse_G, fit.nmse_H
            else:
                eg, eh = remove_scale(G, G_true)[1], remove_scale(H, H_true)[1]
            rep.nmse_G_db, rep.nmse_H_db = _db(eg), _db(eh)
        return rep

    last_good = state
    for it in range(config.i_max):
        prev = state
        state = iterate(state, Rn, Psi, lam2, ops, config)
        if not _finite(state):
            raise DivergedError(it + 1, report(last_good, False))
        last_good = state
        row = {"iter": state.iter, "beta_hat": state.beta_hat / scale ** 2,
               "max_abs_mean": float(max(np.max(np.abs(state.omega.x.mean)),
                                         np.max(np.abs(state.sigma.x.mean)))) * root}
        if have_genie:
            rep = report(state, False)
            row["nmse_G_db"] = rep.nmse_G_db
            row["nmse_H_db"] = rep.nmse_H_db
        trace.append(row)
        if callback is not None:
            callback(state)
        if config.termination == "genie":
            zeta_db = 10 * np.log10(config.zeta)
            if row["nmse_G_db"] < zeta_db and row["nmse_H_db"] < zeta_db:
                converged = True
                break
        elif it > 0:
            if (_rel_change(state.omega.x.mean, prev.omega.x.mean) < config.zeta
                    and _rel_change(state.sigma.x.mean, prev.sigma.x.mean) < config.zeta):
                converged = True
                break
    return report(state, converged)


def _db(x: float, floor_db: float = -120.0) -> float:
    return max(10.0 * np.log10(max(x, 1e-300)), floor_db)
