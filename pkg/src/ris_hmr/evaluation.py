"""Baselines and metrics: the genie-aided least-squares oracle, NMSE after
ambiguity removal, and the Monte Carlo sweep engine.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .channel import ChannelRealization, SystemDims, generate_channel
from .estimator import DivergedError, EstimatorConfig, run_estimator
from .numerics import DftOperators, DimensionError, remove_scale, resolve_ambiguity
from .system import make_measurements

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -120.0
ORACLE_RIDGE = 1e-10
DEGENERATE_COND = 1e10
# per-trial seeds: SeedSequence(master_seed, spawn_key=(SEED_DOMAIN, trial))
SEED_DOMAIN = 0x52495348

TRIAL_HEADER = ("estimator", "snr_db", "L", "trial", "nmse_G_db", "nmse_H_db",
                "iterations", "runtime_ms", "converged")
AGG_HEADER = ("estimator", "snr_db", "L", "n_trials", "median_G_db", "q1_G_db", "q3_G_db",
              "median_H_db", "q1_H_db", "q3_H_db", "median_iterations", "converged_frac")

__all__ = [
    "OracleFit", "SweepConfig", "SweepResult", "TrialResult", "nmse_db", "oracle_ls",
    "oracle_support", "remove_scale", "run_sweep", "run_trial", "trial_seed",
    "write_aggregate_csv", "write_trials_csv",
]


def nmse_db(x: float) -> float:
    """Linear NMSE to dB, clamped at the reporting floor."""
    return max(10.0 * np.log10(max(float(x), 1e-300)), NMSE_FLOOR_DB)


# --------------------------------------------------------------------------
# oracle


@dataclass
class OracleFit:
    estimate: np.ndarray
    degenerate: bool = False
    cond: float = 1.0


def oracle_support(B, on_grid: bool, energy: float = 0.99, rel_tol: float = 1e-8):
    """Boolean support of a beamspace matrix.

    On-grid the support is the set of structurally nonzero entries.  Off-grid
    every entry leaks, so the support is the smallest set of entries holding
    the fraction ``energy`` of the total (per column for ``Sigma``-like use,
    call it column by column).
    """
    mag2 = np.abs(np.asarray(B)) ** 2
    if on_grid:
        return mag2 > (rel_tol * np.sqrt(mag2.max())) ** 2
    order = np.argsort(mag2, axis=None)[::-1]
    cum = np.cumsum(mag2.ravel()[order])
    count = int(np.searchsorted(cum, energy * cum[-1]) + 1)
    mask = np.zeros(mag2.size, bool)
    mask[order[:count]] = True
    return mask.reshape(mag2.shape)


def _ridge_ls(A, y, ridge: float = ORACLE_RIDGE):
    """Ridge-regularized normal equations; ridge relative to the mean Gram diagonal."""
    gram = A.conj().T @ A
    scale = float(np.real(np.trace(gram))) / max(gram.shape[0], 1)
    if scale == 0:
        return np.zeros((gram.shape[0],) + y.shape[1:], complex), np.inf
    reg = gram + ridge * scale * np.eye(gram.shape[0])
    cond = float(np.linalg.cond(gram))
    return np.linalg.solve(reg, A.conj().T @ y), cond


def oracle_ls(R, Psi, support, genie_other, which: str, ops: DftOperators) -> OracleFit:
    """Genie-aided least squares for one beamspace channel.

    ``which="omega"``: ``H = genie_other`` is fixed at the truth and the
    entries of ``Omega`` on ``support`` (M x N mask) are fitted, since
    ``R[l, k*M+m] = sum_n Psi[l, n] H[n, k] G[m, n]`` is linear in ``G``.
    ``which="sigma"``: ``G = genie_other`` is fixed and each column of
    ``Sigma`` is fitted on its own support (N x K mask).
    """
    R = np.asarray(R, dtype=complex)
    Psi = np.asarray(Psi, dtype=complex)
    support = np.asarray(support, bool)
    L, N = Psi.shape
    M = ops.m
    if which == "omega":
        H = np.asarray(genie_other, dtype=complex)
        K = H.shape[1]
        if support.shape != (M, N) or R.shape != (L, K * M):
            raise DimensionError(f"support {support.shape} / R {R.shape} inconsistent")
        a_idx, b_idx = np.nonzero(support)
        if a_idx.size == 0:
            raise ValueError("empty support")
        # G = sum omega_ab F1[:, a] conj(F2[:, b])^T, so the column for (a, b) is
        # (Psi diag(conj F2[:, b]) H)[l, k] * F1[m, a] at row (l, k*M + m)
        AB = np.einsum("ln,nb,nk->blk", Psi, ops.F2.conj()[:, b_idx], H)
        cols = AB[:, :, :, None] * ops.F1.T[a_idx][:, None, None, :]
        A = cols.reshape(a_idx.size, L * K * M).T
        x, cond = _ridge_ls(A, R.reshape(-1))
        est = np.zeros((M, N), complex)
        est[a_idx, b_idx] = x
        return OracleFit(est, cond > DEGENERATE_COND, cond)
    if which == "sigma":
        G = np.asarray(genie_other, dtype=complex)
        K = R.shape[1] // M
        if support.shape != (N, K) or G.shape != (M, N):
            raise DimensionError(f"support {support.shape} / G {G.shape} inconsistent")
        # block k of R is Psi diag(F2 sigma_k) G^T; column c is Psi diag(F2[:, c]) G^T
        basis = np.einsum("ln,nc,mn->clm", Psi, ops.F2, G).reshape(N, L * M).T
        est = np.zeros((N, K), complex)
        worst = 1.0
        for k in range(K):
            idx = np.nonzero(support[:, k])[0]
            if idx.size == 0:
                raise ValueError(f"empty support for user {k}")
            x, cond = _ridge_ls(basis[:, idx], R[:, k * M:(k + 1) * M].reshape(-1))
            est[idx, k] = x
            worst = max(worst, cond)
        return OracleFit(est, worst > DEGENERATE_COND, worst)
    raise ValueError(f"which must be 'omega' or 'sigma', got {which!r}")


# --------------------------------------------------------------------------
# trials and sweeps


@dataclass
class TrialResult:
    estimator: str
    snr_db: float
    L: int
    trial: int
    nmse_G_db: float
    nmse_H_db: float
    iterations: int
    runtime_ms: float
    converged: bool

    def row(self) -> list:
        return [self.estimator, _fmt(self.snr_db), str(self.L), str(self.trial),
                _fmt(self.nmse_G_db), _fmt(self.nmse_H_db), str(self.iterations),
                _fmt(self.runtime_ms), "1" if self.converged else "0"]


@dataclass
class SweepConfig:
    """Everything a sweep needs.  Defaults are the standard simulation setup."""

    dims: SystemDims = field(default_factory=SystemDims)
    l_list: tuple = (24,)
    snr_db_list: tuple = (0.0, 10.0, 20.0, 30.0)
    trials: int = 50
    seed: int = 0
    phi_kind: str = "partial_dft_random"
    p: int = 3
    p_prime: int = 3
    rician_db: float = 13.2
    on_grid: bool = False
    noiseless: bool = False
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    oracle: bool = True
    oracle_energy: float = 0.99
    metric: str = "ambiguity"
    time_runs: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not self.l_list or not self.snr_db_list:
            raise ValueError("l_list and snr_db_list must be nonempty")
        if self.metric not in ("ambiguity", "scale"):
            raise ValueError(f"metric must be 'ambiguity' or 'scale', got {self.metric!r}")


@dataclass
class SweepResult:
    config: SweepConfig
    trials: list
    aggregate: list


def trial_seed(master_seed: int, trial: int) -> int:
    """Seed of trial ``trial``.  Independent of SNR and L so every sweep
    point sees the same channel draws (common random numbers)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(SEED_DOMAIN, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _nmse_pair(G_est, H_est, chan: ChannelRealization, metric: str):
    if metric == "ambiguity":
        fit = resolve_ambiguity(G_est, H_est, chan.G, chan.H, chan.dims.n1, chan.dims.n2)
        return nmse_db(fit.nmse_G), nmse_db(fit.nmse_H)
    return nmse_db(remove_scale(G_est, chan.G)[1]), nmse_db(remove_scale(H_est, chan.H)[1])


def run_trial(config: SweepConfig, snr_db: float, L: int, trial: int) -> list:
    """Generate one instance and run the proposed estimator and the oracle on it."""
    seed = trial_seed(config.seed, trial)
    dims = replace(config.dims, l=L)
    chan_rng, meas_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    chan = generate_channel(dims, chan_rng, config.p, config.p_prime, config.rician_db,
                            config.on_grid)
    meas = make_measurements(chan, snr_db, L, config.phi_kind, meas_rng,
                             noiseless=config.noiseless, seed=seed)
    ops = dims.operators()
    out = []

    est_cfg = replace(config.estimator, seed=seed % (2 ** 32), metric=config.metric)
    genie = est_cfg.termination == "genie"
    t0 = time.perf_counter()
    try:
        rep = run_estimator(meas.R, meas.Psi, dims.m, dims.k, dims.n1, dims.n2, est_cfg,
                            lam=meas.Lambda,
                            genie_omega=chan.Omega if genie else None,
                            genie_sigma=chan.Sigma if genie else None)
        converged, iters = rep.converged, rep.iterations
    except DivergedError as err:
        log.warning("trial %d (snr %s, L %d) diverged at iteration %d", trial, snr_db, L, err.iteration)
        rep, converged, iters = err.report, False, err.iteration
    runtime = (time.perf_counter() - t0) * 1e3 if config.time_runs else 0.0
    g_db, h_db = _nmse_pair(rep.G, rep.H, chan, config.metric)
    out.append(TrialResult("proposed", snr_db, L, trial, g_db, h_db, iters, runtime, converged))

    if config.oracle:
        t0 = time.perf_counter()
        sup_o = oracle_support(chan.Omega, config.on_grid, config.oracle_energy)
        sup_s = np.column_stack([oracle_support(chan.Sigma[:, k], config.on_grid, config.oracle_energy)
                                 for k in range(dims.k)])
        fo = oracle_ls(meas.R, meas.Psi, sup_o, chan.H, "omega", ops)
        fs = oracle_ls(meas.R, meas.Psi, sup_s, chan.G, "sigma", ops)
        G_or = ops.apply_f1(ops.apply_f2(fo.estimate.T, adjoint=True).T)
        H_or = ops.apply_f2(fs.estimate)
        runtime = (time.perf_counter() - t0) * 1e3 if config.time_runs else 0.0
        g_db, h_db = _nmse_pair(G_or, H_or, chan, config.metric)
        ok = not (fo.degenerate or fs.degenerate)
        if not ok:
            log.warning("trial %d: oracle design is degenerate", trial)
        out.append(TrialResult("oracle", snr_db, L, trial, g_db, h_db, 1, runtime, ok))
    return out


def _trial_job(args):
    return run_trial(*args)


def run_sweep(config: SweepConfig, jobs: int = 1) -> SweepResult:
    """All (SNR, L, trial) combinations; results are ordered and independent of ``jobs``."""
    tasks = [(config, float(snr), int(L), t)
             for L in config.l_list for snr in config.snr_db_list for t in range(config.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_trial_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        chunks = [_trial_job(t) for t in tasks]
    results = [r for chunk in chunks for r in chunk]
    return SweepResult(config, results, aggregate(results))


def aggregate(results) -> list:
    """Median and quartiles per (estimator, SNR, L), in first-seen order."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.estimator, r.snr_db, r.L), []).append(r)
    rows = []
    for (name, snr, L), rs in groups.items():
        g = np.array([r.nmse_G_db for r in rs])
        h = np.array([r.nmse_H_db for r in rs])
        qg = np.percentile(g, [50, 25, 75])
        qh = np.percentile(h, [50, 25, 75])
        rows.append({
            "estimator": name, "snr_db": snr, "L": L, "n_trials": len(rs),
            "median_G_db": qg[0], "q1_G_db": qg[1], "q3_G_db": qg[2],
            "median_H_db": qh[0], "q1_H_db": qh[1], "q3_H_db": qh[2],
            "median_iterations": float(np.median([r.iterations for r in rs])),
            "converged_frac": float(np.mean([r.converged for r in rs])),
        })
    return rows


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6f}"


def write_trials_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for r in results:
            w.writerow(r.row())


def write_aggregate_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for row in rows:
            w.writerow([row[k] if isinstance(row[k], str) else _fmt(row[k]) for k in AGG_HEADER])


def trials_to_csv_text(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_HEADER)
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()
