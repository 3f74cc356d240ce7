"""Command-line experiment runner.

    ris-hmr sweep  --config exp.cfg [--jobs N] [--strict]
    ris-hmr single --config exp.cfg [--dump-trace] [--genie]

The config file holds flat dotted keys, one per line::

    # comment
    sim.snr_db_list = [0, 10, 20]
    est.zeta = 1e-6
    channel.on_grid = true

Omitted keys take the standard simulation defaults.  ``RIS_HMR_SEED`` in the
environment overrides ``sim.seed``.
"""
from __future__ import annotations

import argparse
import ast
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .channel import SystemDims, generate_channel
from .estimator import DivergedError, EstimatorConfig, run_estimator
from .evaluation import (SweepConfig, run_sweep, run_trial, trial_seed,
                         write_aggregate_csv, write_trials_csv)
from .system import PHI_KINDS, make_measurements

log = logging.getLogger("ris_hmr")

SEED_ENV = "RIS_HMR_SEED"
TRACE_HEADER = ("iter", "beta_hat", "nmse_G_db", "nmse_H_db", "max_abs_mean")


class ConfigFileError(ValueError):
    pass


# key -> (default, type); types: int, float, bool, str, "ints", "floats", "optfloat"
SCHEMA = {
    "dims.m": (32, int),
    "dims.k": (32, int),
    "dims.n1": (4, int),
    "dims.n2": (8, int),
    "dims.t": (None, "optint"),
    "sim.l_list": ((16, 24), "ints"),
    "sim.snr_db_list": ((0.0, 10.0, 20.0, 30.0), "floats"),
    "sim.fixed_snr_db": (20.0, float),
    "sim.trials": (20, int),
    "sim.seed": (0, int),
    "sim.phi_kind": ("partial_dft_random", str),
    "sim.noiseless": (False, bool),
    "channel.p": (3, int),
    "channel.p_prime": (3, int),
    "channel.rician_db": (13.2, float),
    "channel.on_grid": (False, bool),
    "est.zeta": (1e-3, float),
    "est.i_max": (30, int),
    "est.damping": (1.0, float),
    "est.termination": ("self_change", str),
    "est.eta": (1e-10, float),
    "est.init": ("data", str),
    "est.fixed_shape": (None, "optfloat"),
    "est.metric": ("ambiguity", str),
    "out.csv_path": ("results/trials.csv", str),
    "out.svg_path": ("results/nmse.svg", str),
    "out.trace_path": ("results/trace.csv", str),
    "out.trace": (False, bool),
    "out.timing": (False, bool),
    "out.oracle": (True, bool),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    @property
    def dims(self) -> SystemDims:
        v = self.values
        return SystemDims(m=v["dims.m"], k=v["dims.k"], n1=v["dims.n1"], n2=v["dims.n2"],
                          l=v["sim.l_list"][0], t=v["dims.t"])

    def estimator(self, genie: bool = False) -> EstimatorConfig:
        v = self.values
        return EstimatorConfig(zeta=v["est.zeta"], i_max=v["est.i_max"], damping=v["est.damping"],
                               termination="genie" if genie else v["est.termination"],
                               eta_g=v["est.eta"], eta_h=v["est.eta"], init=v["est.init"],
                               fixed_shape=v["est.fixed_shape"], metric=v["est.metric"])

    def sweep(self) -> SweepConfig:
        v = self.values
        return SweepConfig(dims=self.dims, l_list=tuple(v["sim.l_list"]),
                           snr_db_list=tuple(v["sim.snr_db_list"]), trials=v["sim.trials"],
                           seed=v["sim.seed"], phi_kind=v["sim.phi_kind"], p=v["channel.p"],
                           p_prime=v["channel.p_prime"], rician_db=v["channel.rician_db"],
                           on_grid=v["channel.on_grid"], noiseless=v["sim.noiseless"],
                           estimator=self.estimator(), oracle=v["out.oracle"],
                           metric=v["est.metric"], time_runs=v["out.timing"])


def _coerce(key: str, raw: str, kind):
    text = raw.strip()
    low = text.lower()
    if kind is bool:
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigFileError(f"{key}: expected a boolean, got {raw!r}")
    if kind is str:
        try:
            val = ast.literal_eval(text)
            return val if isinstance(val, str) else text
        except (ValueError, SyntaxError):
            return text
    if kind in ("optint", "optfloat") and low in ("none", "null", ""):
        return None
    try:
        val = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise ConfigFileError(f"{key}: cannot parse {raw!r}") from None
    try:
        if kind in ("ints", "floats"):
            seq = val if isinstance(val, (list, tuple)) else [val]
            cast = int if kind == "ints" else float
            if kind == "ints" and any(float(x) != int(x) for x in seq):
                raise ValueError
            return tuple(cast(x) for x in seq)
        if kind in (int, "optint"):
            if isinstance(val, bool) or float(val) != int(val):
                raise ValueError
            return int(val)
        return float(val)
    except (TypeError, ValueError):
        raise ConfigFileError(f"{key}: expected {getattr(kind, '__name__', kind)}, got {raw!r}") from None


def parse_config(source=None, text: str | None = None) -> ExperimentConfig:
    """Read a config file (or inline ``text``) into an :class:`ExperimentConfig`."""
    if text is None:
        text = "" if source is None else Path(source).read_text()
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigFileError(f"unknown key {key!r} (line {lineno})")
        cfg.values[key] = _coerce(key, raw, SCHEMA[key][1])
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    for key in ("dims.m", "dims.k", "dims.n1", "dims.n2", "sim.trials", "channel.p",
                "channel.p_prime", "est.i_max"):
        if v[key] < 1:
            raise ConfigFileError(f"{key} must be >= 1, got {v[key]}")
    for key in ("sim.l_list", "sim.snr_db_list"):
        if len(v[key]) == 0:
            raise ConfigFileError(f"{key} must be nonempty")
    if any(l < 1 for l in v["sim.l_list"]):
        raise ConfigFileError("sim.l_list entries must be >= 1")
    if v["sim.phi_kind"] not in PHI_KINDS:
        raise ConfigFileError(f"sim.phi_kind must be one of {PHI_KINDS}, got {v['sim.phi_kind']!r}")
    if v["sim.phi_kind"].startswith("partial_dft") and max(v["sim.l_list"]) > v["dims.n1"] * v["dims.n2"]:
        raise ConfigFileError("sim.l_list exceeds N for a partial DFT phase matrix")
    if not v["est.zeta"] > 0:
        raise ConfigFileError(f"est.zeta must be positive, got {v['est.zeta']}")
    if not 0 < v["est.damping"] <= 1:
        raise ConfigFileError(f"est.damping must lie in (0, 1], got {v['est.damping']}")
    if v["est.termination"] not in ("self_change", "genie"):
        raise ConfigFileError(f"est.termination must be self_change or genie, got {v['est.termination']!r}")
    if v["est.init"] not in ("data", "random"):
        raise ConfigFileError(f"est.init must be data or random, got {v['est.init']!r}")
    if v["est.metric"] not in ("ambiguity", "scale"):
        raise ConfigFileError(f"est.metric must be ambiguity or scale, got {v['est.metric']!r}")
    if v["dims.t"] is not None and v["dims.t"] < v["dims.k"]:
        raise ConfigFileError(f"dims.t must be >= dims.k, got {v['dims.t']}")


def apply_env(cfg: ExperimentConfig) -> ExperimentConfig:
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            cfg.values["sim.seed"] = int(seed)
        except ValueError:
            raise ConfigFileError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
    return cfg


# --------------------------------------------------------------------------
# SVG

W, H_PX = 800, 600
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def svg_plot(curves, xlabel: str, title: str) -> str:
    """Two side-by-side panels (G and H).  ``curves`` maps a label to
    ``(xs, ys_G, ys_H)``; each label yields one polyline per panel, with
    markers at the data points.  Polylines carry ``data-curve`` attributes."""
    panels = (("G", 1), ("H", 2))
    pw, ph = 340, 440
    x0s = (70, 450)
    y0 = 80
    allx = [x for xs, _, _ in curves.values() for x in xs]
    ally = [y for _, g, h in curves.values() for y in list(g) + list(h)]
    xmin, xmax = (min(allx), max(allx)) if allx else (0.0, 1.0)
    ymin, ymax = (min(ally), max(ally)) if ally else (-1.0, 0.0)
    if xmax == xmin:
        xmin, xmax = xmin - 1, xmax + 1
    ymin, ymax = 10 * np.floor(ymin / 10), 10 * np.ceil(ymax / 10)
    if ymax == ymin:
        ymax = ymin + 10

    def px(x, x0):
        return x0 + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        return y0 + (ymax - y) / (ymax - ymin) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H_PX}" viewBox="0 0 {W} {H_PX}">',
           f'<rect width="{W}" height="{H_PX}" fill="white"/>',
           f'<text x="{W / 2}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>']
    for (name, idx), x0 in zip(panels, x0s):
        out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
        out.append(f'<text x="{x0 + pw / 2}" y="{y0 - 8}" text-anchor="middle" font-size="13">NMSE of {name} (dB)</text>')
        for yt in np.arange(ymin, ymax + 1e-9, 10):
            out.append(f'<line x1="{x0}" y1="{py(yt):.1f}" x2="{x0 + pw}" y2="{py(yt):.1f}" stroke="#ddd"/>')
            out.append(f'<text x="{x0 - 6}" y="{py(yt) + 4:.1f}" text-anchor="end" font-size="10">{yt:g}</text>')
        for xt in sorted(set(allx)):
            out.append(f'<text x="{px(xt, x0):.1f}" y="{y0 + ph + 16}" text-anchor="middle" font-size="10">{xt:g}</text>')
        out.append(f'<text x="{x0 + pw / 2}" y="{y0 + ph + 36}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
        for c, (label, data) in enumerate(curves.items()):
            xs, ys = data[0], data[idx]
            color = COLORS[c % len(COLORS)]
            pts = " ".join(f"{px(x, x0):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
            out.append(f'<polyline data-curve="{escape(label)} {name}" points="{pts}" fill="none" '
                       f'stroke="{color}" stroke-width="2"/>')
            for x, y in zip(xs, ys):
                out.append(f'<circle cx="{px(x, x0):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
    for c, label in enumerate(curves):
        y = y0 + ph + 56 + 0 * c
        x = 70 + 180 * c
        out.append(f'<text x="{x}" y="{y}" font-size="12" fill="{COLORS[c % len(COLORS)]}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_vs_snr(aggregate) -> dict:
    curves: dict = {}
    for row in aggregate:
        key = f"{row['estimator']} L={row['L']}"
        xs, g, h = curves.setdefault(key, ([], [], []))
        xs.append(row["snr_db"])
        g.append(row["median_G_db"])
        h.append(row["median_H_db"])
    return curves


def curves_vs_l(aggregate, snr_db: float) -> dict:
    snrs = sorted({row["snr_db"] for row in aggregate})
    target = snr_db if snr_db in snrs else min(snrs, key=lambda s: abs(s - snr_db))
    curves: dict = {}
    for row in sorted(aggregate, key=lambda r: r["L"]):
        if row["snr_db"] != target:
            continue
        xs, g, h = curves.setdefault(f"{row['estimator']} SNR={target:g} dB", ([], [], []))
        xs.append(row["L"])
        g.append(row["median_G_db"])
        h.append(row["median_H_db"])
    return curves


def _derived(path: Path, suffix: str, ext: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{ext}")


def output_paths(cfg: ExperimentConfig) -> dict:
    csv_path = Path(cfg["out.csv_path"])
    svg_path = Path(cfg["out.svg_path"])
    return {"trials": csv_path, "aggregate": _derived(csv_path, "aggregate", ".csv"),
            "svg_snr": _derived(svg_path, "snr", ".svg"), "svg_l": _derived(svg_path, "L", ".svg")}


def _write(path: Path, writer) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror or err}") from err


# --------------------------------------------------------------------------
# commands


def cmd_sweep(cfg: ExperimentConfig, jobs: int = 1, strict: bool = False) -> int:
    result = run_sweep(cfg.sweep(), jobs=jobs)
    paths = output_paths(cfg)
    _write(paths["trials"], lambda p: write_trials_csv(p, result.trials))
    _write(paths["aggregate"], lambda p: write_aggregate_csv(p, result.aggregate))
    _write(paths["svg_snr"], lambda p: p.write_text(
        svg_plot(curves_vs_snr(result.aggregate), "SNR (dB)", "NMSE versus SNR")))
    _write(paths["svg_l"], lambda p: p.write_text(
        svg_plot(curves_vs_l(result.aggregate, cfg["sim.fixed_snr_db"]), "L", "NMSE versus L")))
    for row in result.aggregate:
        print(f"{row['estimator']:>8} snr={row['snr_db']:>5g} L={row['L']:>3d} "
              f"G={row['median_G_db']:8.2f} dB H={row['median_H_db']:8.2f} dB")
    for p in paths.values():
        print(f"wrote {p}")
    failed = [r for r in result.trials if r.estimator == "proposed" and not r.converged]
    if strict and failed:
        print(f"{len(failed)} trial(s) did not converge", file=sys.stderr)
        return 3
    return 0


def cmd_single(cfg: ExperimentConfig, dump_trace: bool = False, genie: bool = False) -> int:
    sw = cfg.sweep()
    snr = sw.snr_db_list[0]
    L = sw.l_list[0]
    seed = trial_seed(sw.seed, 0)
    dims = replace(sw.dims, l=L)
    chan_rng, meas_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    chan = generate_channel(dims, chan_rng, sw.p, sw.p_prime, sw.rician_db, sw.on_grid)
    meas = make_measurements(chan, snr, L, sw.phi_kind, meas_rng, noiseless=sw.noiseless, seed=seed)
    est_cfg = replace(cfg.estimator(genie), seed=seed % (2 ** 32))
    status = 0
    try:
        rep = run_estimator(meas.R, meas.Psi, dims.m, dims.k, dims.n1, dims.n2, est_cfg,
                            lam=meas.Lambda, genie_omega=chan.Omega, genie_sigma=chan.Sigma)
    except DivergedError as err:
        print(f"diverged at iteration {err.iteration}", file=sys.stderr)
        rep, status = err.report, 3
    print(f"proposed: nmse_G={rep.nmse_G_db:.2f} dB nmse_H={rep.nmse_H_db:.2f} dB "
          f"iterations={rep.iterations} converged={rep.converged}")
    if sw.oracle:
        oracle = [r for r in run_trial(replace(sw, time_runs=False), snr, L, 0) if r.estimator == "oracle"][0]
        print(f"oracle:   nmse_G={oracle.nmse_G_db:.2f} dB nmse_H={oracle.nmse_H_db:.2f} dB")
    if dump_trace or cfg["out.trace"]:
        path = Path(cfg["out.trace_path"])

        def write(p):
            with open(p, "w") as fh:
                fh.write(",".join(TRACE_HEADER) + "\n")
                for row in rep.trace:
                    fh.write(",".join(f"{row[k]:.6g}" if k != "iter" else str(row[k])
                                      for k in TRACE_HEADER) + "\n")
        _write(path, write)
        print(f"wrote {path} ({len(rep.trace)} rows)")
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ris-hmr", description="RIS cascaded channel estimation experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("sweep", help="Monte Carlo sweep over SNR and L")
    s.add_argument("--config", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--strict", action="store_true", help="nonzero exit if any trial fails to converge")
    s1 = sub.add_parser("single", help="one trial with a per-iteration trace")
    s1.add_argument("--config", required=True)
    s1.add_argument("--dump-trace", action="store_true")
    s1.add_argument("--genie", action="store_true", help="stop on the true-NMSE rule")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_env(parse_config(args.config))
        if args.command == "sweep":
            if args.jobs < 1:
                raise ConfigFileError("--jobs must be >= 1")
            return cmd_sweep(cfg, args.jobs, args.strict)
        return cmd_single(cfg, args.dump_trace, args.genie)
    except (ConfigFileError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
