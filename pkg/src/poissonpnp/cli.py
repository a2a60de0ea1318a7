"""Command-line harness: simulate, sample, compare, bridge-check.

Exit codes: 0 success, 2 configuration error, 3 chain divergence,
4 bridge protocol error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .bridge import BridgeDenoiser, BridgeError
from .config import ConfigError, ExperimentConfig, float_list
from .diagnostics import (
    MultiscaleStd, TraceBuffer, WelfordAccumulator, acf, log_grid,
    nfe_to_fraction_of_peak, psnr, select_extreme_pixels, ssim,
)
from .likelihood import PoissonModel, default_beta, simulate
from .priors import EquivarianceGroup, EquivariantDenoiser, GaussianDenoiser, GMMDenoiser
from .samplers import (
    BoxConstraint, ChainConfig, ChainDivergence, delta_l, resolve_delta, run_chain, skrock_coeffs,
)
from .tensor import BlurOperator, delta_kernel, gaussian_kernel, load_kernel, normalize_kernel

log = logging.getLogger("poissonpnp")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_BRIDGE = 0, 2, 3, 4


# ---------------------------------------------------------------- problem setup


def synthetic_image(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if parts[1] == "blocks":
        n = int(parts[2]) if len(parts) > 2 else 32
        x = np.full((n, n), 0.2)
        x[n // 8 : n // 2, n // 8 : 5 * n // 8] = 0.8
        x[5 * n // 8 : 7 * n // 8, n // 2 : 7 * n // 8] = 0.8
        return x[None]
    if parts[1] == "spots":
        # small bright bars, at most two pixels thick, on a dark background
        n = int(parts[2]) if len(parts) > 2 else 32
        lo, hi = (float(parts[3]), float(parts[4])) if len(parts) > 4 else (0.1, 3.0)
        sizes = [(2, 2), (2, 3), (3, 2), (2, 5), (5, 2), (2, 4), (4, 2), (2, 6)]
        x = np.full((n, n), lo)
        cell = n // 4
        for i in range(4):
            for j in range(4):
                h, w = sizes[(4 * i + 3 * j) % len(sizes)]
                r, c = i * cell + (cell - h) // 2, j * cell + (cell - w) // 2
                x[r : r + h, c : c + w] = hi
        return x[None]
    if parts[1] == "constant":
        return np.full((1, int(parts[3]), int(parts[3])), float(parts[2]))
    raise ConfigError(f"unknown synthetic image {spec!r}")


def make_image(spec: str) -> np.ndarray:
    return synthetic_image(spec) if spec.startswith("synthetic:") else io.load_image(spec)


def make_kernel(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if spec == "delta":
        return delta_kernel(1)
    if parts[0] == "gaussian":
        return gaussian_kernel(int(parts[1]), float(parts[2]))
    if parts[0] == "uniform":
        return normalize_kernel(np.ones((int(parts[1]),) * 2))
    return load_kernel(spec)


def _data_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.problem.data_dir or cfg.outputs.directory)


def build_denoiser(cfg: ExperimentConfig):
    p = cfg.prior
    if p.kind == "none":
        return None
    if p.kind == "gaussian":
        d = GaussianDenoiser(p.mean, p.var, p.epsilon)
    elif p.kind == "gmm":
        d = GMMDenoiser(float_list(p.weights), float_list(p.means), float_list(p.variances), p.epsilon)
    else:
        if p.gamma > 0:
            d = BridgeDenoiser(p.bridge_command, gamma=p.gamma, timeout=p.bridge_timeout)
        else:
            d = BridgeDenoiser(p.bridge_command, epsilon=p.epsilon, timeout=p.bridge_timeout)
    if p.denoiser_lipschitz > 0:
        d.lipschitz = p.denoiser_lipschitz
    if p.equivariant:
        d = EquivariantDenoiser(d, EquivarianceGroup(seed=[cfg.sampler.seed, 1]))
    return d


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: ExperimentConfig) -> dict:
    cfg.validate()
    out = Path(cfg.outputs.directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    x_true = make_image(cfg.problem.image)
    kernel = make_kernel(cfg.problem.kernel)
    op = BlurOperator(kernel, x_true.shape)
    y = simulate(x_true, op, cfg.problem.alpha, cfg.problem.seed)
    beta = default_beta(y) if cfg.problem.beta == "auto" else float(cfg.problem.beta)
    io.save_raw(out / "x_true.f64", x_true)
    io.save_raw(out / "y.f64", y, alpha=cfg.problem.alpha, beta=beta, seed=cfg.problem.seed)
    np.savetxt(out / "kernel.txt", kernel, fmt="%.17g")
    io.save_image(out / "x_true.png", x_true)
    io.save_image(out / "y.png", y / cfg.problem.alpha)
    (out / "simulate.ini").write_text(cfg.to_ini())
    return {"x_true": x_true, "y": y, "beta": beta, "kernel": kernel}


def load_problem(cfg: ExperimentConfig):
    d = _data_dir(cfg)
    try:
        y, header = io.load_raw(d / "y.f64")
        kernel = np.loadtxt(d / "kernel.txt", ndmin=2)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing simulated data in {d}: run 'simulate' first ({exc})") from exc
    x_true = io.load_raw(d / "x_true.f64")[0] if (d / "x_true.f64").exists() else None
    op = BlurOperator(kernel, y.shape)
    model = PoissonModel(op, float(header["alpha"]), float(header["beta"]), y)
    return model, x_true


def _problem_hash(y) -> str:
    return hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest()[:16]


def cmd_sample(cfg: ExperimentConfig) -> int:
    cfg.validate(need_files=False)
    out = Path(cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    model, x_true = load_problem(cfg)
    denoiser = build_denoiser(cfg)
    try:
        return _sample(cfg, out, model, x_true, denoiser)
    finally:
        base = getattr(denoiser, "base", denoiser)
        if isinstance(base, BridgeDenoiser):
            base.close()


def _sample(cfg, out, model, x_true, denoiser) -> int:
    s = cfg.sampler
    dl = delta_l(model, denoiser)
    l_s = skrock_coeffs(s.s, s.eta).l_s
    if s.c:
        delta = resolve_delta(s.kernel, s.c, model, denoiser, s.s, s.eta)
        step_rule = f"c={s.c!r}"
    elif s.delta:
        delta = s.delta
        step_rule = "absolute"
    else:
        raise ConfigError("set sampler.delta or sampler.c")
    chain_cfg = ChainConfig(
        delta=delta, n_iter=s.n_iter, rho=cfg.prior.rho, s=s.s, eta=s.eta, seed=s.seed,
        burn_in=s.burn_in, thin=s.thin, dual_floor=s.dual_floor, mla_beta=s.mla_beta,
        literal_box_signs=s.literal_box_signs,
    )
    box = None if s.kernel == "pnp-mla" else BoxConstraint(s.box_lower, s.box_upper)
    scales = [int(v) for v in float_list(cfg.outputs.scales)]
    n_samples_max = max(0, (s.n_iter - s.burn_in) // s.thin)
    welford = WelfordAccumulator()
    ms = MultiscaleStd(scales)
    trace = TraceBuffer(max(1, min(cfg.outputs.trace_capacity, n_samples_max)))
    grid = set(int(k) for k in log_grid(s.n_iter, cfg.outputs.metric_points) if k > s.burn_in)
    nfe_per_iter = (s.s if s.kernel == "rpnp-skrock" else 1) if denoiser is not None else 0
    curve = []

    def track(k, x):
        if k in grid and welford.count and x_true is not None:
            m = welford.mean
            curve.append((k, k * nfe_per_iter, psnr(m, x_true), ssim(m, x_true)))

    report = {
        "kernel": s.kernel, "problem_hash": _problem_hash(model.y), "alpha": model.alpha,
        "beta": repr(model.beta), "delta_L": repr(dl), "l_s": repr(l_s), "step_rule": step_rule,
        "c": repr(s.c), "delta": repr(delta),
    }
    status, code = "ok", EXIT_OK
    try:
        res = run_chain(s.kernel, model, denoiser, chain_cfg, [welford, ms, trace], constraint=box, callback=track)
        report.update(res.as_dict())
        report.pop("wall_clock_s")
        report.pop("iterations_per_sec")
        status = res.status
    except ChainDivergence as exc:
        status, code = "diverged", EXIT_DIVERGED
        report["error"] = str(exc)
    report["status"] = status
    report["n_samples"] = welford.count

    if welford.count >= 1:
        io.save_raw(out / "mmse.f64", welford.mean)
        io.save_image(out / "mmse.png", welford.mean)
        if x_true is not None:
            report["psnr"] = f"{psnr(welford.mean, x_true):.6f}"
            report["ssim"] = f"{ssim(welford.mean, x_true):.6f}"
    if welford.count >= 2:
        for sc, sd in ms.std_maps().items():
            io.save_raw(out / f"std_s{sc}.f64", sd)
            io.save_image(out / f"std_s{sc}.png", sd, scale=float(sd.max()) or None)
        slow, fast = select_extreme_pixels(welford)
        report["slow_pixel"], report["fast_pixel"] = slow, fast
        lag = min(cfg.outputs.acf_max_lag, trace.length - 1)
        if lag >= 1:
            a_slow = acf(trace.series(slow), lag)
            a_fast = acf(trace.series(fast), lag)
            with open(out / "acf.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["lag", "slow", "fast"])
                for i in range(lag + 1):
                    w.writerow([i, f"{a_slow[i]:.12g}", f"{a_fast[i]:.12g}"])
    if curve:
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "nfe", "psnr", "ssim"])
            for k, nfe, p, q in curve:
                w.writerow([k, nfe, f"{p:.12g}", f"{q:.12g}"])
        nfe98 = nfe_to_fraction_of_peak([c[1] for c in curve], [c[2] for c in curve])
        report["nfe_to_98pct_peak_psnr"] = nfe98
    io.write_report(out / "report.txt", report)
    (out / "config.ini").write_text(cfg.to_ini())
    return code


COMPARE_COLUMNS = ["run", "method", "c", "psnr", "ssim", "nfe_to_98pct_peak_psnr", "error"]


def cmd_compare(run_dirs, out_csv) -> list[dict]:
    """Merge run reports into one table; a missing run yields a row with an error."""
    rows, hashes = [], set()
    for d in map(Path, run_dirs):
        row = dict.fromkeys(COMPARE_COLUMNS, "")
        row["run"] = str(d)
        rep_path = d / "report.txt"
        if not rep_path.is_file():
            row["error"] = "missing run directory or report"
            rows.append(row)
            continue
        rep = io.read_report(rep_path)
        hashes.add(rep.get("problem_hash"))
        row.update(
            method=rep.get("kernel", ""), c=rep.get("c", ""), psnr=rep.get("psnr", ""),
            ssim=rep.get("ssim", ""), nfe_to_98pct_peak_psnr=rep.get("nfe_to_98pct_peak_psnr", ""),
        )
        if rep.get("status") != "ok":
            row["error"] = rep.get("status", "unknown status")
        rows.append(row)
    if len(hashes) > 1:
        raise ConfigError(f"runs were made on different problems: {sorted(h for h in hashes if h)}")
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def cmd_bridge_check(command, epsilon, shape, seed=0, expect="none", mean=0.0, var=1.0, timeout=10.0) -> dict:
    """Send one random tensor through a bridge and compare against an expected map."""
    x = np.random.default_rng(seed).random(shape)
    with BridgeDenoiser(command, epsilon=epsilon, timeout=timeout) as bridge:
        out = bridge.denoise(x)
    x32 = x.astype(np.float32).astype(np.float64)
    result = {"shape": out.shape, "max_abs_change": float(np.max(np.abs(out - x32)))}
    if expect == "identity":
        ref = x32
    elif expect == "gaussian":
        ref = GaussianDenoiser(mean, var, epsilon).denoise(x)
    else:
        return result
    rel = float(np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-12)))
    result["max_rel_error"] = rel
    if rel > 1e-6:
        raise BridgeError(f"bridge output deviates from the {expect} reference (rel. error {rel:.3g})")
    return result


# ---------------------------------------------------------------- argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file")
    defaults = ExperimentConfig()
    for sec in ExperimentConfig.SECTIONS:
        g = p.add_argument_group(sec)
        for f in fields(defaults.section(sec)):
            g.add_argument(f"--{sec}-{f.name.replace('_', '-')}", dest=f"{sec}.{f.name}", metavar=f.type.upper())


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_ini(args.config) if args.config else ExperimentConfig()
    for key, val in vars(args).items():
        if "." in key and val is not None:
            sec, name = key.split(".", 1)
            cfg.set(sec, name, val)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poissonpnp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "simulate a Poisson observation"), ("sample", "run a sampler on simulated data")):
        _add_config_flags(sub.add_parser(name, help=help_))
    cp = sub.add_parser("compare", help="merge run reports into a comparison table")
    cp.add_argument("runs", nargs="+")
    cp.add_argument("--out", default="compare.csv")
    bp = sub.add_parser("bridge-check", help="exercise an external denoiser bridge")
    bp.add_argument("bridge_command")
    bp.add_argument("--epsilon", type=float, default=0.01)
    bp.add_argument("--shape", default="1,16,16")
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--expect", choices=["none", "identity", "gaussian"], default="none")
    bp.add_argument("--mean", type=float, default=0.0)
    bp.add_argument("--var", type=float, default=1.0)
    bp.add_argument("--timeout", type=float, default=10.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            cmd_simulate(config_from_args(args))
            return EXIT_OK
        if args.command == "sample":
            return cmd_sample(config_from_args(args))
        if args.command == "compare":
            rows = cmd_compare(args.runs, args.out)
            for r in rows:
                print(",".join(str(r[c]) for c in COMPARE_COLUMNS))
            return EXIT_OK
        shape = tuple(int(v) for v in args.shape.split(","))
        res = cmd_bridge_check(
            args.bridge_command, args.epsilon, shape, args.seed, args.expect, args.mean, args.var, args.timeout
        )
        for k, v in res.items():
            print(f"{k} = {v}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BridgeError as exc:
        print(f"bridge error: {exc}", file=sys.stderr)
        return EXIT_BRIDGE
    except ChainDivergence as exc:
        print(f"chain diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
