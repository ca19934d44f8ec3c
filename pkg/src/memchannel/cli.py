"""Command-line entry point: ``python -m memchannel --config run.yaml``.

Exit codes: 0 success, 1 bad configuration, 2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .hierarchy import EXCITED, SIGMA_MINUS
from .montecarlo import DensitySeries, EnsembleError, noise_grid, observable, run_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("memchannel")

CSV_COLUMNS = ("time", "excited_population", "excited_population_stderr", "re_sigma_minus",
               "re_sigma_minus_stderr", "im_sigma_minus", "im_sigma_minus_stderr", "trace",
               "trace_stderr", "n_degenerate")

_RE_S = (SIGMA_MINUS + SIGMA_MINUS.conj().T) / 2
_IM_S = (SIGMA_MINUS - SIGMA_MINUS.conj().T) / 2j


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(series: DensitySeries, path: Path) -> None:
    cols = [observable(series, EXCITED), observable(series, _RE_S), observable(series, _IM_S),
            observable(series, np.eye(series.rho.shape[1]))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, t in enumerate(series.times):
            row = [t]
            for val, err in cols:
                row += [val[i], err[i]]
            row.append(series.n_degenerate)
            w.writerow([_fmt(x) for x in row])


def manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


def write_manifest(config: RunConfig, path: Path, status: str, extra: dict | None = None) -> None:
    ng = noise_grid(config)
    doc = {
        "version": __version__,
        "status": status,
        "config": config.to_dict(),
        "kernel_scale_resolved": config.resolved_kernel_scale,
        "seeds": [config.base_seed, config.base_seed + config.n_traj - 1],
        "noise_grid": {"omega_min": ng.omega_min, "omega_max": ng.omega_max,
                       "n_points": ng.n_points},
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memchannel",
                                description="Monte Carlo delay-time hierarchy for a driven two-level system.")
    p.add_argument("--config", help="YAML run configuration (default: benchmark)")
    p.add_argument("--seed", type=int, dest="base_seed", help="base seed (trajectory i uses seed+i)")
    p.add_argument("--trajectories", type=int, dest="n_traj")
    p.add_argument("--solver", choices=("hierarchy", "modes"))
    p.add_argument("--max-quanta", type=int, dest="max_quanta", choices=(0, 1, 2))
    p.add_argument("--dt", type=float)
    p.add_argument("--t-total", type=float, dest="t_total")
    p.add_argument("--output", help="CSV output path")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve_config(args) -> RunConfig:
    config = parse_config(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k) for k in ("base_seed", "n_traj", "solver", "max_quanta", "dt",
                                               "t_total", "output")
                 if getattr(args, k) is not None}
    return config.replace(**overrides) if overrides else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        out = Path(config.output)
        noise_grid(config)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    mpath = manifest_path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_manifest(config, mpath, "started")
    except OSError as exc:
        print(f"configuration error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %d trajectories with the %s solver", config.n_traj, config.solver)
    try:
        with np.errstate(over="raise", invalid="ignore"):
            series = run_ensemble(config, workers=max(1, args.workers))
        if not np.all(np.isfinite(series.rho)):
            raise EnsembleError("non-finite density matrix")
        write_csv(series, out)
    except (EnsembleError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        write_manifest(config, mpath, "failed", {"error": str(exc)})
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_manifest(config, mpath, "completed", {"n_degenerate": series.n_degenerate,
                                                "n_rows": int(len(series.times))})
    log.info("wrote %s", out)
    return EXIT_OK


def expected_rows(t_total: float, dt: float, output_stride: int) -> int:
    n_steps = int(round(t_total / dt))
    return math.ceil(n_steps / output_stride) + 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
