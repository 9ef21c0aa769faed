"""Command-line entry point: ``manifold-mls <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 estimator failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .errors import DataError, EstimatorError, IoError, ManifoldMLSError
from .geodesic import WalkConfig, geodesic_walk
from .harness import (manifold_from_options, run_contraction_experiment, run_convergence_experiment,
                      spec_from_config)
from .step1 import Step1Config
from .step2 import Step2Config, project
from .synthetic import sample_tubular

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATOR = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_estimator_args(p, need_dim=True):
    p.add_argument("--cloud", required=True, help="point cloud file")
    p.add_argument("--format", choices=io.FORMATS, help="cloud format (default: from the extension)")
    p.add_argument("--sigma", type=float, required=True, help="noise radius")
    p.add_argument("--tau", type=float, required=True, help="reach of the manifold")
    p.add_argument("--dim", type=int, required=need_dim, default=1, help="intrinsic dimension d")
    p.add_argument("--k", type=int, default=2, help="polynomial order (fit degree k-1)")
    p.add_argument("--bandwidth-scale", type=float, default=4.0)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--mom-blocks", type=int, default=None, help="median-of-means blocks")


def _add_manifold_args(p, required=True):
    p.add_argument("--manifold", choices=("circle", "sphere", "torus"), required=required)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--major", type=float, default=None)
    p.add_argument("--minor", type=float, default=None)
    p.add_argument("--sphere-dim", type=int, default=None, help="intrinsic dimension of a sphere")
    p.add_argument("--ambient-dim", type=int, default=None)
    p.add_argument("--manifold-seed", type=int, default=0, help="seed of the random embedding")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="manifold-mls", description="Manifold estimation from noisy samples.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="project query points onto the estimated manifold")
    _add_estimator_args(p)
    p.add_argument("--query", action="append", required=True, help="comma-separated point; repeatable")
    p.add_argument("--dump-poly", action="store_true", help="include the last fitted polynomial")
    p.add_argument("--truth", choices=("circle", "sphere", "torus"), default=None,
                   help="report errors against this analytic manifold")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--major", type=float, default=None)
    p.add_argument("--minor", type=float, default=None)
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")

    p = sub.add_parser("denoise", help="project every sample and save the result")
    _add_estimator_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=io.FORMATS, default=None)

    p = sub.add_parser("geodesic", help="walk along the estimated manifold")
    _add_estimator_args(p)
    p.add_argument("--start", required=True)
    p.add_argument("--direction", required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--warm-start", action="store_true", help="reuse the previous tangent instead of step 1")
    p.add_argument("--out", required=True, help="trajectory CSV")
    p.add_argument("--frames-dir", default=None, help="write one frame file per step here")

    p = sub.add_parser("rate", help="run a convergence-rate experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-contraction", default=None, help="also run the contraction experiment")

    p = sub.add_parser("synth", help="generate a noisy tubular sample")
    _add_manifold_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--feet-out", default=None, help="also save the ground-truth feet")
    p.add_argument("--format", choices=io.FORMATS, default=None)
    p.add_argument("--method", choices=("auto", "box", "fiber"), default="auto")
    return ap


def _configs(a):
    cfg1 = Step1Config(a.sigma, a.tau, a.dim)
    cfg2 = Step2Config(a.sigma, a.tau, a.k, a.bandwidth_scale, max_iters=a.max_iters, mom_blocks=a.mom_blocks)
    return cfg1, cfg2


def _write_text(path, text):
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _cmd_project(a) -> int:
    cloud = io.load_cloud(a.cloud, a.format)
    cfg1, cfg2 = _configs(a)
    truth = None
    if a.truth:
        truth = manifold_from_options(a.truth, a.radius, a.major, a.minor, ambient_dim=cloud.dim)
    results, failed = [], 0
    for qtext in a.query:
        q = io.parse_vector(qtext)
        entry = {"query": [float(v) for v in q]}
        try:
            res = project(cloud, q, cfg1, cfg2)
            entry.update(res.to_dict(truth, a.dump_poly))
            failed += res.failed
        except EstimatorError as exc:
            entry.update({"error": str(exc), "cause": exc.cause})
            failed += 1
        results.append(entry)
    text = json.dumps({"results": results}, indent=2) + "\n"
    if a.out:
        _write_text(a.out, text)
    else:
        sys.stdout.write(text)
    if failed:
        print(f"{failed} projection(s) failed", file=sys.stderr)
        return EXIT_ESTIMATOR
    return EXIT_OK


def _cmd_denoise(a) -> int:
    cloud = io.load_cloud(a.cloud, a.format)
    cfg1, cfg2 = _configs(a)
    out = np.array(cloud.points)
    failed = 0
    for i, r in enumerate(cloud.points):
        try:
            res = project(cloud, r, cfg1, cfg2)
        except EstimatorError:
            failed += 1
            continue
        if res.failed:
            failed += 1
            continue
        out[i] = res.p_hat
    io.save_cloud(a.out, out, a.out_format or io.guess_format(a.out))
    if failed:
        print(f"{failed} of {cloud.n} samples could not be projected and were kept as is", file=sys.stderr)
    return EXIT_OK


def _cmd_geodesic(a) -> int:
    cloud = io.load_cloud(a.cloud, a.format)
    cfg1, cfg2 = _configs(a)
    walk = WalkConfig(a.step, a.steps, cfg1, cfg2, a.warm_start)
    traj = geodesic_walk(cloud, io.parse_vector(a.start), io.parse_vector(a.direction), walk)
    _write_text(a.out, traj.to_csv())
    if a.frames_dir:
        os.makedirs(a.frames_dir, exist_ok=True)
        for i in range(len(traj)):
            _write_text(os.path.join(a.frames_dir, f"frame_{i:04d}.csv"),
                        traj.frame_csv(i, cloud, cfg1.roi_radius))
    if traj.cause is not None:
        print(f"walk stopped at step {traj.failed_step}: {traj.cause}", file=sys.stderr)
        return EXIT_ESTIMATOR
    return EXIT_OK


def _cmd_rate(a) -> int:
    if not os.path.isfile(a.config):
        raise UsageError(f"usage: manifold-mls rate --config FILE --out-json FILE --out-csv FILE\n"
                         f"config file not found: {a.config}")
    spec = spec_from_config(io.read_config(a.config))
    report = run_convergence_experiment(spec)
    _write_text(a.out_json, report.to_json())
    _write_text(a.out_csv, report.to_csv())
    if a.out_contraction:
        if "contraction_ratio" not in spec.metrics:
            spec = replace(spec, metrics=spec.metrics + ("contraction_ratio",))
        _write_text(a.out_contraction, run_contraction_experiment(spec).to_json())
    return EXIT_OK


def _cmd_synth(a) -> int:
    spec = manifold_from_options(a.manifold, a.radius, a.major, a.minor, a.sphere_dim, a.ambient_dim,
                                 a.manifold_seed)
    sample = sample_tubular(spec, a.n, a.sigma, a.seed, a.method)
    fmt = a.format or io.guess_format(a.out)
    sample.save(a.out, a.feet_out, fmt)
    return EXIT_OK


_COMMANDS = {"project": _cmd_project, "denoise": _cmd_denoise, "geodesic": _cmd_geodesic,
             "rate": _cmd_rate, "synth": _cmd_synth}


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _COMMANDS[a.command](a)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimatorError as exc:
        print(f"estimator failure ({exc.cause}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except (ManifoldMLSError, ValueError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
