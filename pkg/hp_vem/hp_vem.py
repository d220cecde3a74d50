#!/usr/bin/env python3
import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict
from datetime import datetime, timezone

import argcomplete
import numpy as np
import scipy
from argcomplete.completers import ChoicesCompleter, FilesCompleter

from . import __version__
from .analysis import (STABILITY_SHAPES, benchmark_grad, benchmark_u, compare_fem, convergence_study,
                       decay_exponent, energy_error_pi, skeleton_l2_error, stability_csv,
                       stability_table, study_csv)
from .assemble import assign_degrees, solve_vem, write_solution
from .config import COMMANDS, SIGMA_TOKENS, build_config, config_hash, read_config_file
from .errors import ConfigError, HpVemError, InvalidDegree, InvalidParameter
from .fs_utils import write_text
from .inverse_lab import INVERSE_TESTS, inverse_lab_csv
from .inverse_lab import run_inverse_lab as run_lab
from .mesh import FAMILIES, FAMILY_ALIASES, build_graded_mesh, diagnose
from .mesh_io import mesh_to_xml, write_mesh
from .vem_local import STAB_H_CHOICES, StabilizationKind

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# errors that mean the request itself was invalid
VALIDATION_ERRORS = (ConfigError, InvalidParameter, InvalidDegree)

FAMILY_CHOICES = list(FAMILY_ALIASES) + list(FAMILIES)
STAB_CHOICES = [k.value for k in StabilizationKind] + ["boundary", "gll", "dofi"]


class RunRecorder:
    """Per-stage wall times and produced files, written to the run manifest."""

    def __init__(self):
        self.started = datetime.now(timezone.utc).isoformat()
        self.stages = {}
        self.files = []
        self.summary = {}

    @contextmanager
    def stage(self, name, index, total):
        logging.info(f"Step {index}/{total}: {name}")
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = time.perf_counter() - start


def _write_output(recorder, path_or_url, text):
    write_text(path_or_url, text)
    recorder.files.append(path_or_url)
    logging.info(f"wrote {path_or_url}")


def _write_manifest(config, chash, recorder):
    manifest = {
        "command": config.command,
        "config": asdict(config),
        "config_hash": chash,
        "hp_vem_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "started": recorder.started,
        "stages": recorder.stages,
        "files": recorder.files,
        "summary": recorder.summary,
    }
    write_text(config.out + ".manifest.json", json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n")


def _fit_summary(fit):
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared, "rate": fit.rate}


def run_mesh(config, chash, recorder):
    with recorder.stage("build mesh", 1, 2):
        mesh = build_graded_mesh(config.family, config.n, config.sigma)
        diagnostics = diagnose(mesh)
    recorder.summary = {"n_cells": mesh.n_cells, "n_vertices": len(mesh.vertices),
                        "diagnostics": asdict(diagnostics)}
    logging.info(f"{mesh.family} n={mesh.n}: {mesh.n_cells} cells, star ratio "
                 f"{diagnostics.min_star_radius_ratio:.4g}, conforming {diagnostics.conforming}")
    with recorder.stage("write mesh", 2, 2):
        write_mesh(mesh, config.out, chash)
        recorder.files.append(config.out)


def run_solve(config, chash, recorder):
    with recorder.stage("build mesh", 1, 3):
        mesh = build_graded_mesh(config.family, config.n, config.sigma)
        degrees = assign_degrees(mesh, config.degree_rule)
    with recorder.stage("assemble and solve", 2, 3):
        solution = solve_vem(mesh, degrees, config.stabilization, f=None, g=benchmark_u, jobs=config.jobs,
                             stab_h=config.stab_h)
    with recorder.stage("errors and output", 3, 3):
        err_energy = energy_error_pi(solution, benchmark_grad)
        err_skeleton = skeleton_l2_error(solution, benchmark_u)
        provenance = {"config_hash": chash,
                      "mesh_sha256": hashlib.sha256(mesh_to_xml(mesh)).hexdigest()}
        write_solution(solution, config.out, provenance)
        recorder.files.append(config.out)
    recorder.summary = {"n_dofs": int(solution.system.dof_map.n_free), "err_energy": err_energy,
                        "err_skeleton": err_skeleton}
    logging.info(f"relative energy error {err_energy:.4e}, skeleton L2 error {err_skeleton:.4e}")


def run_convergence(config, chash, recorder):
    with recorder.stage("convergence study", 1, 2):
        result = convergence_study(config.family, config.sigma, config.degree_rule, config.n_min,
                                   config.n_max, config.stabilization, config.jobs, config.stab_h)
    with recorder.stage("write csv", 2, 2):
        _write_output(recorder, config.out, study_csv(result.records, chash, config.timings))
    recorder.summary = {"fits": {k: _fit_summary(v) for k, v in result.fits.items()},
                        "failed_rows": [r.n for r in result.records if r.message],
                        "row_seconds": {str(r.n): r.seconds for r in result.records}}
    return EXIT_FAILURE if any(r.message for r in result.records) else EXIT_OK


def run_compare_fem(config, chash, recorder):
    with recorder.stage("FEM/VEM comparison", 1, 2):
        result = compare_fem(config.families, config.sigma, config.degree_rule, config.n_min,
                             config.n_max, config.stabilization, config.jobs, config.stab_h)
    with recorder.stage("write csv", 2, 2):
        _write_output(recorder, config.out, study_csv(result.records, chash, config.timings))
    recorder.summary = {"fits": {k: _fit_summary(v) for k, v in result.fits.items()},
                        "failed_rows": [f"{r.family}:{r.n}" for r in result.records if r.message]}
    return EXIT_FAILURE if any(r.message for r in result.records) else EXIT_OK


def run_stability_table(config, chash, recorder):
    with recorder.stage("generalized eigenvalues", 1, 2):
        reports = stability_table(config.shape, config.p_values, config.stabilization,
                                  config.oracle_level, config.strict, config.jobs, config.stab_h)
    with recorder.stage("write csv", 2, 2):
        _write_output(recorder, config.out, stability_csv(reports, chash))
    recorder.summary = {"lambda_min_exponent": decay_exponent(reports),
                        "unconverged": {str(r.p): r.oracle_change for r in reports if not r.converged}}


def run_inverse_lab(config, chash, recorder):
    with recorder.stage(f"inverse lab {config.test}", 1, 2):
        records = run_lab(config.test, config.p_values, samples=config.samples, seed=config.seed,
                          shape=config.shape, alpha=config.alpha, beta=config.beta)
    with recorder.stage("write csv", 2, 2):
        _write_output(recorder, config.out, inverse_lab_csv(records, chash))
    recorder.summary = {"fitted_exponent": records[0].fitted_exponent if records else None,
                        "sampled": {str(r.p): r.sampled for r in records if config.test == "gll"},
                        "bound_ok": all(r.bound_ok for r in records)}


RUNNERS = {
    "mesh": run_mesh,
    "solve": run_solve,
    "convergence": run_convergence,
    "compare-fem": run_compare_fem,
    "stability-table": run_stability_table,
    "inverse-lab": run_inverse_lab,
}


def _overrides(args):
    keys = ("family", "families", "sigma", "n", "n_min", "n_max", "degrees", "stab_kind", "stab_h",
            "oracle_level", "strict", "shape", "p_min", "p_max", "test", "alpha", "beta", "samples", "seed", "out",
            "jobs", "timings")
    values = {k: getattr(args, k, None) for k in keys}
    # store_true flags only override when set
    for flag in ("strict", "timings"):
        if not values[flag]:
            values[flag] = None
    return values


def execute(args):
    """Run one parsed command and return its exit code."""
    try:
        file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
        config = build_config(args.command, file_values, _overrides(args))
    except VALIDATION_ERRORS as e:
        logging.error(f"invalid configuration: {e}")
        return EXIT_USAGE
    chash = config_hash(config)
    logging.info(f"{config.command}: config hash {chash}")
    recorder = RunRecorder()
    try:
        code = RUNNERS[config.command](config, chash, recorder) or EXIT_OK
    except VALIDATION_ERRORS as e:
        logging.error(f"invalid parameter: {e}")
        return EXIT_USAGE
    except HpVemError as e:
        logging.error(f"{config.command} failed: {e}")
        code = EXIT_FAILURE
    _write_manifest(config, chash, recorder)
    return code


def _add_logging_arguments(parser):
    """Add mutually exclusive debug/verbose/quiet logging options to a parser."""
    group = parser.add_mutually_exclusive_group()
    group.add_argument('-d', '--debug', action='store_true', help='Enable debug output (log level DEBUG)')
    group.add_argument('-v', '--verbose', action='store_true', help='Enable verbose output (log level INFO)')
    group.add_argument('-q', '--quiet', action='store_true', help='Reduce output to critical messages (log level CRITICAL)')


def _configure_logging(args):
    """Configure the root logger based on parsed CLI arguments."""
    level = logging.WARNING
    if getattr(args, 'debug', False):
        level = logging.DEBUG
    elif getattr(args, 'verbose', False):
        level = logging.INFO
    elif getattr(args, 'quiet', False):
        level = logging.CRITICAL

    root_logger = logging.getLogger()
    if root_logger.handlers:
        root_logger.setLevel(level)
    else:
        logging.basicConfig(level=level)


def _set_completer(parser, option_flag, completer):
    """Attach an argcomplete completer to the option if present."""
    for action in getattr(parser, "_actions", []):
        if option_flag in getattr(action, "option_strings", []):
            action.completer = completer
            break


def _add_common_arguments(parser):
    _add_logging_arguments(parser)
    parser.add_argument('--config', help='Flat key = value config file; flags override its values')
    parser.add_argument('--out', help='Output file, local path or s3:// URL')
    parser.add_argument('--jobs', type=int, help='Worker processes (default: $HP_VEM_JOBS or CPU count)')
    _set_completer(parser, '--config', FilesCompleter())


def _add_mesh_arguments(parser, with_n=True):
    parser.add_argument('--family', help='Mesh family: a|b|c|d or its long name')
    parser.add_argument('--sigma', help=f"Grading parameter in (0, 1) or one of {', '.join(SIGMA_TOKENS)}")
    if with_n:
        parser.add_argument('--n', type=int, help='Number of refinement layers')
    _set_completer(parser, '--family', ChoicesCompleter(FAMILY_CHOICES))
    _set_completer(parser, '--sigma', ChoicesCompleter(list(SIGMA_TOKENS)))


def _add_solver_arguments(parser):
    parser.add_argument('--degrees', help='Degree rule: uniform:K, layered:MU or uniform:n+1')
    parser.add_argument('--stab', dest='stab_kind', help='Stabilization: ' + ', '.join(STAB_CHOICES))
    _set_completer(parser, '--stab', ChoicesCompleter(STAB_CHOICES))
    _add_stab_h_argument(parser)


def _add_stab_h_argument(parser):
    parser.add_argument('--stab-h', dest='stab_h',
                        help='Length h of the stabilization weights: ' + ', '.join(STAB_H_CHOICES))
    _set_completer(parser, '--stab-h', ChoicesCompleter(list(STAB_H_CHOICES)))


def _add_range_arguments(parser):
    parser.add_argument('--nmin', dest='n_min', type=int, help='First n of the sweep')
    parser.add_argument('--nmax', dest='n_max', type=int, help='Last n of the sweep')
    parser.add_argument('--timings', action='store_true', help='Fill the seconds column of the CSV')


def _add_degree_range_arguments(parser):
    parser.add_argument('--pmin', dest='p_min', type=int, help='First degree of the sweep')
    parser.add_argument('--pmax', dest='p_max', type=int, help='Last degree of the sweep')


def build_parser():
    parser = argparse.ArgumentParser(prog='hp-vem', description='hp virtual element studies on graded L-shape meshes')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    _add_logging_arguments(parser)
    subparsers = parser.add_subparsers(dest='command', help='Commands')
    subparsers.required = True

    mesh_parser = subparsers.add_parser('mesh', help='Generate a graded mesh and write it as XML')
    _add_common_arguments(mesh_parser)
    _add_mesh_arguments(mesh_parser)

    solve_parser = subparsers.add_parser('solve', help='Solve the L-shape benchmark on one mesh')
    _add_common_arguments(solve_parser)
    _add_mesh_arguments(solve_parser)
    _add_solver_arguments(solve_parser)

    convergence_parser = subparsers.add_parser('convergence', help='Energy and skeleton errors for a range of n')
    _add_common_arguments(convergence_parser)
    _add_mesh_arguments(convergence_parser, with_n=False)
    _add_solver_arguments(convergence_parser)
    _add_range_arguments(convergence_parser)

    compare_parser = subparsers.add_parser('compare-fem', help='Skeleton errors of VEM families against hp-FEM')
    _add_common_arguments(compare_parser)
    compare_parser.add_argument('--families', help='Comma separated polygonal families (default a,b,c)')
    compare_parser.add_argument('--sigma', help=f"Grading parameter in (0, 1) or one of {', '.join(SIGMA_TOKENS)}")
    _add_solver_arguments(compare_parser)
    _add_range_arguments(compare_parser)

    stability_parser = subparsers.add_parser('stability-table', help='Local generalized eigenvalue spectra')
    _add_common_arguments(stability_parser)
    stability_parser.add_argument('--shape', help='Cell shape: ' + ', '.join(STABILITY_SHAPES))
    stability_parser.add_argument('--stab', dest='stab_kind', help='Stabilization: ' + ', '.join(STAB_CHOICES))
    _add_stab_h_argument(stability_parser)
    stability_parser.add_argument('--oracle-level', dest='oracle_level', type=int,
                                  help='Fine mesh refinement level of the reference solver (default: by p)')
    stability_parser.add_argument('--strict', action='store_true',
                                  help='Fail when the reference solver does not self-converge')
    _add_degree_range_arguments(stability_parser)
    _set_completer(stability_parser, '--shape', ChoicesCompleter(list(STABILITY_SHAPES)))

    inverse_parser = subparsers.add_parser('inverse-lab', help='Extremal constants of polynomial inverse estimates')
    _add_common_arguments(inverse_parser)
    inverse_parser.add_argument('--test', help='Lab: ' + ', '.join(INVERSE_TESTS))
    inverse_parser.add_argument('--samples', type=int, help='Random polynomials per degree (gll, hminus1)')
    inverse_parser.add_argument('--seed', type=int, help='Seed of the randomized labs')
    inverse_parser.add_argument('--alpha', type=float, help='Weight exponent of the numerator (weighted)')
    inverse_parser.add_argument('--beta', type=float, help='Weight exponent of the denominator (weighted)')
    inverse_parser.add_argument('--shape', help='Cell of the hminus1 lab: ' + ', '.join(STABILITY_SHAPES))
    _add_degree_range_arguments(inverse_parser)
    _set_completer(inverse_parser, '--test', ChoicesCompleter(list(INVERSE_TESTS)))

    for name in COMMANDS:
        subparsers.choices[name].set_defaults(func=execute)
    return parser


def run(argv=None):
    """Parse the command line, run the command and return the exit code."""
    parser = build_parser()
    argcomplete.autocomplete(parser)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    _configure_logging(args)
    try:
        return args.func(args)
    except Exception:
        logging.exception(f"{args.command} failed")
        return EXIT_FAILURE


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
