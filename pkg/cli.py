"""
Vortex bubble lab - CLI commands

Command-line tools for running scenarios and the individual analysis stages.
"""
import json
import logging
import os
from dataclasses import replace

import click
import numpy as np
import pandas as pd

import app_config
from bubble_analysis import detect_atoms
from bubble_tree import build_tree, tree_to_dot, tree_to_json, verify_conservation
from errors import DataError, PreconditionError, TheoryViolationError, VortexLabError
from export_utils import (emit_outputs, ensure_dir, export_schemas, export_table, read_field_dump,
                          write_field_dump, write_json)
from gauge_holonomy import (ConnectionSample, classify_condition, conic_model, gauge_invariance_defect,
                            holonomy_profile, log_radii)
from holomorphic_data import MapFamily, family_limit
from kazdan_warner import KWProblem, adiabatic_sweep, build_background, geometric_schedule, solve_kw
from scenario import kw_map, load_scenario, run_scenario
from sphere_geometry import build_grid

logger = logging.getLogger(__name__)


def _scenario(ctx, path, tol=None):
    sc = load_scenario(path, ctx.obj["threads"])
    if tol is not None:
        sc = replace(sc, kw_tol=tol)
    return sc


def _out_dir(sc, out):
    return ensure_dir(out or os.path.join(app_config.OUTPUT_DIR, sc.name))


@click.group()
@click.option('--threads', type=int, default=app_config.THREADS, show_default=True,
              help='Worker threads for parallel stages.')
@click.option('--seed', type=int, default=0, help='Seed for randomized checks; never alters scenario results.')
@click.pass_context
def cli(ctx, threads, seed):
    """Abelian vortex and bubble-tree lab on the two-sphere."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = max(1, threads)
    ctx.obj["seed"] = seed
    ctx.obj["rng"] = np.random.default_rng(seed)
    logger.debug(f"CLI started with {threads} threads, seed {seed}")


@cli.command('run')
@click.argument('scenario_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out', type=click.Path(file_okay=False), help='Output directory.')
@click.option('--excel', is_flag=True, help='Also write tables as .xlsx.')
@click.option('--tol', type=float, help='Override the KW Newton tolerance.')
@click.pass_context
def run_command(ctx, scenario_path, out, excel, tol):
    """Run every stage of a scenario and write all artifacts."""
    try:
        sc = _scenario(ctx, scenario_path, tol)
        out_dir = _out_dir(sc, out)
        report = run_scenario(sc)
        emit_outputs(report, out_dir, excel)
        for name, info in report.stages.items():
            click.echo(f"{name:10s} {info['status']}" + (f"  ({info['message']})" if 'message' in info else ""))
        if report.tree is not None:
            click.echo(f"Tree: total energy {report.tree.total_energy}, depth {report.tree.depth}")
        click.echo(f"Outputs written to {out_dir}")
        ctx.exit(report.exit_code)
    except VortexLabError as e:
        click.echo(f"Error: {str(e)}", err=True)
        ctx.exit(e.exit_code)


@cli.command('kw')
@click.argument('scenario_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--s', 's', type=float, help='Solve at this single adiabatic constant.')
@click.option('--s0', type=float, help='First s of a geometric schedule (default: the scenario).')
@click.option('--ratio', type=float, help='Schedule ratio (default: the scenario).')
@click.option('--count', type=int, help='Schedule length (default: the scenario).')
@click.option('--out', 'out', type=click.Path(file_okay=False), help='Output directory.')
@click.option('--excel', is_flag=True, help='Also write the table as .xlsx.')
@click.option('--tol', type=float, help='Override the KW Newton tolerance.')
@click.pass_context
def kw_command(ctx, scenario_path, s, s0, ratio, count, out, excel, tol):
    """Solve the Kazdan-Warner equation for the scenario's map at one s or along a schedule."""
    try:
        if s is not None and any(v is not None for v in (s0, ratio, count)):
            raise click.UsageError("give either --s or schedule flags, not both")
        sc = _scenario(ctx, scenario_path, tol)
        if s is not None:
            schedule = np.array([s])
        else:
            ratio = sc.ratio if ratio is None else ratio
            count = sc.count if count is None else count
            if ratio <= 1 or count < 1:
                raise PreconditionError(f"schedule needs ratio > 1 and count >= 1, got {ratio} and {count}")
            schedule = geometric_schedule(sc.s0 if s0 is None else s0, ratio, count)
        fam = MapFamily.from_spec(sc.family, sc.schedule)
        f = kw_map(sc, fam)
        grid = build_grid(sc.L_max)
        bg = build_background(f, grid)
        out_dir = _out_dir(sc, out)
        phi_inf = -np.log(-bg.h.values) if np.max(bg.h.values) < 0 else None
        rows = []
        for value in schedule:
            sol = solve_kw(KWProblem(grid, bg.h, f.r, float(value), sc.kw_tol, sc.kw_max_iter))
            path = write_field_dump(sol.phi, os.path.join(out_dir, "fields"), f"phi_s{value:g}")
            sup_error = float(np.max(np.abs(sol.phi.values - phi_inf))) if phi_inf is not None else np.nan
            rows.append({"s": float(value), "residual": sol.residual, "sup_error": sup_error,
                         "iterations": sol.iterations})
            click.echo(f"s = {value:g}: residual {sol.residual:.3e} after {sol.iterations} iterations")
            click.echo(f"phi written to {path}")
        frame = pd.DataFrame(rows, columns=["s", "residual", "sup_error", "iterations"])
        export_table(frame, os.path.join(out_dir, "tables"), "kw", excel)
    except VortexLabError as e:
        click.echo(f"Error: {str(e)}", err=True)
        ctx.exit(e.exit_code)


@cli.command('sweep')
@click.argument('scenario_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out', type=click.Path(file_okay=False), help='Output directory.')
@click.option('--excel', is_flag=True, help='Also write the table as .xlsx.')
@click.option('--tol', type=float, help='Override the KW Newton tolerance.')
@click.pass_context
def sweep_command(ctx, scenario_path, out, excel, tol):
    """Adiabatic sweep of the KW solution along the scenario schedule."""
    try:
        sc = _scenario(ctx, scenario_path, tol)
        fam = MapFamily.from_spec(sc.family, sc.schedule)
        sweep = adiabatic_sweep(kw_map(sc, fam), sc.schedule, build_grid(sc.L_max), sc.kw_tol,
                                sc.kw_max_iter, sc.warm_start, ctx.obj["threads"])
        export_table(sweep.to_frame(), os.path.join(_out_dir(sc, out), "tables"), "kw_sweep", excel)
        click.echo(sweep.to_frame().to_string(index=False))
        click.echo(f"log-log decay slope {sweep.decay_slope():.4f}")
    except VortexLabError as e:
        click.echo(f"Error: {str(e)}", err=True)
        ctx.exit(e.exit_code)


@cli.command('atoms')
@click.argument('scenario_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out', type=click.Path(file_okay=False), help='Output directory.')
@click.pass_context
def atoms_command(ctx, scenario_path, out):
    """Energy atoms of the scenario family."""
    try:
        sc = _scenario(ctx, scenario_path)
        fam = MapFamily.from_spec(sc.family, sc.schedule)
        lim = family_limit(fam)
        atoms = detect_atoms(fam, sc.tree.eps0, sc.tree.m_levels, limit=lim)
        doc = {"E": lim.E.to_json(), "f0": lim.f0.to_json(), "atoms": [a.to_json() for a in atoms]}
        path = write_json(doc, os.path.join(_out_dir(sc, out), "atoms.json"), "atoms")
        for a in atoms:
            click.echo(f"atom at {a.to_json()['point']}: mass {a.mass:.6f}")
        click.echo(f"Atoms written to {path}")
    except VortexLabError as e:
        click.echo(f"Error: {str(e)}", err=True)
        ctx.exit(e.exit_code)


@cli.command('tree')
@click.argument('scenario_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out', type=click.Path(file_okay=False), help='Output directory.')
@click.pass_context
def tree_command(ctx, scenario_path, out):
    """Build the bubble tree and check energy conservation."""
    try:
        sc = _scenario(ctx, scenario_path)
        fam = MapFamily.from_spec(sc.family, sc.schedule)
        tree = build_tree(fam, sc.tree)
        out_dir = _out_dir(sc, out)
        write_json(tree_to_json(tree), os.path.join(out_dir, "tree.json"), "tree")
        with open(os.path.join(out_dir, "tree.dot"), "w", encoding="utf-8") as fh:
            fh.write(tree_to_dot(tree))
        report = verify_conservation(tree, sc.r)
        click.echo(f"Tree: total energy {tree.total_energy}, depth {tree.depth}")
        for fail in report.failures:
            click.echo(f"  {fail['path']}: {fail['rule']}: {fail['message']}")
        if not report.passed:
            ctx.exit(TheoryViolationError.exit_code)
    except VortexLabError as e:
        click.echo(f"Error: {str(e)}", err=True)
        ctx.exit(e.exit_code)


@cli.command('holonomy')
@click.argument('dump', required=False, type=click.Path(exists=True, dir_okay=False))
@click.option('--beta', type=float, help='Classify the synthetic conic model of this angle.')
@click.option('--r-min', type=float, default=1e-3, show_default=True)
@click.option('--r-max', type=float, default=1e-1, show_default=True)
@click.option('--n-radii', type=int, default=8, show_default=True)
@click.option('--n-theta', type=int, default=64, show_default=True)
@click.option('--gauge-checks', type=int, default=3, show_default=True,
              help='Random gauges (drawn from --seed) under which the holonomy must not change.')
@click.option('--out', 'out', type=click.Path(dir_okay=False), help='Write the condition report here.')
@click.pass_context
def holonomy_command(ctx, dump, beta, r_min, r_max, n_radii, n_theta, gauge_checks, out):
    """Condition H / H_beta of a connection dump or a conic model."""
    try:
        if dump is not None:
            sample = read_field_dump(dump)
            if not isinstance(sample, ConnectionSample):
                raise DataError(f"{dump} is a field dump, not a connection")
        elif beta is not None:
            sample = conic_model(beta, log_radii(r_min, r_max, n_radii), n_theta)
        else:
            raise click.UsageError("give a connection dump or --beta")
        if gauge_checks > 0:
            defect = gauge_invariance_defect(sample, ctx.obj["rng"], gauge_checks)
            click.echo(f"gauge invariance: max |dg| {defect:.2e} over {gauge_checks} random gauges "
                       f"(seed {ctx.obj['seed']})")
            if defect > 1e-8:
                raise TheoryViolationError(f"holonomy changed by {defect:.2e} under a single-valued gauge")
        report = classify_condition(holonomy_profile(sample), sample)
        if out:
            write_json(report.to_json(), out, "condition")
        click.echo(json.dumps(report.to_json(), sort_keys=True))
    except VortexLabError as e:
        click.echo(f"Error: {str(e)}", err=True)
        ctx.exit(e.exit_code)


@cli.command('schema')
@click.option('--out', 'out', type=click.Path(file_okay=False), default='schemas_out', show_default=True)
def schema_command(out):
    """Write the JSON schemas of every output document."""
    for path in export_schemas(out):
        click.echo(path)
