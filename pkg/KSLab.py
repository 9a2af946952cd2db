#!/usr/bin/env python3
r"""
 _  __ ____    _          _
| |/ // ___|  | |    __ _| |__
| ' / \___ \  | |   / _` | '_ \
| . \  ___) | | |__| (_| | |_) |
|_|\_\|____/  |_____\__,_|_.__/

KS Lab - Main CLI Entry Point
Keller-Segel particle simulator and diagnostics lab
"""

import functools
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import click
from rich.table import Table

from kslab import __version__
from kslab.core import KSLabError
from kslab.core.acceptance import VERIFICATION_FILE, verify as run_verification
from kslab.core.bessel import BesselConfig, BesselError, simulate_bessel_batch, zero_hitting_fraction
from kslab.core.config import Config, ConfigError, n0_floor
from kslab.core.diagnostics import critical_theta, dimension_table, phase
from kslab.core.initializers import InitialLawError
from kslab.core.registry import REGISTRY_FILE, Registry
from kslab.core.runner import SweepSpec, run_cell, run_sweep, write_json
from kslab.ui.i18n import get_i18n
from kslab.ui.logger import (
    setup_logging, get_logger, console,
    print_header, print_success, print_error, print_warning, print_info
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3
EXIT_INTERRUPTED = 130

VALIDATION_ERRORS = (ConfigError, InitialLawError, BesselError)

logger = get_logger(__name__)


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the documented exit status"""
    if isinstance(error, KeyboardInterrupt):
        return EXIT_INTERRUPTED
    if isinstance(error, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def guarded(command):
    """Report library errors and exit with the mapped status"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        i18n = get_i18n()
        try:
            return command(*args, **kwargs)
        except VALIDATION_ERRORS as e:
            print_error(i18n.get("error.validation", error=str(e)))
            sys.exit(EXIT_VALIDATION)
        except (KSLabError, OSError) as e:
            print_error(i18n.get("error.runtime", error=str(e)))
            sys.exit(EXIT_RUNTIME)
    return wrapper


class KSLabApp:
    """Loads configuration and sets up language and logging for one command"""

    def __init__(self, config_file: Optional[Path], overrides: Sequence[str] = (), verbosity: Optional[str] = None):
        self.config_manager = Config(config_file)
        self.config = self.config_manager.load(overrides)
        self.i18n = get_i18n()
        self.i18n.set_language(self.config_manager.get("ui", "language", "en"))

        log_dir = self.config_manager.get_logs_dir() if self.config_manager.get("logging", "enabled", True) else None
        if verbosity is None:
            verbosity = self.config_manager.get("ui", "verbosity", "normal")
        setup_logging(log_dir, verbosity)

    def sim_config(self):
        return self.config_manager.sim_config()


def _overrides(overrides: Sequence[str], workers: Optional[int], output: Optional[Path]) -> list:
    out = list(overrides)
    if workers is not None:
        out.append(f"run.workers={int(workers)}")
    if output is not None:
        out.append(f"run.output_dir='{output}'")
    return out


def _estimate_table(report, title: str) -> Table:
    table = Table(title=title)
    table.add_column("Diagnostic", style="cyan")
    table.add_column("Value", style="green", justify="right")
    table.add_column("Stderr", justify="right")
    table.add_column("Target", style="yellow", justify="right")
    table.add_column("n", justify="right")
    for name, est in report.estimates.items():
        if name == "phase":
            table.add_row(name, str(est["phase"]), "", f"θc={est['critical_theta']:.4g}",
                          f"{est['blowups']} blow-ups")
            continue
        target = est.get("target")
        table.add_row(
            name,
            f"{est['value']:.6g}",
            f"{est.get('stderr', 0.0):.3g}",
            "" if target is None else f"{target:.6g}",
            str(est.get("n", "")),
        )
    for name, reason in report.failures.items():
        table.add_row(name, "[red]n/a[/red]", "", "", reason)
    return table


# CLI Commands

@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Show verbose output (INFO level)")
@click.option("--quiet", "-q", is_flag=True, help="Show only errors")
@click.option("--debug", is_flag=True, help="Show debug output")
@click.pass_context
def cli(ctx, verbose, quiet, debug):
    """KS Lab - simulate the N-particle Keller-Segel system and test its identities"""
    ctx.ensure_object(dict)

    if debug:
        verbosity = "debug"
    elif quiet:
        verbosity = "quiet"
    elif verbose:
        verbosity = "verbose"
    else:
        verbosity = None
    ctx.obj["verbosity"] = verbosity


config_argument = click.argument(
    "config_file", required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="Override a config key by dotted path (repeatable)")
workers_option = click.option("--workers", "-w", type=click.IntRange(min=1), help="Worker processes")
output_option = click.option("--output", "-o", type=click.Path(file_okay=False, path_type=Path),
                             help="Output directory")
progress_option = click.option("--no-progress", is_flag=True, help="Hide the progress bar")


@cli.command()
@config_argument
@set_option
@workers_option
@output_option
@progress_option
@click.pass_context
@guarded
def run(ctx, config_file, overrides, workers, output, no_progress):
    """Simulate all replicas of one configuration and write its report"""
    app = KSLabApp(config_file, _overrides(overrides, workers, output), ctx.obj.get("verbosity"))
    config = app.sim_config()
    print_header(app.i18n.get("cli.welcome", version=__version__))

    with Registry(config.output_dir / REGISTRY_FILE) as registry:
        registry.add_cell(0, config.theta, config.n, config.output_dir)
        result = run_cell(config, 0, registry, show_progress=not no_progress)

    console.print(_estimate_table(result.report, f"θ={config.theta:g}, N={config.n}, {config.replicas} replicas"))
    print_success(app.i18n.get("cli.run_done", path=str(result.directory)))


@cli.command()
@config_argument
@set_option
@workers_option
@output_option
@progress_option
@click.pass_context
@guarded
def sweep(ctx, config_file, overrides, workers, output, no_progress):
    """Run every (theta, N) cell of the [sweep] grids and aggregate across cells"""
    app = KSLabApp(config_file, _overrides(overrides, workers, output), ctx.obj.get("verbosity"))
    template = app.sim_config()
    spec = SweepSpec.from_config(app.config, template)
    print_header(app.i18n.get("cli.welcome", version=__version__))

    result = run_sweep(spec, show_progress=not no_progress)

    table = Table(title="Sweep cells")
    table.add_column("Cell", justify="right")
    table.add_column("θ", justify="right")
    table.add_column("N", justify="right")
    table.add_column("Status")
    for cell in result.cells:
        status = "[green]done[/green]" if cell["status"] == "done" else f"[red]failed[/red] {cell.get('error', '')}"
        table.add_row(str(cell["cell"]), f"{cell['theta']:g}", str(cell["n"]), status)
    console.print(table)

    for theta, summary in result.aggregate.get("explosion_times", {}).items():
        if "rows" in summary:
            medians = ", ".join(f"N={r['n']}: {r['median']:.4g}" for r in summary["rows"])
            print_info(f"θ={theta} explosion medians: {medians} (p={summary['p_value']:.3g})")

    done = sum(1 for c in result.cells if c["status"] == "done")
    if done == 0:
        print_error(app.i18n.get("runner.sweep_partial", failed=len(result.cells), total=len(result.cells)))
        sys.exit(EXIT_RUNTIME)
    if result.partial:
        print_warning(app.i18n.get("runner.sweep_partial", failed=len(result.cells) - done, total=len(result.cells)))
    print_success(app.i18n.get("cli.sweep_done", path=str(result.directory), done=done, total=len(result.cells)))


@cli.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--no-resimulate", is_flag=True, help="Skip the replica-0 determinism check")
@click.option("--oracles", is_flag=True, help="Also run the geometry and squared Bessel oracle checks")
@click.option("--json", "as_json", is_flag=True, help="Print the summary as JSON")
@click.pass_context
@guarded
def verify(ctx, run_dir, no_resimulate, oracles, as_json):
    """Evaluate the acceptance criteria that apply to a run or sweep directory"""
    verbosity = ctx.obj.get("verbosity") or ("quiet" if as_json else None)
    app = KSLabApp(None, (), verbosity)
    summary = run_verification(run_dir, resimulate=not no_resimulate, oracles=oracles)
    data = summary.to_dict()
    write_json(run_dir / VERIFICATION_FILE, data)

    if as_json:
        click.echo(json.dumps(data, indent=2, sort_keys=True))
    else:
        table = Table(title=f"Verification of {run_dir}")
        table.add_column("Criterion", style="cyan")
        table.add_column("Status")
        table.add_column("Detail")
        colours = {"pass": "green", "fail": "red", "not_applicable": "dim", "skipped": "yellow"}
        for r in summary.results:
            colour = colours.get(r.status, "white")
            table.add_row(r.name, f"[{colour}]{r.status}[/{colour}]", r.detail)
        console.print(table)

    if not summary.passed:
        failed = sum(1 for r in summary.results if r.status == "fail")
        if not as_json:
            print_error(app.i18n.get("cli.verify_failed", count=failed))
        sys.exit(EXIT_VERIFICATION)
    if not as_json:
        print_success(app.i18n.get("cli.verify_passed"))


@cli.command()
@click.option("--dimension", "-d", "dimensions", type=float, multiple=True, default=(1.0, 2.0, 3.0),
              show_default=True, help="Squared Bessel dimension (repeatable)")
@click.option("--z0", type=float, default=1.0, show_default=True)
@click.option("--horizon", "-T", type=float, default=5.0, show_default=True)
@click.option("--dt", type=float, default=1e-4, show_default=True)
@click.option("--replicas", "-r", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--absorb", is_flag=True, help="Absorb at zero instead of reflecting")
@click.pass_context
@guarded
def bessel(ctx, dimensions, z0, horizon, dt, replicas, seed, absorb):
    """Squared Bessel oracle: terminal mean and zero-hitting fraction per dimension"""
    import numpy as np

    KSLabApp(None, (), ctx.obj.get("verbosity"))
    table = Table(title=f"Squared Bessel, z0={z0:g}, T={horizon:g}, dt={dt:g}, {replicas} replicas")
    table.add_column("d", justify="right", style="cyan")
    table.add_column("E[Z_T]", justify="right", style="green")
    table.add_column("z0 + dT", justify="right", style="yellow")
    table.add_column("hit 0", justify="right")

    for i, d in enumerate(dimensions):
        config = BesselConfig(d, z0, horizon, dt, absorb)
        paths = simulate_bessel_batch(config, replicas, np.random.SeedSequence(seed, spawn_key=(i, 0)),
                                      record_every=max(config.n_steps, 1))
        mean = float(np.mean([p.values[-1] for p in paths]))
        hit = zero_hitting_fraction(config, replicas, np.random.SeedSequence(seed, spawn_key=(i, 1)))
        table.add_row(f"{d:g}", f"{mean:.4g}", f"{z0 + d * horizon:.4g}", f"{hit:.3f}")
    console.print(table)


@cli.command()
@click.option("--theta", "-t", type=float, default=2.0, show_default=True)
@click.option("--n", "-n", "n", type=click.IntRange(min=5), default=10, show_default=True)
@click.pass_context
@guarded
def table(ctx, theta, n):
    """Print the squared Bessel dimensions d(k) = (k-1)(2 - k theta/N)"""
    KSLabApp(None, (), ctx.obj.get("verbosity"))
    dims = dimension_table(theta, n)

    out = Table(title=f"θ={theta:g}, N={n}: {phase(theta, n)} (θc={critical_theta(n):.4g}, N0={n0_floor(theta)})")
    out.add_column("k", justify="right", style="cyan")
    out.add_column("d(k)", justify="right", style="green")
    out.add_column("hits 0", justify="center")
    for k, d in dims.dims.items():
        out.add_row(str(k), f"{d:.6g}", "[red]yes[/red]" if d < 2 else "no")
    console.print(out)
    if dims.k2 is not None:
        print_info(f"k2 = {dims.k2}")


def main():
    """Entry point"""
    try:
        cli(obj={})
    except KeyboardInterrupt:
        print_warning("\n" + get_i18n().get("cli.interrupted"))
        sys.exit(EXIT_INTERRUPTED)
    except Exception as e:
        print_error(f"Fatal error: {e}")
        sys.exit(exit_code_for(e))


if __name__ == "__main__":
    main()
