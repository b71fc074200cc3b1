"""Command line front end.

Subcommands:

* ``noise-info``   tabulate the noise fixture: fields, drifts, eigenmodes
* ``run-kinetic``  one kinetic trajectory with per-step diagnostics
* ``run-spde``     one limit-equation trajectory
* ``sweep``        kinetic vs limit ensembles across the epsilon list
* ``rates``        noiseless convergence rate against the diffusion reference
* ``verify``       machine-precision identity battery on the configured fixture

Every command reads one config file (see ``config.py`` for the grammar),
writes CSV reports plus a ``manifest.csv`` into the output directory, and
exits 0 on success, 1 when a configured threshold is breached (the breach
list lands in ``checks.csv``), or 2 on configuration and solver errors.
Reruns with identical manifests produce byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .correctors import build_correctors, generator_terms
from .fourier import gradient
from .harness import (
    FUNCTIONAL_NAMES,
    deterministic_convergence,
    epsilon_sweep,
    sample_rng,
)
from .kinetic import KineticConfig, run_kinetic
from .limit import SpdeConfig, run_limit
from .model import density, equilibrium_field, relaxation_operator, weighted_inner
from .noise import noise_statistics

#: fixed entropy for the random fields used by ``verify``
VERIFY_SEED = 12345


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_manifest(out: Path, command: str, config_path: str, seed, extra=()) -> None:
    digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()
    rows = [
        ("command", command),
        ("config_sha256", digest),
        ("seed", seed),
        ("package_version", __version__),
        ("numpy_version", np.__version__),
        ("python_version", platform.python_version()),
    ]
    rows.extend(extra)
    write_csv(out / "manifest.csv", ["key", "value"], rows)


def write_checks(out: Path, checks: list[tuple[str, float, float]]) -> int:
    """Write pass/fail rows (check, value, threshold) and count failures."""
    failures = sum(1 for _, value, threshold in checks if not value <= threshold)
    write_csv(
        out / "checks.csv",
        ["check", "value", "threshold", "status"],
        [
            (name, value, threshold, "pass" if value <= threshold else "FAIL")
            for name, value, threshold in checks
        ],
    )
    return failures


class Setup:
    """Solver objects assembled once from a parsed run configuration."""

    def __init__(self, run: RunConfig):
        self.run = run
        self.grid = run.build_grid()
        self.quad = run.build_quad()
        self.opacity = run.build_opacity()
        self.noise = run.build_noise(self.grid)
        self.rho0 = run.build_rho0(self.grid)
        self.stats = None if self.noise is None else noise_statistics(self.noise)


def cmd_noise_info(setup: Setup, out: Path, args) -> int:
    if setup.stats is None:
        print("noise-info: the configured noise fixture is 'off'", file=sys.stderr)
        return 2
    stats = setup.stats
    model = stats.model
    x = setup.grid.axis_points()
    states = model.flat_states()
    psi = stats.poisson_profiles.reshape(model.n_states, -1)
    header = (
        ["x"]
        + [f"n{i}" for i in range(model.n_states)]
        + [f"psi{i}" for i in range(model.n_states)]
        + ["drift_paper", "drift_effective"]
    )
    rows = [
        [x[j], *states[:, j], *psi[:, j], stats.drift_paper.ravel()[j],
         stats.drift_effective.ravel()[j]]
        for j in range(setup.grid.size)
    ]
    write_csv(out / "noise_fields.csv", header, rows)

    profiles = stats.mode_profiles.reshape(stats.rank, -1)
    mode_rows = [
        [j, stats.mode_weights[j], x[i], profiles[j, i]]
        for j in range(stats.rank)
        for i in range(setup.grid.size)
    ]
    write_csv(out / "noise_modes.csv", ["mode_index", "weight", "x", "value"], mode_rows)

    print(f"fixture: {setup.run.fixture} with {model.n_states} states, rank {stats.rank}")
    for j, weight in enumerate(stats.mode_weights):
        print(f"  mode {j}: weight {weight:.6g}")
    print(f"  sup_x |drift_paper + drift_effective| = "
          f"{np.max(np.abs(stats.drift_paper + stats.drift_effective)):.3e}")
    write_manifest(out, "noise-info", args.config, setup.run.base_seed)
    return 0


def _density_rows(times: np.ndarray, densities: np.ndarray, x: np.ndarray):
    return [
        [t, x[i], snapshot[i]]
        for t, snapshot in zip(times, densities)
        for i in range(len(x))
    ]


def cmd_run_kinetic(setup: Setup, out: Path, args) -> int:
    run = setup.run
    seed = run.base_seed if args.seed is None else args.seed
    config = KineticConfig(
        setup.grid, setup.quad, setup.opacity, epsilon=run.epsilon,
        t_final=run.t_final, dt=run.dt, noise=setup.noise,
        snapshot_stride=run.snapshot_stride,
    )
    rng = sample_rng(seed, 0) if setup.noise is not None else None
    trajectory = run_kinetic(config, setup.rho0, rng=rng)
    x = setup.grid.axis_points()
    write_csv(out / "kinetic_density.csv", ["time", "x", "density"],
              _density_rows(trajectory.times, trajectory.densities, x))
    write_csv(
        out / "kinetic_series.csv",
        ["time", "mass", "energy", "defect"],
        zip(trajectory.step_times, trajectory.mass, trajectory.energy, trajectory.defect),
    )
    write_manifest(out, "run-kinetic", args.config, seed,
                   [("epsilon", run.epsilon), ("dt", config.dt)])
    print(f"run-kinetic: {config.n_steps} steps at epsilon = {run.epsilon:g}, "
          f"final mass {trajectory.mass[-1]:.12g}")
    return 0


def cmd_run_spde(setup: Setup, out: Path, args) -> int:
    run = setup.run
    seed = run.base_seed if args.seed is None else args.seed
    drift = run.drift if args.drift is None else args.drift
    config = SpdeConfig(
        setup.grid, setup.opacity, setup.quad.diffusion_coefficient(),
        run.t_final, dt=run.dt, noise=setup.stats, drift=drift,
        snapshot_stride=run.snapshot_stride,
    )
    rng = sample_rng(seed, 1) if setup.stats is not None else None
    trajectory = run_limit(config, setup.rho0, rng=rng)
    x = setup.grid.axis_points()
    write_csv(out / "spde_density.csv", ["time", "x", "density"],
              _density_rows(trajectory.times, trajectory.densities, x))
    write_csv(
        out / "spde_series.csv",
        ["time", "mass", "norm_sq"],
        zip(trajectory.step_times, trajectory.mass, trajectory.norm_sq),
    )
    write_manifest(out, "run-spde", args.config, seed,
                   [("drift", drift), ("dt", config.dt)])
    print(f"run-spde: {config.n_steps} steps with {drift} drift, "
          f"final mass {trajectory.mass[-1]:.12g}")
    return 0


def cmd_sweep(setup: Setup, out: Path, args) -> int:
    run = setup.run
    seed = run.base_seed if args.seed is None else args.seed
    drift = run.drift if args.drift is None else args.drift
    n_kinetic = run.samples_kinetic if args.samples is None else args.samples
    n_limit = run.samples_limit if args.samples is None else args.samples
    report = epsilon_sweep(
        setup.grid, setup.quad, setup.opacity, setup.noise, setup.rho0,
        run.t_final, run.epsilons, n_kinetic, n_limit, seed,
        mode=run.modes[0], sobolev_order=run.sobolev_order,
        dt_scale=run.dt_scale,
    )
    limit = report.limit_effective if drift == "effective" else report.limit_paper
    rows = []
    for row in report.rows:
        gaps = row.gaps if drift == "effective" else row.gaps_paper
        for j, name in enumerate(FUNCTIONAL_NAMES):
            rows.append([
                row.epsilon, name, row.estimates.values[j], row.estimates.sems[j],
                limit.values[j], limit.sems[j], gaps[j],
            ])
    write_csv(
        out / "sweep.csv",
        ["epsilon", "functional", "kinetic_mean", "kinetic_sem",
         "limit_mean", "limit_sem", "gap"],
        rows,
    )
    write_csv(
        out / "hs.csv",
        ["epsilon", "sobolev_order", "hs_mean"],
        [[row.epsilon, report.sobolev_order, row.sobolev_mean] for row in report.rows],
    )
    write_csv(
        out / "diagnostics.csv",
        ["epsilon", "sup_energy_mean", "defect_integral_mean", "hs_mean", "det_error"],
        [
            [row.epsilon, row.sup_energy_mean, row.defect_integral_mean,
             row.sobolev_mean, row.det_error]
            for row in report.rows
        ],
    )
    checks = [
        ("gap-monotone", 0.0 if report.gaps_nonincreasing(run.slack_sigma) else 1.0, 0.0),
        ("sup-energy-band", report.diagnostic_band("sup_energy_mean"), run.band_max),
        ("defect-band", report.diagnostic_band("defect_integral_mean"), run.band_max),
        ("hs-band", report.diagnostic_band("sobolev_mean"), run.band_max),
    ]
    if setup.noise is None:
        errors = report.det_errors()
        worst = float(np.max(np.diff(errors))) if len(errors) > 1 else -1.0
        checks.append(("det-error-decreasing", worst, 0.0))
    failures = write_checks(out, checks)
    write_manifest(out, "sweep", args.config, seed,
                   [("drift", drift), ("samples_kinetic", n_kinetic),
                    ("samples_limit", n_limit)])
    for row in report.rows:
        gaps = row.gaps if drift == "effective" else row.gaps_paper
        print(f"sweep: eps = {row.epsilon:<8g} gaps "
              + "  ".join(f"{name} {gap:.3e}" for name, gap in zip(FUNCTIONAL_NAMES, gaps)))
    if failures:
        print(f"sweep: {failures} check(s) failed, see checks.csv", file=sys.stderr)
        return 1
    return 0


def cmd_rates(setup: Setup, out: Path, args) -> int:
    run = setup.run
    report = deterministic_convergence(
        setup.grid, setup.quad, setup.opacity, setup.rho0, run.t_final, run.epsilons
    )
    write_csv(
        out / "rates.csv",
        ["epsilon", "error", "slope"],
        [[eps, err, report.slope] for eps, err in zip(report.epsilons, report.errors)],
    )
    checks = [
        ("slope-shortfall", run.slope_min - report.slope, 0.0),
        ("errors-decreasing", 0.0 if report.errors_strictly_decreasing() else 1.0, 0.0),
    ]
    failures = write_checks(out, checks)
    write_manifest(out, "rates", args.config, run.base_seed)
    print(f"rates: slope {report.slope:.3f} over {len(report.epsilons)} epsilons")
    if failures:
        print(f"rates: {failures} check(s) failed, see checks.csv", file=sys.stderr)
        return 1
    return 0


def cmd_verify(setup: Setup, out: Path, args) -> int:
    run = setup.run
    tol = run.identity_tol
    grid, quad = setup.grid, setup.quad
    rng = np.random.default_rng(VERIFY_SEED)
    f = 1.0 + 0.3 * rng.standard_normal(grid.shape + (quad.n_v,))
    mode = run.modes[0]
    p = mode.profile(grid)

    checks: list[tuple[str, float, float]] = []
    checks.append(("velocity-mass", abs(quad.equilibrium_mass() - 1.0), tol))
    checks.append(("velocity-null-flux", abs(quad.null_flux()), tol))
    checks.append(("mode-normalization",
                   abs(grid.integrate(p * p) - 1.0), tol))

    relax = relaxation_operator(quad, f)
    dissipation = weighted_inner(grid, quad, relax, f) + weighted_inner(grid, quad, relax, relax)
    checks.append(("relax-dissipation", abs(dissipation), tol))

    transport = np.stack(
        [quad.speeds[k] * gradient(grid, f[..., k])[0] for k in range(quad.n_v)],
        axis=-1,
    )
    flux = f @ (quad.weights * quad.speeds)
    lhs = weighted_inner(grid, quad, transport, equilibrium_field(quad, p))
    rhs = -grid.integrate(flux * gradient(grid, p)[0])
    checks.append(("transport-duality", abs(lhs - rhs), tol))

    if setup.stats is not None:
        stats = setup.stats
        model = stats.model
        n_flat = model.flat_states()
        psi_flat = stats.poisson_profiles.reshape(model.n_states, -1)
        checks.append(("poisson-residual",
                       float(np.max(np.abs(model.generator @ psi_flat - n_flat))), tol))
        checks.append(("kernel-symmetry",
                       float(np.max(np.abs(stats.kernel - stats.kernel.T))), tol))
        checks.append(("drift-consistency",
                       float(np.max(np.abs(stats.drift_paper + stats.drift_effective))), tol))
        diag = np.diag(stats.kernel).reshape(grid.shape)
        checks.append(("kernel-diag-drift",
                       float(np.max(np.abs(diag - 2.0 * stats.drift_effective))), tol))
        if run.fixture == "telegraph":
            closed = psi_flat + n_flat / (2.0 * run.rate)
            checks.append(("telegraph-poisson-closed-form",
                           float(np.max(np.abs(closed))), tol))
            profile_sq = grid.integrate(stats.model.states[0] ** 2)
            checks.append(("telegraph-mode-weight",
                           abs(stats.mode_weights[0] - profile_sq / run.rate), tol))

        config = KineticConfig(grid, quad, setup.opacity, epsilon=0.25,
                               t_final=0.01, noise=setup.noise)
        rho = density(quad, f)
        drift_target = grid.integrate(rho * stats.drift_effective * p)
        equilibrium = equilibrium_field(quad, rho)
        for name, field, target in (
            ("transport-singular", equilibrium, 0.0),
            ("relax-singular", equilibrium, 0.0),
        ):
            worst = max(
                abs(getattr(generator_terms(config, stats, mode, field, i), name.replace("-", "_")) - target)
                for i in range(model.n_states)
            )
            checks.append((name, worst, tol))
        worst_eq2 = max(
            abs(generator_terms(config, stats, mode, f, i).eq2_residual)
            for i in range(model.n_states)
        )
        checks.append(("scale-balance-residual", worst_eq2, tol))
        worst_drift = max(
            abs(generator_terms(config, stats, mode, f, i).drift_term - drift_target)
            for i in range(model.n_states)
        )
        checks.append(("drift-state-independence", worst_drift, tol))
        if run.fixture == "telegraph":
            correctors = build_correctors(stats, mode)
            checks.append(("telegraph-second-corrector-null",
                           float(np.max(np.abs(correctors.second_profiles))), tol))

    failures = write_checks(out, checks)
    write_manifest(out, "verify", args.config, run.base_seed)
    width = max(len(name) for name, _, _ in checks)
    for name, value, threshold in checks:
        status = "pass" if value <= threshold else "FAIL"
        print(f"verify: {name:<{width}}  {value:.3e} <= {threshold:.0e}  {status}")
    if failures:
        print(f"verify: {failures} identity check(s) failed", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "noise-info": cmd_noise_info,
    "run-kinetic": cmd_run_kinetic,
    "run-spde": cmd_run_spde,
    "sweep": cmd_sweep,
    "rates": cmd_rates,
    "verify": cmd_verify,
}

HELP = {
    "noise-info": "tabulate the noise fixture fields, drifts and eigenmodes",
    "run-kinetic": "run one kinetic trajectory and dump density snapshots",
    "run-spde": "run one limit-equation trajectory and dump density snapshots",
    "sweep": "compare kinetic against limit ensembles across epsilons",
    "rates": "estimate the noiseless convergence rate to the diffusion limit",
    "verify": "run the machine-precision identity battery",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rosselab",
        description="kinetic transport with random relaxation vs its diffusion limit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=HELP[name])
        cmd.add_argument("--config", required=True, help="path to the run configuration")
        cmd.add_argument("--out", default=None, help="output directory (default from config)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the configured base seed")
        cmd.add_argument("--samples", type=int, default=None,
                         help="override both ensemble sample counts")
        cmd.add_argument("--drift", choices=("paper", "effective"), default=None,
                         help="override the limit drift convention")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = parse_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.samples is not None and args.samples < 2:
        print("--samples must be at least 2", file=sys.stderr)
        return 2
    out = Path(args.out if args.out is not None else run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        setup = Setup(run)
        return COMMANDS[args.command](setup, out, args)
    except (ValueError, FloatingPointError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
