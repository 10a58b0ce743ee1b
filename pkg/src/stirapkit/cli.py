"""Command-line interface: analysis, sweeps, optimization and tomography runs.

Every run writes CSV data files plus a ``manifest.json`` carrying the
configuration hash, resolved preset values and package versions.  An
experiment JSON file (``--config``) can override preset values; all
frequencies in such files are plain Hz and are multiplied by 2 pi unless
the file sets ``"times_2pi": false`` (see docs/experiment-schema.md).
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import bench, inertial, krotov, systems, tomography
from .linops import TimeGrid, projector
from .pulses import (
    PulseShape,
    gate_pair,
    load_pulse_csv,
    save_pulse_csv,
    stirap_pair,
)

TWO_PI = 2 * np.pi

FREQUENCY_KEYS = {
    "delta", "omega_max", "omega1_max", "gamma", "gamma_31", "gamma_32",
    "gamma_p", "gamma_r", "gamma_dep", "sigma_delta", "sigma_omega", "vr",
}


def load_experiment_config(path) -> dict:
    """Load an experiment JSON file, converting frequencies to rad/s."""
    with open(path) as fh:
        raw = json.load(fh)
    times_2pi = raw.pop("times_2pi", True)
    factor = TWO_PI if times_2pi else 1.0
    out = {}
    for key, value in raw.items():
        if key in FREQUENCY_KEYS and isinstance(value, (int, float)):
            out[key] = factor * value
        else:
            out[key] = value
    return out


def parse_shapes(text: str) -> list[PulseShape]:
    shapes = []
    for name in text.split(","):
        name = name.strip().lower()
        if name not in bench.SHAPE_BY_NAME:
            raise click.BadParameter(f"unknown pulse shape {name!r}")
        shapes.append(bench.SHAPE_BY_NAME[name])
    return shapes


def parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def ensure_outdir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@click.group()
def main():
    """STIRAP and geometric-gate simulation toolkit."""


common_options = [
    click.option("--out", default="runs", show_default=True, help="output directory"),
    click.option("--seed", default=1234, show_default=True, type=int),
    click.option("--steps", default=bench.DEFAULT_STEPS, show_default=True, type=int),
    click.option("--threads", default=1, show_default=True, type=int),
    click.option("--config", default=None, type=click.Path(exists=True), help="experiment JSON overrides"),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


def merged_config(config_path, **cli_values) -> dict:
    cfg = load_experiment_config(config_path) if config_path else {}
    cfg.update({k: v for k, v in cli_values.items() if v is not None})
    return cfg


@main.command()
@click.option("--pulse1", type=click.Path(exists=True), help="pump pulse CSV")
@click.option("--pulse2", type=click.Path(exists=True), help="Stokes pulse CSV")
@click.option("--shape", default=None, help="analytic shape instead of CSVs")
@click.option("--omega-max-mhz", default=50.0, show_default=True, type=float)
@click.option("--tf-us", default=0.25, show_default=True, type=float)
@click.option("--gate", is_flag=True, help="use the two-step gate profile")
@click.option("--samples", default=2001, show_default=True, type=int)
@click.option("--out", default=None, help="write the report JSON here (default: stdout)")
def analyze(pulse1, pulse2, shape, omega_max_mhz, tf_us, gate, samples, out):
    """Inertiality report (chi, eta_I, eta_A) for a pulse pair."""
    if pulse1 and pulse2:
        p1 = load_pulse_csv(pulse1)
        p2 = load_pulse_csv(pulse2)
    elif shape:
        grid = TimeGrid(0.0, tf_us * 1e-6, samples)
        omega = TWO_PI * omega_max_mhz * 1e6
        maker = gate_pair if gate else stirap_pair
        p1, p2 = maker(bench.SHAPE_BY_NAME[shape.lower()], omega, grid)
    else:
        raise click.UsageError("provide --pulse1/--pulse2 or --shape")
    report = inertial.analyze_pulses(p1, p2)
    text = report.to_json(indent=2)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@main.command()
@with_common
@click.option("--shapes", default="cubic,sinsq,gaussian", show_default=True)
@click.option("--areas", default="10,15,20,25,30,35,40,45,50", show_default=True, help="pulse areas Omega_max*tf")
def stirap(out, seed, steps, threads, config, shapes, areas):
    """Fig.-1a style STIRAP infidelity sweep over pulse area."""
    outdir = ensure_outdir(out)
    cfg = merged_config(config, shapes=shapes, areas=areas, steps=steps, seed=seed)
    shape_list = parse_shapes(shapes)
    area_list = parse_floats(areas)
    rows, checks = bench.run_stirap_sweep(shape_list, area_list, steps=steps)
    write_path = outdir / "stirap_sweep.csv"
    bench.write_csv(write_path, ["shape", "pulse_area", "infidelity"], rows)
    bench.write_manifest(outdir / "manifest.json", cfg, bench.PRESETS["fig1_stirap"], extra={"checks": checks})
    click.echo(f"wrote {write_path}")


@main.command()
@with_common
@click.option("--gate", type=click.Choice(["phase", "hadamard", "cz"]), default="phase", show_default=True)
@click.option("--shapes", default="quartic,sinsq,gaussian", show_default=True)
@click.option("--omega-mhz", default="10,20,30,40,50", show_default=True, help="Omega_max/2pi values in MHz")
def gates(out, seed, steps, threads, config, gate, shapes, omega_mhz):
    """Fig.-3 style gate infidelity versus maximum Rabi frequency."""
    outdir = ensure_outdir(out)
    cfg = merged_config(config, gate=gate, shapes=shapes, omega_mhz=omega_mhz, steps=steps)
    omega_values = [TWO_PI * 1e6 * v for v in parse_floats(omega_mhz)]
    rows = bench.run_gate_benchmark(gate, parse_shapes(shapes), omega_values, steps=steps)
    path = outdir / f"gate_{gate}.csv"
    bench.write_csv(path, ["shape", "omega_max_rad_s", "infidelity"], rows)
    preset = bench.PRESETS["fig3_cz" if gate == "cz" else "fig3_single_qubit"]
    bench.write_manifest(outdir / "manifest.json", cfg, preset)
    click.echo(f"wrote {path}")


@main.command()
@with_common
@click.option("--shape", default="cubic", show_default=True, help="guess pulse family")
@click.option("--omega-max-mhz", default=20.0, show_default=True, type=float)
@click.option("--tf-us", default=0.25, show_default=True, type=float)
@click.option("--lambda1", default=0.1, show_default=True, type=float)
@click.option("--lambda2", default=0.0, show_default=True, type=float)
@click.option("--lambda3", default=1e-7, show_default=True, type=float)
@click.option("--goal", default=0.99, show_default=True, type=float)
@click.option("--max-iter", default=100, show_default=True, type=int)
def optimize(out, seed, steps, threads, config, shape, omega_max_mhz, tf_us, lambda1, lambda2, lambda3, goal, max_iter):
    """Krotov optimization of a STIRAP transfer from an analytic guess."""
    outdir = ensure_outdir(out)
    cfg = merged_config(config, shape=shape, omega_max_mhz=omega_max_mhz, tf_us=tf_us,
                        lambda1=lambda1, lambda2=lambda2, lambda3=lambda3, goal=goal, steps=steps)
    grid = TimeGrid(0.0, tf_us * 1e-6, min(steps, 2000) + 1)
    omega = TWO_PI * omega_max_mhz * 1e6
    guess = list(stirap_pair(bench.SHAPE_BY_NAME[shape.lower()], omega, grid))
    preset = bench.PRESETS["fig1_stirap"]
    params = systems.StirapParams(preset["delta"], preset["gamma_31"], preset["gamma_32"])
    system = krotov.controlled_stirap3(params, grid)
    weights = krotov.CostWeights(lambda1, lambda2, lambda3,
                                 omega_ref=preset["omega_max"], time_ref=1e-6)
    pulses, report = krotov.optimize(
        guess, system, projector(3, 0), projector(3, 2), weights,
        krotov.StopCriteria(max_iter=max_iter, fidelity_goal=goal),
    )
    save_pulse_csv(pulses[0], outdir / "optimized_pump.csv")
    save_pulse_csv(pulses[1], outdir / "optimized_stokes.csv")
    (outdir / "optimize_report.json").write_text(report.to_json(indent=2))
    bench.write_manifest(outdir / "manifest.json", cfg, preset)
    click.echo(f"fidelity {report.final_fidelity:.5f} after {report.iterations} iterations -> {outdir}")


@main.command()
@with_common
@click.option("--pulse", type=click.Choice(["quartic", "gaussian"]), default="quartic", show_default=True)
def table1(out, seed, steps, threads, config, pulse):
    """Table-1 robustness scan for the CZ gate."""
    outdir = ensure_outdir(out)
    cfg = merged_config(config, pulse=pulse, steps=steps)
    shape = bench.SHAPE_BY_NAME[pulse]
    nominal, cal, rows = bench.run_table1(shape, steps=steps)
    path = outdir / f"table1_{pulse}.csv"
    bench.write_csv(
        path,
        ["parameter", "delta_minus", "delta_plus", "f_min_change_pp", "f_max_change_pp"],
        [(r.parameter, r.delta_minus, r.delta_plus, r.f_min_change, r.f_max_change) for r in rows],
    )
    bench.write_manifest(outdir / "manifest.json", cfg, bench.PRESETS["table1_cz"],
                         extra={"nominal_fidelity": nominal, "calibrated_tf": cal.tf})
    click.echo(f"nominal fidelity {nominal:.4f} (tf = {cal.tf * 1e6:.3f} us); wrote {path}")


@main.command()
@with_common
@click.option("--shapes", default="quartic,gaussian", show_default=True)
@click.option("--samples", default=100, show_default=True, type=int)
@click.option("--noise-preset", default="fig2_noise", show_default=True,
              type=click.Choice(["fig2_noise", "doppler_10uK_noise"]))
def montecarlo(out, seed, steps, threads, config, shapes, samples, noise_preset):
    """Fig.-2 style Monte Carlo noise ensemble for the CZ gate."""
    outdir = ensure_outdir(out)
    cfg = merged_config(config, shapes=shapes, samples=samples, seed=seed, steps=steps,
                        noise_preset=noise_preset)
    rows, means = bench.run_fig2_montecarlo(
        parse_shapes(shapes), samples, seed, steps=steps, threads=threads, noise_preset=noise_preset,
    )
    bench.write_csv(outdir / "montecarlo.csv", ["shape", "omega_max_rad_s", "sample", "infidelity"], rows)
    bench.write_csv(outdir / "montecarlo_means.csv", ["shape", "omega_max_rad_s", "mean_infidelity"], means)
    bench.write_manifest(outdir / "manifest.json", cfg, bench.PRESETS[noise_preset])
    click.echo(f"wrote {outdir / 'montecarlo.csv'} ({len(rows)} rows)")


@main.command()
@with_common
@click.option("--gate", type=click.Choice(["phase", "hadamard", "cz"]), default="phase", show_default=True)
@click.option("--shape", default="quartic", show_default=True)
@click.option("--omega-mhz", default=50.0, show_default=True, type=float)
def tomography_cmd(out, seed, steps, threads, config, gate, shape, omega_mhz):
    """Reconstruct a simulated gate's chi matrix and export it."""
    outdir = ensure_outdir(out)
    cfg = merged_config(config, gate=gate, shape=shape, omega_mhz=omega_mhz, steps=steps)
    shape_enum = bench.SHAPE_BY_NAME[shape.lower()]
    omega = TWO_PI * 1e6 * omega_mhz
    if gate == "cz":
        params = bench.cz_params("table1_cz")
        cal = bench.calibrate_cz(params, shape_enum, omega)
        grid = TimeGrid(0.0, cal.tf, steps + 1)
        p1, p2 = gate_pair(shape_enum, omega, grid, phase_flip=False)
        gen = systems.build_cz(params, p1, p2)
        channel = systems.gate_channel(gen, grid, systems.CZ_QUBIT_INDICES, correction=cal.correction_unitary())
        chi, kraus = tomography.reconstruct_gate(channel, 2)
        target = systems.CZ_TARGET
    else:
        cfg_sq = bench.PRESETS["fig3_single_qubit"]
        grid = TimeGrid(0.0, cfg_sq["tf"], steps + 1)
        if gate == "phase":
            p1, p2 = gate_pair(shape_enum, omega, grid, phase_flip=True)
            gen = systems.build_phase_gate(p1, p2, cfg_sq["gamma"])
            target = systems.PHASE_GATE_TARGET
        else:
            o0, o1, o2 = systems.hadamard_pulse_triple(omega, grid, shape_enum)
            gen = systems.build_hadamard_gate(o0, o1, o2, cfg_sq["gamma"])
            target = systems.HADAMARD_TARGET
        channel = systems.gate_channel(gen, grid, systems.TRIPOD_QUBIT_INDICES)
        chi, kraus = tomography.reconstruct_gate(channel, 1)
    fid = tomography.avg_gate_fidelity(kraus, target)
    tomography.chi_to_json(chi, outdir / f"chi_{gate}_{shape}.json", metadata={"avg_gate_fidelity": fid})
    tomography.chi_to_csv(chi, outdir / f"chi_{gate}_{shape}_real.csv", outdir / f"chi_{gate}_{shape}_imag.csv")
    bench.write_manifest(outdir / "manifest.json", cfg)
    click.echo(f"avg gate fidelity {fid:.5f}; chi written to {outdir}")


main.add_command(tomography_cmd, name="tomography")

if __name__ == "__main__":
    main()
