# ================================
# TURBOLYNX COMMAND LINE
# ================================

import os
from pathlib import Path
from typing import Dict, List, Optional

import typer
from rich.console import Console
from rich.table import Table

from mimo_pipeline.config import DETECTOR_PRESETS, load_experiment_config
from mimo_pipeline.epcore import get_detector_params, schedule_table
from mimo_pipeline.errors import ConfigurationError, TurboLynxError
from mimo_pipeline.simulation import build_experiment_code, run_experiment, snr_at_ber
from mimo_pipeline.verification import run_verification
from utils.file_handler import write_alist
from utils.logging_setup import configure_logging

app = typer.Typer(help="EP turbo MIMO detection: BER sweeps, verification and schedules.", no_args_is_help=True)
console = Console()


def _fail(error: TurboLynxError) -> None:
    console.print(f"[red]❌ {error}[/red]")
    raise typer.Exit(code=2 if isinstance(error, ConfigurationError) else 1)


@app.command()
def run(
    config: Optional[Path] = typer.Argument(None, help="YAML experiment config"),
    snr: Optional[List[float]] = typer.Option(None, "--snr", help="SNR points in dB (repeatable)"),
    detectors: Optional[List[str]] = typer.Option(None, "--detectors", "-d", help="Detector variants (repeatable)"),
    channels: Optional[int] = typer.Option(None, "--channels", help="Random channels per SNR point"),
    codewords: Optional[int] = typer.Option(None, "--codewords", help="Codewords per channel"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed"),
    csi_compensate: Optional[bool] = typer.Option(None, "--csi-compensate/--no-csi-compensate"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker threads"),
    out: Optional[Path] = typer.Option(None, "--out", help="Results directory"),
    target_ber: float = typer.Option(1e-3, "--target-ber", help="BER level for the SNR summary"),
):
    """Run a BER sweep and write CSV plus plot data."""
    configure_logging()
    overrides: Dict[str, object] = {}
    if snr:
        overrides["snr_db"] = list(snr)
    if detectors:
        overrides["detectors"] = list(detectors)
    if channels is not None:
        overrides["counts.channels"] = channels
    if codewords is not None:
        overrides["counts.codewords"] = codewords
    if seed is not None:
        overrides["seed"] = seed
    if csi_compensate is not None:
        overrides["csi.compensate"] = csi_compensate
    if out is not None:
        overrides["output.dir"] = str(out)

    try:
        cfg = load_experiment_config(config, overrides)
        records = run_experiment(cfg, workers=workers)
    except TurboLynxError as e:
        _fail(e)

    table = Table(title="BER")
    for column in ("variant", "snr_db", "bit_errors", "bits_total", "ber", "fer"):
        table.add_column(column)
    for r in records:
        table.add_row(r.variant, f"{r.snr_db:g}", str(r.bit_errors), str(r.bits_total), f"{r.ber:.3e}", f"{r.fer:.3e}")
    console.print(table)
    for name in cfg.detectors:
        reached = snr_at_ber(records, name, target_ber)
        label = f"{reached:.2f} dB" if reached is not None else "not reached"
        console.print(f"SNR @ BER {target_ber:g} for {name}: {label}")


@app.command()
def verify(
    slow: bool = typer.Option(False, "--slow", help="Include the Monte-Carlo SER and complexity checks"),
    golden_out: Optional[Path] = typer.Option(None, "--golden-out", help="Write the 2x2 QPSK oracle reference here"),
):
    """Run the verification suite."""
    configure_logging()
    results = run_verification(slow=slow, golden_out=golden_out)
    table = Table(title="Verification")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    for r in results:
        table.add_row(r.name, "[green]pass[/green]" if r.passed else "[red]FAIL[/red]", r.detail)
    console.print(table)
    if not all(r.passed for r in results):
        raise typer.Exit(code=1)


@app.command()
def params(
    variant: Optional[str] = typer.Option(None, "--variant", help="Single variant to show"),
    turbo_iters: int = typer.Option(5, "--turbo-iters", help="Turbo iterations T"),
):
    """Print damping and variance-floor schedules of the detector variants."""
    names = [variant] if variant else list(DETECTOR_PRESETS)
    try:
        tables = [schedule_table(get_detector_params(name), turbo_iters) for name in names]
    except TurboLynxError as e:
        _fail(e)
    for info in tables:
        console.print(f"[bold]{info['variant']}[/bold]  S={info['self_iterations']}  policy={info['policy']}  "
                      f"uniform moment prior={info['uniform_moment_prior']}  cost={info['cost_per_turbo_iteration']}")
        console.print("  beta(t): " + ", ".join(f"{b:.6g}" for b in info["beta"]))
        console.print("  eps(l):  " + (", ".join(f"{e:.6g}" for e in info["eps"]) or "-"))


@app.command("export-code")
def export_code(
    config: Path = typer.Argument(..., help="YAML experiment config"),
    path: Path = typer.Argument(..., help="Destination alist file"),
):
    """Build the configured LDPC code and save its parity matrix as alist."""
    configure_logging()
    try:
        code = build_experiment_code(load_experiment_config(config))
    except TurboLynxError as e:
        _fail(e)
    write_alist(code.parity_matrix, path)
    console.print(f"✅ n={code.n}, k={code.k}, degree repairs={code.degree_repairs} -> {path}")


@app.command()
def serve(port: int = typer.Option(int(os.environ.get("PORT", 8000)), "--port")):
    """Start the HTTP service."""
    from main import main as serve_main

    serve_main(port)


if __name__ == "__main__":
    app()
