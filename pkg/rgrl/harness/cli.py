"""
Command line entry point: train, eval, ablate and selftest.

Exit codes: 0 success, 1 numerical abort, bad data file or any other failure
inside a run, 2 usage or config error, 3 missing or incompatible checkpoint.
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import torch
import typer
from rich.console import Console
from rich.logging import RichHandler

from rgrl import __version__
from rgrl.errors import CheckpointError, ConfigError, RgrlError
from rgrl.harness.config import build_run_config, canonical_benchmark, load_run_config
from rgrl.harness.runner import ABLATIONS, run_ablation, run_eval, run_train

app = typer.Typer(help="Reduced-gradient RL under hard constraints.", no_args_is_help=True, add_completion=False)
console = Console()
logger = logging.getLogger("rgrl")

EXIT_NUMERICAL = 1
EXIT_USAGE = 2
EXIT_CHECKPOINT = 3


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=verbose)],
        force=True,
    )


def exit_code(exc: BaseException) -> int:
    """Map an error to its exit code; only configuration and argument errors are usage errors."""
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    return EXIT_NUMERICAL


@contextmanager
def handled_errors(command: str) -> Iterator[None]:
    """Turn library errors into a one-line message and the matching exit code."""
    try:
        yield
    except (RgrlError, ValueError) as exc:
        code = exit_code(exc)
        console.print(f"❌ {type(exc).__name__}: {exc}")
        if code == EXIT_USAGE:
            console.print(f"Usage: rgrl {command} --help")
        logger.debug("Traceback", exc_info=True)
        raise typer.Exit(code) from None


def make_deterministic() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def _resolve_run(
    config: Optional[Path],
    benchmark: Optional[str],
    algo: Optional[str],
    seeds: Optional[int],
    epochs: Optional[int],
    out: Optional[Path],
    profile_file: Optional[Path],
):
    if config is not None:
        return load_run_config(
            config, benchmark=benchmark, algorithm=algo, seeds=seeds, epochs=epochs, out=out, profile_file=profile_file
        )
    if benchmark is None:
        raise ConfigError("either --benchmark or --config is required")
    return build_run_config(benchmark, algo, seeds, epochs, out, profile_file)


# ============================================================================
# COMMANDS
# ============================================================================

@app.callback()
def root(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging.")) -> None:
    setup_logging(verbose)


@app.command()
def train(
    benchmark: Optional[str] = typer.Option(None, "--benchmark", "-b", help="safe-cartpole, spring-pendulum or opf-battery."),
    algo: Optional[str] = typer.Option(None, "--algo", "-a", help="rpo-ddpg, rpo-sac, ddpg-l or sac-l."),
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Number of seeds."),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Environment steps per seed."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML run config."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
    profile_file: Optional[Path] = typer.Option(None, "--profile-file", help="OPF day profiles CSV."),
    deterministic: bool = typer.Option(False, "--deterministic", help="Deterministic torch kernels, one thread."),
    progress: bool = typer.Option(True, "--progress/--no-progress"),
) -> None:
    """Train one algorithm on one benchmark over several seeds."""
    with handled_errors("train"):
        if deterministic:
            make_deterministic()
        run = _resolve_run(config, benchmark, algo, seeds, epochs, out, profile_file)
        run_train(run, progress=progress, workers=1 if deterministic else None)
        console.print(f"✅ Results in {run.out}")


@app.command("eval")
def evaluate_checkpoint(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-c", help="checkpoint.pt written by train."),
    benchmark: Optional[str] = typer.Option(None, "--benchmark", "-b", help="Expected benchmark of the checkpoint."),
    episodes: int = typer.Option(10, "--episodes", min=1),
    seed: int = typer.Option(0, "--seed"),
    profile_file: Optional[Path] = typer.Option(None, "--profile-file"),
    deterministic: bool = typer.Option(False, "--deterministic"),
) -> None:
    """Evaluate a checkpoint with the evaluation projection budget."""
    with handled_errors("eval"):
        if deterministic:
            make_deterministic()
        if benchmark is not None:
            benchmark = canonical_benchmark(benchmark)
        run_eval(checkpoint, episodes, seed, benchmark, profile_file)


@app.command()
def ablate(
    ablation: str = typer.Argument(..., help=f"One of: {', '.join(ABLATIONS)}."),
    benchmark: Optional[str] = typer.Option(None, "--benchmark", "-b"),
    algo: Optional[str] = typer.Option(None, "--algo", "-a"),
    seeds: Optional[int] = typer.Option(None, "--seeds"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    config: Optional[Path] = typer.Option(None, "--config"),
    out: Optional[Path] = typer.Option(None, "--out"),
    profile_file: Optional[Path] = typer.Option(None, "--profile-file"),
    deterministic: bool = typer.Option(False, "--deterministic"),
    progress: bool = typer.Option(True, "--progress/--no-progress"),
) -> None:
    """Run an ablation sweep and write a comparison table."""
    with handled_errors("ablate"):
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation '{ablation}', expected one of {list(ABLATIONS)}")
        if deterministic:
            make_deterministic()
        run = _resolve_run(config, benchmark, algo, seeds, epochs, out, profile_file)
        run_ablation(ablation, run, progress=progress)


@app.command()
def selftest(slow: bool = typer.Option(False, "--slow", help="Include the long reproduction runs.")) -> None:
    """Run the bundled test suite."""
    import pytest

    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        console.print(f"❌ Test directory not found: {tests}")
        raise typer.Exit(EXIT_USAGE)
    args = [str(tests), "-q"] + (["--runslow"] if slow else [])
    raise typer.Exit(int(pytest.main(args)))


@app.command()
def version() -> None:
    """Print the package version."""
    console.print(__version__)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
