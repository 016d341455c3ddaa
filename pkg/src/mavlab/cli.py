"""Command-line interface: run pipeline stages against a run directory."""

from __future__ import annotations

import functools
import logging
from pathlib import Path

import click
import yaml

from mavlab.backend import BackendError
from mavlab.harness.config import ConfigError, RunConfig
from mavlab.harness.datasets import ParseError, SplitTooLarge, write_wire_records
from mavlab.harness.report import stage_report
from mavlab.harness.stages import (
    StageError,
    make_backend,
    run_pipeline,
    stage_engineer,
    stage_generate,
    stage_ingest,
    stage_scale,
    stage_score,
    stage_select,
    stage_verify,
)
from mavlab.harness.store import MissingStage, RunStore, StoreError
from mavlab.simlab import SimProfile, synthetic_questions

_FRIENDLY_ERRORS = (
    BackendError,
    ConfigError,
    MissingStage,
    ParseError,
    SplitTooLarge,
    StageError,
    StoreError,
)


def _friendly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _FRIENDLY_ERRORS as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _config_options(fn):
    fn = click.option("--n", type=int, default=None, help="Candidates per question.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Shuffle/simulation seed.")(fn)
    fn = click.option("--cassette", default=None, help="Cassette path for record/replay.")(fn)
    fn = click.option(
        "--backend",
        default=None,
        type=click.Choice(["simulate", "live", "record", "replay"]),
        help="Where chat completions come from.",
    )(fn)
    fn = click.option("--out-dir", default=None, help="Run directory.")(fn)
    fn = click.option(
        "--set",
        "sets",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override any config key; the value is parsed as YAML.",
    )(fn)
    fn = click.option(
        "--config",
        "-c",
        "config_path",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="YAML run configuration.",
    )(fn)
    return fn


def _build_config(config_path: str, sets: tuple[str, ...], **flags) -> RunConfig:
    overrides: dict = {}
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--set")
        overrides[key.strip()] = yaml.safe_load(value)
    for key, value in flags.items():
        if value is not None:
            overrides[key] = value
    return RunConfig.from_yaml(config_path, overrides)


@click.group()
@click.option("--verbose", is_flag=True, help="Log stage progress to stderr.")
def main(verbose: bool) -> None:
    """Best-of-n selection with aggregated aspect-verifier approvals."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@_config_options
@_friendly
def ingest(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Split the dataset into validation/test questions."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    count = stage_ingest(store, config)
    store.update_manifest()
    click.echo(f"{count} questions in {store.path('questions')}")


@main.command()
@_config_options
@_friendly
def generate(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Sample n candidate solutions per question."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    count = stage_generate(store, config, make_backend(config))
    store.update_manifest()
    click.echo(f"{count} candidates in {store.path('candidates')}")


@main.command()
@_config_options
@_friendly
def verify(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Collect binary approvals from every pool verifier."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    count = stage_verify(store, config, make_backend(config))
    store.update_manifest()
    click.echo(f"{count} approvals in {store.path('approvals')}")


@main.command()
@_config_options
@_friendly
def select(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Score candidates against ground truth and run every policy."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    stage_score(store, config)
    count = stage_select(store, config)
    store.update_manifest()
    click.echo(f"{count} selections in {store.path('selections')}")


@main.command()
@_config_options
@_friendly
def engineer(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Search the validation split for the best verifier subset."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    stage_score(store, config)
    payload = stage_engineer(store, config)
    store.update_manifest()
    click.echo(
        f"{payload['method']} search picked {len(payload['subset'])} verifiers "
        f"(validation accuracy {payload['mean_accuracy']:.4f}):"
    )
    for vid in payload["subset"]:
        click.echo(f"  {vid}")


@main.command()
@_config_options
@_friendly
def scale(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Compute accuracy scaling in verifier count and candidate count."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    stage_score(store, config)
    stage_scale(store, config)
    store.update_manifest()
    click.echo(f"scaling summaries in {store.root}")


@main.command()
@_config_options
@_friendly
def report(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Render the report files for a completed run."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = RunStore(config.out_dir)
    written = stage_report(store, config)
    store.update_manifest()
    for name in written:
        click.echo(str(store.reports_dir / name))


@main.command()
@_config_options
@_friendly
def run(config_path, sets, out_dir, backend, cassette, seed, n) -> None:
    """Run every stage end to end."""
    config = _build_config(
        config_path, sets, out_dir=out_dir, backend=backend, cassette=cassette, seed=seed, n=n
    )
    store = run_pipeline(config)
    click.echo((store.reports_dir / "accuracy.txt").read_text(encoding="utf-8").rstrip())
    click.echo(f"run directory: {store.root}")


@main.command()
@click.option("--out-dir", required=True, help="Directory for the dataset and run.")
@click.option("--questions", type=int, default=20, show_default=True)
@click.option("--val-size", type=int, default=0, show_default=True)
@click.option("--n", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--policies", default="mav,cons,pass1", show_default=True)
@click.option("--pool", default="preset:MATH", show_default=True)
@click.option("--subset", default="all", show_default=True)
@click.option("--generator", default="sim-generator", show_default=True)
@click.option("--p-correct", type=float, default=0.4, show_default=True)
@click.option("--tpr", type=float, default=0.8, show_default=True)
@click.option("--fpr", type=float, default=0.2, show_default=True)
@click.option("--rho", type=float, default=0.0, show_default=True)
@_friendly
def simulate(
    out_dir, questions, val_size, n, seed, policies, pool, subset, generator,
    p_correct, tpr, fpr, rho,
) -> None:
    """Synthesize a dataset and run the whole pipeline on simulated models."""
    if questions < 1:
        raise click.BadParameter("need at least one question", param_hint="--questions")
    if not 0 <= val_size < questions:
        raise click.BadParameter(
            "validation size must leave at least one test question", param_hint="--val-size"
        )
    policy_tuple = tuple(p.strip() for p in policies.split(",") if p.strip())
    base = Path(out_dir)
    dataset_path = base / "dataset.jsonl"
    if not dataset_path.exists():
        write_wire_records(synthetic_questions(questions), dataset_path)
    config = RunConfig(
        dataset=str(dataset_path),
        domain="math",
        dataset_name="sim-math",
        generator=generator,
        out_dir=str(base / "run"),
        n=n,
        seed=seed,
        val_size=val_size,
        test_size=questions - val_size,
        backend="simulate",
        pool=pool,
        subset=subset,
        policies=policy_tuple,
        rm_provider="sim" if "rm" in policy_tuple else "stub",
        sim=SimProfile(p_correct=p_correct, tpr=tpr, fpr=fpr, rho=rho, seed=seed),
    )
    store = run_pipeline(config)
    click.echo((store.reports_dir / "accuracy.txt").read_text(encoding="utf-8").rstrip())
    click.echo(f"run directory: {store.root}")


if __name__ == "__main__":
    main()
