"""Command-line pipeline: synth, train, encode, query, eval.

Configuration precedence is command line > config file > documented default.
Config files are plain ``key=value`` lines (``#`` comments allowed); unknown
keys are rejected.  All randomness derives from the single ``seed`` value.
"""

from __future__ import annotations

import functools
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import dataio
from .core import SEED_SYNTH, PointSet, SetDataset, rng_for, split_qr
from .errors import ConfigError, DataFormatError, SetHashError
from .evaluate import EvalConfig, emit_curves, evaluate, lsh_baseline_train
from .index import build_index, load_code_index, rank, save_code_index
from .kernels import KernelParams
from .trainer import DATABASE_SIDE, QUERY_SIDE, TrainerConfig, load_model, save_model, train

# ---------------------------------------------------------------------------
# Config file handling


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text: str) -> float | None:
    low = text.strip().lower()
    if low in ("auto", "none"):
        return None
    return float(text)


def _parse_cutoffs(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad cutoff list {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"cutoffs must be positive integers, got {text!r}")
    return values


CONFIG_KEYS: dict[str, object] = {
    "bits": int,
    "rounds": int,
    "alpha": float,
    "beta": float,
    "nu1": float,
    "nu2": float,
    "nu3": _parse_optional_float,
    "nu4": _parse_optional_float,
    "max_outer": int,
    "conv_tol": float,
    "balance_tol": float,
    "max_sweeps": int,
    "pool_cap": int,
    "seed": int,
    "fraction": float,
    "stratified": _parse_bool,
    "mu": _parse_optional_float,
    "gamma_g": _parse_optional_float,
    "gamma_s": _parse_optional_float,
    "cov_ridge": float,
    "threads": int,
    "cutoffs": _parse_cutoffs,
    "radius": int,
    "k": int,
    "empty_bucket_zero": _parse_bool,
}

DEFAULTS: dict[str, object] = {
    "bits": 24,
    "rounds": 15,
    "alpha": 1.0,
    "beta": 1.0,
    "nu1": 0.0,
    "nu2": 1.0,
    "nu3": None,
    "nu4": None,
    "max_outer": 10,
    "conv_tol": 1e-3,
    "balance_tol": 0.1,
    "max_sweeps": 20,
    "pool_cap": 20000,
    "seed": 0,
    "fraction": 0.5,
    "stratified": True,
    "mu": None,
    "gamma_g": None,
    "gamma_s": None,
    "cov_ridge": 1e-3,
    "threads": 0,  # 0: use the hardware thread count
    "cutoffs": (100, 400, 1600),
    "radius": 2,
    "k": 10,
    "empty_bucket_zero": True,
}


def load_config_file(path: str | Path) -> dict:
    cfg: dict[str, object] = {}
    p = dataio.read_path(path)
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{p}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{p}:{lineno}: unknown config key {key!r}")
        parser = CONFIG_KEYS[key]
        try:
            cfg[key] = parser(value.strip())  # type: ignore[operator]
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{p}:{lineno}: bad value for {key}: {exc}") from exc
    return cfg


def _merge(cli_value, file_cfg: dict, key: str):
    if cli_value is not None:
        return cli_value
    if key in file_cfg:
        return file_cfg[key]
    return DEFAULTS[key]


def _threads_value(threads) -> int | None:
    if threads is None:
        threads = DEFAULTS["threads"]
    threads = int(threads)
    if threads == 0:
        return os.cpu_count() or 1
    return threads


def _load_any_dataset(path: str):
    """Load the binary dataset format, or CSV when the name ends in .csv."""
    if str(path).lower().endswith(".csv"):
        return dataio.load_dataset_csv(path)
    return dataio.load_dataset(path)


def _forward_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SetHashError as exc:
            click.echo(f"error code={exc.code_name} message={exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


@click.group()
@click.version_option(package_name="sethash", prog_name="sethash")
def main() -> None:
    """Set-to-set hashing pipeline."""


# ---------------------------------------------------------------------------
# synth


@main.command()
@click.option("--classes", type=int, required=True, help="Number of class labels.")
@click.option("--sets-per-class", type=int, required=True)
@click.option("--points-per-set", type=int, required=True)
@click.option("--dim", type=int, required=True, help="Feature dimension.")
@click.option("--cluster-spread", type=float, default=1.0, show_default=True,
              help="Scale of per-set jitter and within-set scatter around each class center.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_forward_errors
def synth(classes, sets_per_class, points_per_set, dim, cluster_spread, seed, out) -> None:
    """Generate a labeled synthetic dataset of Gaussian class clusters.

    Each class gets a random center and a random per-dimension scatter shape;
    every set is the center plus an isotropic per-set offset plus shaped
    within-set noise.  Both jitters scale with --cluster-spread, so classes
    collapse onto their centers as the spread goes to zero.  Class identity
    is therefore carried by both location (the centers) and distribution
    shape (the scatter), giving both kernel families signal to work with.
    """
    if min(classes, sets_per_class, points_per_set, dim) < 1:
        raise DataFormatError("classes, sets-per-class, points-per-set and dim must all be >= 1")
    if cluster_spread < 0:
        raise DataFormatError(f"cluster-spread must be >= 0, got {cluster_spread}")
    rng = rng_for(seed, SEED_SYNTH)
    centers = rng.standard_normal((classes, dim))
    shapes = np.exp(0.5 * rng.standard_normal((classes, dim)))
    sets = []
    idx = 0
    for c in range(classes):
        for _ in range(sets_per_class):
            offset = cluster_spread * rng.standard_normal(dim)
            noise = 0.5 * cluster_spread * rng.standard_normal((points_per_set, dim)) * shapes[c]
            pts = centers[c] + offset + noise
            sets.append(PointSet(id=f"set{idx:05d}", points=pts, label=c + 1))
            idx += 1
    dataio.save_dataset(SetDataset(tuple(sets)), out)
    click.echo(f"wrote {len(sets)} sets ({classes} classes, {points_per_set} points, dim {dim}) to {out}")


# ---------------------------------------------------------------------------
# train


@main.command(name="train")
@click.option("--data", "data_path", type=str, required=True, help="Labeled dataset file.")
@click.option("--config", "config_path", type=str, default=None, help="key=value config file.")
@click.option("--out", "out_path", type=str, required=True, help="Output model file.")
@click.option("--bits", type=int, default=None, help=f"Hash code length [default: {DEFAULTS['bits']}].")
@click.option("--rounds", type=int, default=None, help=f"Boosting rounds per bit [default: {DEFAULTS['rounds']}].")
@click.option("--seed", type=int, default=None, help=f"[default: {DEFAULTS['seed']}]")
@click.option("--fraction", type=float, default=None, help=f"q-side fraction [default: {DEFAULTS['fraction']}].")
@click.option("--stratified/--no-stratified", default=None, help="Stratify the q/r split by label [default: stratified].")
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--nu1", type=float, default=None)
@click.option("--nu2", type=float, default=None)
@click.option("--nu3", type=float, default=None, help="[default: auto from pair counts]")
@click.option("--nu4", type=float, default=None, help="[default: auto from pair counts]")
@click.option("--max-outer", type=int, default=None)
@click.option("--conv-tol", type=float, default=None)
@click.option("--balance-tol", type=float, default=None)
@click.option("--max-sweeps", type=int, default=None)
@click.option("--pool-cap", type=int, default=None)
@click.option("--mu", type=float, default=None, help="[default: per-set median distance]")
@click.option("--gamma-g", type=float, default=None, help="[default: derived from mean point distance]")
@click.option("--gamma-s", type=float, default=None, help="[default: derived from descriptor distances]")
@click.option("--cov-ridge", type=float, default=None)
@click.option("--kernel-cache", type=str, default=None, help="Directory for cached kernel matrices.")
@click.option("--threads", type=int, default=None, envvar="SETHASH_THREADS",
              help="Worker threads for kernel matrices (0 = hardware count).")
@_forward_errors
def train_cmd(data_path, config_path, out_path, **options) -> None:
    """Train a hash model on a labeled dataset."""
    file_cfg = load_config_file(config_path) if config_path else {}

    def get(key):
        return _merge(options.get(key), file_cfg, key)

    kernel = KernelParams(
        mu=get("mu"), gamma_g=get("gamma_g"), gamma_s=get("gamma_s"), cov_ridge=get("cov_ridge")
    )
    cfg = TrainerConfig(
        bits=get("bits"),
        rounds=get("rounds"),
        alpha=get("alpha"),
        beta=get("beta"),
        nu1=get("nu1"),
        nu2=get("nu2"),
        nu3=get("nu3"),
        nu4=get("nu4"),
        max_outer=get("max_outer"),
        conv_tol=get("conv_tol"),
        balance_tol=get("balance_tol"),
        max_sweeps=get("max_sweeps"),
        pool_cap=get("pool_cap"),
        seed=get("seed"),
        kernel=kernel,
    )
    data = _load_any_dataset(data_path)
    split = split_qr(data, fraction=get("fraction"), seed=cfg.seed, stratified=get("stratified"))
    model = train(
        split,
        cfg,
        kernel_cache=options.get("kernel_cache"),
        threads=_threads_value(options.get("threads") if options.get("threads") is not None else file_cfg.get("threads")),
    )
    save_model(model, out_path)
    click.echo(
        f"trained {model.bits}-bit model on {len(split.q)}+{len(split.r)} sets: "
        f"converged={model.converged} outer_iterations={model.outer_iterations} -> {out_path}"
    )


# ---------------------------------------------------------------------------
# encode


@main.command()
@click.option("--model", "model_path", type=str, required=True)
@click.option("--data", "data_path", type=str, required=True)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--side", type=click.Choice([DATABASE_SIDE, QUERY_SIDE]), default=DATABASE_SIDE,
              show_default=True, help="Which side's hash functions to apply.")
@click.option("--bench", is_flag=True, help="Report encoding throughput.")
@_forward_errors
def encode(model_path, data_path, out_path, side, bench) -> None:
    """Encode a dataset into hash codes."""
    model = load_model(model_path)
    data = _load_any_dataset(data_path)
    start = time.perf_counter()
    codes = model.encode_dataset(data, side=side)
    elapsed = time.perf_counter() - start
    labels = data.labels if data.labeled else None
    save_code_index(build_index(codes, data.ids, labels), out_path)
    click.echo(f"encoded {len(codes)} sets at {model.bits} bits ({side} side) -> {out_path}")
    if bench:
        per_bit = elapsed / (len(codes) * model.bits)
        click.echo(
            f"bench: sets={len(codes)} bits={model.bits} total_seconds={elapsed:.6f} "
            f"per_bit_seconds={per_bit:.3e}"
        )


# ---------------------------------------------------------------------------
# query


@main.command()
@click.option("--index", "index_path", type=str, required=True, help="Database codes file.")
@click.option("--query", "query_path", type=str, required=True, help="Query codes file.")
@click.option("--config", "config_path", type=str, default=None, help="key=value config file.")
@click.option("--k", type=int, default=None, help=f"[default: {DEFAULTS['k']}]")
@_forward_errors
def query(index_path, query_path, config_path, k) -> None:
    """Rank database codes against each query code."""
    file_cfg = load_config_file(config_path) if config_path else {}
    k = _merge(k, file_cfg, "k")
    index = load_code_index(index_path)
    queries = load_code_index(query_path)
    for qi in range(len(queries)):
        for res in rank(index, queries.code(qi), k):
            click.echo(f"{queries.ids[qi]}\t{res.id}\t{res.distance}")


# ---------------------------------------------------------------------------
# eval


@main.command(name="eval")
@click.option("--index", "index_path", type=str, required=True, help="Labeled database codes file.")
@click.option("--queries", "queries_path", type=str, required=True, help="Labeled query codes file.")
@click.option("--config", "config_path", type=str, default=None, help="key=value config file.")
@click.option("--cutoffs", type=str, default=None, help="Comma-separated ranks [default: 100,400,1600].")
@click.option("--radius", "radii", type=int, multiple=True, help="Lookup radius (repeatable) [default: 2].")
@click.option("--out", "out_path", type=str, required=True, help="Output CSV file.")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render PNG figures next to the CSV.")
@click.option("--fig-dir", type=str, default=None, help="Figure directory [default: alongside --out].")
@click.option("--per-query", is_flag=True, help="Include per-query average precision rows.")
@click.option("--skip-empty-buckets", is_flag=True,
              help="Skip queries with empty lookup buckets instead of counting precision 0.")
@_forward_errors
def eval_cmd(index_path, queries_path, config_path, cutoffs, radii, out_path, figures, fig_dir,
             per_query, skip_empty_buckets) -> None:
    """Score labeled query codes against a labeled database."""
    file_cfg = load_config_file(config_path) if config_path else {}
    index = load_code_index(index_path)
    queries = load_code_index(queries_path)
    if queries.labels is None:
        raise DataFormatError("query codes file carries no labels; evaluation needs them")
    cut = _parse_cutoffs(cutoffs) if cutoffs is not None else _merge(None, file_cfg, "cutoffs")
    if radii:
        chosen_radii = tuple(radii)
    else:
        chosen_radii = (_merge(None, file_cfg, "radius"),)
    config = EvalConfig(
        cutoffs=cut,
        radii=chosen_radii,
        empty_bucket_zero=not skip_empty_buckets and _merge(None, file_cfg, "empty_bucket_zero"),
        per_query=per_query,
    )
    report = evaluate(
        index,
        [(queries.code(i), queries.labels[i]) for i in range(len(queries))],
        config,
        query_ids=queries.ids,
    )
    emit_curves(report, out_path)
    click.echo(f"MAP {report.map:.6f} over {report.query_count} queries -> {out_path}")
    if figures:
        from .plots import render_report

        target = Path(fig_dir) if fig_dir else Path(out_path).resolve().parent
        for path in render_report(report, target, stem=Path(out_path).stem):
            click.echo(f"figure {path}")


# ---------------------------------------------------------------------------
# baseline (hyperplane LSH on set means; used for comparisons)


@main.command(name="baseline-encode")
@click.option("--data", "data_path", type=str, required=True, help="Dataset used to size the planes.")
@click.option("--apply-to", "apply_path", type=str, default=None,
              help="Dataset to encode [default: --data].")
@click.option("--bits", type=int, default=None, help=f"[default: {DEFAULTS['bits']}]")
@click.option("--seed", type=int, default=None, help=f"[default: {DEFAULTS['seed']}]")
@click.option("--out", "out_path", type=str, required=True)
@_forward_errors
def baseline_encode(data_path, apply_path, bits, seed, out_path) -> None:
    """Encode set means with seeded random hyperplanes."""
    data = _load_any_dataset(data_path)
    target = _load_any_dataset(apply_path) if apply_path else data
    baseline = lsh_baseline_train(
        data, bits if bits is not None else DEFAULTS["bits"], seed if seed is not None else DEFAULTS["seed"]
    )
    codes = baseline.encode_dataset(target)
    labels = target.labels if target.labeled else None
    save_code_index(build_index(codes, target.ids, labels), out_path)
    click.echo(f"baseline-encoded {len(codes)} sets at {baseline.bits} bits -> {out_path}")


if __name__ == "__main__":
    main()
