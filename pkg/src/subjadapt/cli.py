"""``subjadapt`` command line.

Exit status is 0 on success, 1 for runtime or domain errors (missing files,
malformed data, capacity problems, divergence) and 2 for usage errors.
Metric files never contain timestamps or host details, so repeating a command
with the same flags reproduces them byte for byte.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import dataio, gradcheck, synthgen, trainer
from .errors import SubjAdaptError, ValidationError
from .model import load_checkpoint, save_checkpoint


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (SubjAdaptError, OSError) as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from None


def _usage(fn, **kwargs):
    """Build a config object, turning validation failures into usage errors."""
    try:
        return fn(**kwargs)
    except ValidationError as exc:
        raise click.UsageError(str(exc)) from None


def _writable(path: str, option: str) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if p.is_dir() or not parent.is_dir() or not os.access(parent, os.W_OK):
        raise click.BadParameter(f"cannot write to {path}", param_hint=option)
    return p


def _echo_config(**sections):
    click.echo("config " + json.dumps(sections, sort_keys=True), err=True)


def _write_text(path, text: str):
    if path is None:
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text)


def _progress(run: dict):
    click.echo(f"run {run['run']} {run['mode']} k={run['k']}: test top-1 {run['test_top1']:.2f} "
               f"top-3 {run['test_top3']:.2f} (best epoch {run['best_epoch']})", err=True)


def _crop_options(fn):
    fn = click.option("--crop-end", type=float, default=480.0, show_default=True,
                      help="Crop window end in ms (exclusive).")(fn)
    fn = click.option("--crop-start", type=float, default=320.0, show_default=True,
                      help="Crop window start in ms.")(fn)
    fn = click.option("--no-crop", is_flag=True, help="Use whole records.")(fn)
    return fn


def _split_options(fn):
    fn = click.option("--test-fraction", type=float, default=1 / 6, show_default="1/6")(fn)
    fn = click.option("--val-fraction", type=float, default=1 / 6, show_default="1/6")(fn)
    return fn


def _train_options(fn):
    for opt in reversed([
        click.option("--lambda", "lam", type=float, default=1.0, show_default=True),
        click.option("--mmd-loc", type=click.Choice(trainer.LOCATIONS), default="after_f",
                     show_default=True),
        click.option("--epochs", type=click.IntRange(min=1), default=200, show_default=True),
        click.option("--lr", type=float, default=1e-3, show_default=True),
        click.option("--per-source", type=click.IntRange(min=1), default=200, show_default=True),
        click.option("--d-seq", type=click.IntRange(min=1), default=None,
                     help="GRU state size [default: input channels]."),
        click.option("--d-emb", type=click.IntRange(min=1), default=None,
                     help="Embedding size [default: input channels]."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--deterministic", is_flag=True,
                     help="Guarantee bit-reproducible output (runs are sequential)."),
    ]):
        fn = opt(fn)
    return fn


def _protocol(target, k, runs, seed, val_fraction, test_fraction, no_crop, crop_start,
              crop_end, rate, modes=trainer.MODES):
    return _usage(trainer.Protocol, target_subject=target, k=k, modes=tuple(modes), n_runs=runs,
                  base_seed=seed, val_fraction=val_fraction, test_fraction=test_fraction,
                  crop_ms=None if no_crop else (crop_start, crop_end), sampling_rate_hz=rate)


def _train_config(mode, lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed, deterministic):
    return _usage(trainer.TrainConfig, mode=mode, lam=lam, mmd_location=mmd_loc, epochs=epochs,
                  lr=lr, per_source_count=per_source, d_seq=d_seq, d_emb=d_emb, seed=seed,
                  deterministic=deterministic)


@click.group(cls=_Group, context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Subject-adaptive k-shot classification of multichannel sequences."""


# -- gen ----------------------------------------------------------------------

@main.command()
@click.option("--subjects", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--classes", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--per-class", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--channels", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--timesteps", type=click.IntRange(min=1), default=500, show_default=True)
@click.option("--shift", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0), default=0.5, show_default=True)
@click.option("--rate", type=click.IntRange(min=1), default=1000, show_default=True,
              help="Sampling rate in Hz.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="Output EEGS file.")
def gen(subjects, classes, per_class, channels, timesteps, shift, noise, rate, seed, out):
    """Generate a synthetic multi-subject dataset."""
    out = _writable(out, "--out")
    cfg = _usage(synthgen.SynthConfig, n_subjects=subjects, n_classes=classes,
                 per_class=per_class, n_channels=channels, n_timesteps=timesteps,
                 shift_strength=shift, noise_std=noise, seed=seed, sampling_rate_hz=rate)
    _echo_config(synth=cfg.to_dict())
    header, records = synthgen.generate(cfg)
    dataio.write_dataset(out, header, records)
    probe = synthgen.shift_probe(records)
    click.echo(f"wrote {out}: {header.n_samples} records, {header.n_subjects} subjects, "
               f"{header.n_classes} classes, {header.n_channels} x {header.n_timesteps} "
               f"@ {header.sampling_rate_hz} Hz")
    if probe["mean"] is not None:
        click.echo(f"mean inter-subject class-mean distance: {probe['mean']:.6f}")


# -- import -------------------------------------------------------------------

@main.command("import")
@click.option("--manifest", required=True, help="Lines of 'subject label path'.")
@click.option("--out", required=True, help="Output EEGS file.")
@click.option("--rate", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--classes", type=click.IntRange(min=1), default=None,
              help="Number of classes [default: max label + 1].")
@click.option("--subjects", type=click.IntRange(min=1), default=None,
              help="Number of subjects [default: max subject id + 1].")
def import_(manifest, out, rate, classes, subjects):
    """Convert text signal matrices listed in a manifest to an EEGS file."""
    out = _writable(out, "--out")
    header, _ = dataio.import_text(manifest, out, rate, classes, subjects)
    click.echo(f"wrote {out}: {header.n_samples} records, {header.n_channels} x "
               f"{header.n_timesteps}")


# -- train / eval -------------------------------------------------------------

@main.command()
@click.option("--data", required=True, help="EEGS dataset.")
@click.option("--target", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--k", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--mode", type=click.Choice(trainer.MODES), default="ours", show_default=True)
@_train_options
@_split_options
@_crop_options
@click.option("--out", default=None, help="Checkpoint (MADP) path.")
@click.option("--metrics", default=None, help="Run record output (one JSON line).")
def train(data, target, k, mode, lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed,
          deterministic, val_fraction, test_fraction, no_crop, crop_start, crop_end, out, metrics):
    """Train one model on a k-shot episode of the target subject."""
    out = _writable(out, "--out") if out else None
    metrics = _writable(metrics, "--metrics") if metrics else None
    config = _train_config(mode, lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed,
                           deterministic)
    header, records = dataio.load_dataset(data)
    protocol = _protocol(target, k, 1, seed, val_fraction, test_fraction, no_crop, crop_start,
                         crop_end, header.sampling_rate_hz, (mode,))
    _echo_config(train=config.to_dict(), protocol=protocol.to_dict(), data=str(data))
    records = trainer.prepare_records(records, protocol)
    split = dataio.build_episode(records, target, k, seed, val_fraction, test_fraction,
                                 header.n_classes)
    params, history = trainer.fit(split, config, header.n_classes)
    run = trainer.run_record(mode, split, config, params, history, 0, header.n_classes)
    run["protocol"] = protocol.to_dict()
    if out:
        save_checkpoint(out, params)
    if metrics:
        metrics.write_text(json.dumps(run, sort_keys=True) + "\n")
    click.echo(f"{mode} k={k} target={target}: val top-1 {run['val_top1']:.2f}, "
               f"test top-1 {run['test_top1']:.2f}, top-3 {run['test_top3']:.2f} "
               f"(best epoch {run['best_epoch']})")


@main.command("eval")
@click.option("--checkpoint", required=True, help="MADP checkpoint.")
@click.option("--data", required=True, help="EEGS dataset.")
@click.option("--target", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--k", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Episode seed; use the training seed to score the same split.")
@click.option("--split", "which", type=click.Choice(["train", "val", "test"]), default="test",
              show_default=True)
@click.option("--deterministic", is_flag=True)
@_split_options
@_crop_options
@click.option("--metrics", default=None, help="Write the scores as one JSON line.")
def eval_(checkpoint, data, target, k, seed, which, deterministic, val_fraction, test_fraction,
          no_crop, crop_start, crop_end, metrics):
    """Score a checkpoint on one split of the target subject."""
    metrics = _writable(metrics, "--metrics") if metrics else None
    params = load_checkpoint(checkpoint)
    header, records = dataio.load_dataset(data)
    protocol = _protocol(target, k, 1, seed, val_fraction, test_fraction, no_crop, crop_start,
                         crop_end, header.sampling_rate_hz)
    _echo_config(protocol=protocol.to_dict(), checkpoint=str(checkpoint), data=str(data),
                 split=which)
    records = trainer.prepare_records(records, protocol)
    split = dataio.build_episode(records, target, k, seed, val_fraction, test_fraction,
                                 header.n_classes)
    chosen = {"train": split.target_train, "val": split.target_val, "test": split.target_test}[which]
    scores = trainer.evaluate(params, chosen)
    result = {"split": which, "n": len(chosen), "top1": scores[1], "top3": scores[3],
              "target": target, "k": k, "seed": seed}
    line = json.dumps(result, sort_keys=True) + "\n"
    if metrics:
        metrics.write_text(line)
    click.echo(line, nl=False)


# -- multi-run experiments ----------------------------------------------------

def _experiment_options(fn):
    fn = click.option("--split", "splits", type=click.Choice(["val", "test"]), multiple=True,
                      default=("test",), show_default=True, help="Splits to summarize.")(fn)
    fn = click.option("--metrics", default=None, help="Per-run records (JSON lines).")(fn)
    fn = click.option("--out", default=None, help="Summary CSV [default: stdout].")(fn)
    fn = click.option("--runs", type=click.IntRange(min=1), default=5, show_default=True)(fn)
    return fn


def _run(records, header, protocols, config, variants, splits, out, metrics):
    runs = []
    for protocol in protocols:
        report = trainer.run_experiment(records, protocol, config, variants, header.n_classes,
                                        progress=_progress)
        runs += report.runs
    report = trainer.MetricsReport(runs, {})
    if metrics:
        Path(metrics).write_text(report.to_jsonl())
    _write_text(out, report.to_csv(splits))


@main.command()
@click.option("--data", required=True, help="EEGS dataset.")
@click.option("--target", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--k", "ks", type=click.IntRange(min=1), multiple=True, default=(1,),
              show_default=True, help="Repeat for several k values.")
@_train_options
@_split_options
@_crop_options
@_experiment_options
def ablate(data, target, ks, lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed,
           deterministic, val_fraction, test_fraction, no_crop, crop_start, crop_end, runs, out,
           metrics, splits):
    """Compare alignment after the encoder with alignment after the embedding."""
    out = _writable(out, "--out") if out else None
    metrics = _writable(metrics, "--metrics") if metrics else None
    config = _train_config("ours", lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed,
                           deterministic)
    header, records = dataio.load_dataset(data)
    protocols = [_protocol(target, k, runs, seed, val_fraction, test_fraction, no_crop,
                           crop_start, crop_end, header.sampling_rate_hz, ("ours",)) for k in ks]
    variants = [(loc, replace(config, mmd_location=loc)) for loc in trainer.LOCATIONS]
    _echo_config(train=config.to_dict(), protocols=[p.to_dict() for p in protocols],
                 variants=[label for label, _ in variants], data=str(data))
    _run(records, header, protocols, config, variants, splits, out, metrics)


@main.command("sweep-k")
@click.option("--data", required=True, help="EEGS dataset.")
@click.option("--target", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--k", "ks", type=click.IntRange(min=1), multiple=True, default=(1, 2, 3, 4, 5),
              show_default=True)
@click.option("--mode", "modes", type=click.Choice(trainer.MODES), multiple=True,
              default=trainer.MODES, show_default=True)
@_train_options
@_split_options
@_crop_options
@_experiment_options
def sweep_k(data, target, ks, modes, lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed,
            deterministic, val_fraction, test_fraction, no_crop, crop_start, crop_end, runs, out,
            metrics, splits):
    """Accuracy of every mode as the number of target shots grows."""
    out = _writable(out, "--out") if out else None
    metrics = _writable(metrics, "--metrics") if metrics else None
    config = _train_config("ours", lam, mmd_loc, epochs, lr, per_source, d_seq, d_emb, seed,
                           deterministic)
    header, records = dataio.load_dataset(data)
    protocols = [_protocol(target, k, runs, seed, val_fraction, test_fraction, no_crop,
                           crop_start, crop_end, header.sampling_rate_hz, modes) for k in ks]
    _echo_config(train=config.to_dict(), protocols=[p.to_dict() for p in protocols],
                 data=str(data))
    _run(records, header, protocols, config, None, splits, out, metrics)


@main.command()
@click.argument("files", nargs=-1, required=True)
@click.option("--split", "splits", type=click.Choice(["val", "test"]), multiple=True,
              default=("test",), show_default=True)
@click.option("--out", default=None, help="Summary CSV [default: stdout].")
def report(files, splits, out):
    """Summarize stored run records (JSON lines) as CSV."""
    out = _writable(out, "--out") if out else None
    runs = []
    for path in files:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                run = json.loads(line)
            except json.JSONDecodeError as exc:
                raise click.ClickException(f"{path}:{lineno}: not a JSON record ({exc.msg})")
            missing = [key for key in ("mode", "k", "target", "val_top1", "test_top1")
                       if key not in run]
            if missing:
                raise click.ClickException(f"{path}:{lineno}: record lacks {missing}")
            runs.append(run)
    if not runs:
        raise click.ClickException("no run records found")
    _write_text(out, trainer.MetricsReport(runs, {}).to_csv(splits))


@main.command("gradcheck")
@click.option("--trials", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck_(trials, seed):
    """Check analytic gradients against central differences."""
    results = gradcheck.run_suite(trials, seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status} {r.name}: max error {r.error:.3e} (tolerance {r.tolerance:.0e})")
        click.echo(f"  {r.name} took {r.seconds:.1f} s", err=True)
    if not all(r.passed for r in results):
        sys.exit(1)


if __name__ == "__main__":
    main()
