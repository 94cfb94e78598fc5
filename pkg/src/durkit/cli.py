"""Command-line entry point: corpus generation, training, prediction, evaluation, sweeps.

Every command is deterministic given --seed; all tabular outputs are CSV with
a schema comment line and a header row. Option precedence is CLI flag, then
--config JSON file, then built-in default.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import click
import torch

from .corpus import (
    SyntheticSpec,
    generate_corpus,
    read_alignments,
    split_corpus,
    write_alignments,
)
from .errors import DurkitError
from .masking import MaskPolicy
from .nnet import TransformerConfig, load_checkpoint, save_checkpoint
from .pipeline import PredictSettings, evaluate_records, predict_records, sweep_models
from .training import TrainSettings, train_model

DEFAULT_RATES = "0.5,0.75,1.0,1.5,2.0"


def _fmt(x) -> str:
    if isinstance(x, float):
        return "NA" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def _write_csv(path, schema: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema: {schema}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}")


def _pick(cli_value, config: dict, key: str, default):
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


@click.group()
@click.option("--seed", type=int, default=None, help="Global random seed.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON config file; CLI flags win over its keys.")
@click.pass_context
def main(ctx, seed, config_path):
    """Total-duration-aware phoneme duration modeling toolkit."""
    torch.set_num_threads(1)  # bit-exact reproducibility
    config = _load_config(config_path)
    ctx.obj = {"config": config, "seed": _pick(seed, config, "seed", 0)}


@main.command("gen-corpus")
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="SyntheticSpec JSON; defaults to the built-in spec.")
@click.option("--n", type=int, required=True, help="Number of utterances.")
@click.option("--out", type=click.Path(), required=True, help="Output alignment JSONL.")
@click.pass_context
def cmd_gen_corpus(ctx, spec_path, n, out):
    """Generate a synthetic alignment corpus."""
    try:
        spec = SyntheticSpec.load(spec_path) if spec_path else SyntheticSpec()
        spec = replace(spec, seed=ctx.obj["seed"]) if ctx.obj["seed"] is not None else spec
        records = generate_corpus(spec, n)
        write_alignments(records, out)
    except DurkitError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {len(records)} utterances to {out}")


@main.command("train")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--family", type=click.Choice(["regression", "fm", "maskgit"]), default=None)
@click.option("--variant", type=click.Choice(["baseline", "tda", "tda_e2e"]), default=None)
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--preset", type=click.Choice(["small", "large"]), default=None)
@click.option("--max-duration", type=int, default=None)
@click.option("--mask-all-prob", type=float, default=None)
@click.option("--span-lo", type=float, default=None)
@click.option("--span-hi", type=float, default=None)
@click.option("--train-fraction", type=float, default=None,
              help="Train on this fraction of the corpus (rest is held out).")
@click.option("--resume", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True, help="Checkpoint output path.")
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Training-log CSV (default: <out>.log.csv).")
@click.pass_context
def cmd_train(ctx, corpus, family, variant, steps, batch_size, lr, preset,
              max_duration, mask_all_prob, span_lo, span_hi, train_fraction,
              resume, out, log_path):
    """Train a duration model on an alignment corpus."""
    cfg = ctx.obj["config"]
    seed = ctx.obj["seed"]
    family = _pick(family, cfg, "family", "regression")
    variant = _pick(variant, cfg, "variant", "baseline")
    try:
        records = read_alignments(corpus)
        fraction = _pick(train_fraction, cfg, "train_fraction", None)
        if fraction is not None:
            records, _ = split_corpus(records, fraction, seed)
        policy = MaskPolicy(
            mask_all_probability=_pick(mask_all_prob, cfg, "mask_all_probability", 0.2),
            span_fraction_range=(
                _pick(span_lo, cfg, "span_lo", 0.1),
                _pick(span_hi, cfg, "span_hi", 1.0),
            ),
        )
        settings = TrainSettings(
            family_tag=f"{family}/{variant}",
            config=TransformerConfig.preset(_pick(preset, cfg, "preset", "small")),
            steps=_pick(steps, cfg, "steps", 2000),
            batch_size=_pick(batch_size, cfg, "batch_size", 8),
            lr=_pick(lr, cfg, "lr", 1e-3),
            seed=seed,
            mask_policy=policy,
            max_duration=_pick(max_duration, cfg, "max_duration", 256),
        )
        ckpt = load_checkpoint(resume) if resume else None
        ckpt, log = train_model(records, settings, resume=ckpt)
        save_checkpoint(ckpt, out)
        _write_csv(
            log_path or f"{out}.log.csv",
            "durkit.train_log.v1",
            ["step", "loss"],
            log,
        )
    except DurkitError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"trained {settings.family_tag} for {settings.steps} steps -> {out}")


@main.command("predict")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--alignments", type=click.Path(exists=True), required=True,
              help="Ground-truth alignments supplying prompts and targets.")
@click.option("--rate", type=float, default=None,
              help="Speech rate: ground-truth masked frames / target frames.")
@click.option("--target-frames", type=int, default=None,
              help="Fixed masked-frame target for every utterance (overrides --rate).")
@click.option("--prompt-frames", type=int, default=None)
@click.option("--nfe", type=int, default=None)
@click.option("--guidance", type=float, default=None)
@click.option("--num-samples", type=int, default=None)
@click.option("--decode-steps", type=int, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--no-final-lr", is_flag=True, default=False,
              help="Skip integer apportionment (regression/tda_e2e only).")
@click.option("--out", type=click.Path(), required=True, help="Predicted alignment JSONL.")
@click.option("--stats-out", type=click.Path(), default=None,
              help="Per-utterance stats CSV (pre-regulation deviations).")
@click.pass_context
def cmd_predict(ctx, checkpoint, alignments, rate, target_frames, prompt_frames,
                nfe, guidance, num_samples, decode_steps, temperature,
                no_final_lr, out, stats_out):
    """Predict masked durations for every utterance of an alignment file."""
    cfg = ctx.obj["config"]
    try:
        ckpt = load_checkpoint(checkpoint)
        records = read_alignments(alignments)
        settings = PredictSettings(
            rate=_pick(rate, cfg, "rate", 1.0) if target_frames is None else None,
            target_frames=target_frames,
            prompt_frames=_pick(prompt_frames, cfg, "prompt_frames", 40),
            seed=ctx.obj["seed"],
            nfe=_pick(nfe, cfg, "nfe", 32),
            guidance_strength=_pick(guidance, cfg, "guidance_strength", 0.7),
            num_samples=_pick(num_samples, cfg, "num_samples", 8),
            decode_steps=_pick(decode_steps, cfg, "decode_steps", 8),
            temperature=_pick(temperature, cfg, "temperature", 1.0),
            confidence_noise=_pick(None, cfg, "confidence_noise", 4.5),
            final_lr=not no_final_lr,
        )
        predicted, stats, skipped = predict_records(ckpt, records, settings)
        write_alignments(predicted, out)
        if stats_out:
            _write_csv(
                stats_out,
                "durkit.predict_stats.v1",
                ["id", "d_tgt", "masked", "alpha", "pre_lr_deviation", "total_duration_error"],
                [
                    (s.utt_id, s.d_tgt, s.masked, s.alpha, s.pre_lr_deviation,
                     s.total_duration_error)
                    for s in stats
                ],
            )
    except DurkitError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"predicted {len(predicted)} utterances -> {out}")
    if skipped:
        for s in skipped:
            click.echo(f"skipped {s.utt_id}: {s.reason}", err=True)
        sys.exit(1)


@main.command("eval")
@click.option("--reference", type=click.Path(exists=True), required=True)
@click.option("--predicted", type=click.Path(exists=True), required=True)
@click.option("--silence-ids", type=str, default=None, help="Comma-separated phone ids.")
@click.option("--prompt-frames", type=int, default=None)
@click.option("--rate", type=float, default=None,
              help="Rate used at prediction time (to recompute targets).")
@click.option("--stats", "stats_path", type=click.Path(exists=True), default=None,
              help="Stats CSV from predict, for pre-regulation deviations.")
@click.option("--out", type=click.Path(), required=True, help="Metrics CSV.")
@click.pass_context
def cmd_eval(ctx, reference, predicted, silence_ids, prompt_frames, rate, stats_path, out):
    """Score a predicted alignment file against its reference."""
    cfg = ctx.obj["config"]
    try:
        ref = read_alignments(reference)
        pred = read_alignments(predicted)
        silence = frozenset(
            int(t) for t in _pick(silence_ids, cfg, "silence_ids", "0").split(",")
        )
        stats = _read_stats(stats_path) if stats_path else None
        summary = evaluate_records(
            ref,
            pred,
            silence_ids=silence,
            prompt_frames=_pick(prompt_frames, cfg, "prompt_frames", 40),
            rate=_pick(rate, cfg, "rate", 1.0),
            stats=stats,
        )
        rows = [
            (r.utt_id, r.fdd, r.total_duration_error, r.pre_lr_deviation, "NA", "NA", "")
            for r in summary.rows
        ]
        rows.append(
            (
                "SUMMARY",
                summary.pooled_fdd,
                summary.mean_total_duration_error,
                summary.mean_pre_lr_deviation,
                "NA",
                "NA",
                ";".join(summary.exclusions),
            )
        )
        _write_csv(
            out,
            "durkit.eval.v1",
            ["id", "fdd", "total_duration_error", "pre_lr_deviation", "wer", "sim", "exclusions"],
            rows,
        )
    except DurkitError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"fdd={_fmt(summary.pooled_fdd)} -> {out}")
    if summary.exclusions:
        for utt_id in summary.exclusions:
            click.echo(f"excluded {utt_id}: missing or mismatched", err=True)
        sys.exit(1)


def _read_stats(path) -> dict[str, float]:
    stats = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in fh if not r.startswith("#")]
    for row in csv.DictReader(rows):
        value = row["pre_lr_deviation"]
        stats[row["id"]] = float("nan") if value == "NA" else float(value)
    return stats


@main.command("sweep")
@click.option("--checkpoint", "checkpoints", type=click.Path(exists=True), multiple=True,
              required=True)
@click.option("--alignments", type=click.Path(exists=True), required=True)
@click.option("--rates", type=str, default=None, help=f"Comma list, default {DEFAULT_RATES}.")
@click.option("--seeds", "n_seeds", type=int, default=None, help="Seeds per experiment.")
@click.option("--prompt-frames", type=int, default=None)
@click.option("--limit", type=int, default=None, help="Evaluate only the first N utterances.")
@click.option("--nfe", type=int, default=None)
@click.option("--guidance", type=float, default=None)
@click.option("--num-samples", type=int, default=None)
@click.option("--decode-steps", type=int, default=None)
@click.option("--out", type=click.Path(), required=True, help="Sweep CSV.")
@click.pass_context
def cmd_sweep(ctx, checkpoints, alignments, rates, n_seeds, prompt_frames, limit,
              nfe, guidance, num_samples, decode_steps, out):
    """Rate sweep across one or more checkpoints, with per-seed rows."""
    cfg = ctx.obj["config"]
    try:
        records = read_alignments(alignments)
        records = sorted(records, key=lambda r: r.utt_id)[: limit or len(records)]
        rate_list = [float(r) for r in _pick(rates, cfg, "rates", DEFAULT_RATES).split(",")]
        base = PredictSettings(
            rate=1.0,
            prompt_frames=_pick(prompt_frames, cfg, "prompt_frames", 40),
            seed=ctx.obj["seed"],
            nfe=_pick(nfe, cfg, "nfe", 32),
            guidance_strength=_pick(guidance, cfg, "guidance_strength", 0.7),
            num_samples=_pick(num_samples, cfg, "num_samples", 8),
            decode_steps=_pick(decode_steps, cfg, "decode_steps", 8),
            confidence_noise=_pick(None, cfg, "confidence_noise", 4.5),
        )
        loaded = [(Path(p).stem, load_checkpoint(p)) for p in checkpoints]
        rows, skipped = sweep_models(
            loaded, records, rate_list, n_seeds=_pick(n_seeds, cfg, "seeds", 3), base=base
        )
        _write_csv(
            out,
            "durkit.sweep.v1",
            ["model", "rate", "seed", "fdd", "pre_lr_deviation", "total_duration_error"],
            [(r.model, r.rate, r.seed, r.fdd, r.pre_lr_deviation, r.total_duration_error)
             for r in rows],
        )
    except DurkitError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {len(rows)} sweep rows -> {out}")
    if skipped:
        seen = set()
        for s in skipped:
            key = (s.utt_id, s.reason)
            if key not in seen:
                click.echo(f"skipped {s.utt_id}: {s.reason}", err=True)
                seen.add(key)
        sys.exit(1)


if __name__ == "__main__":
    main()
