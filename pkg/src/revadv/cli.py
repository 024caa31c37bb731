"""Command-line interface.

Exit codes: 0 success, 1 attack/verification failure, 2 usage error.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import rdhgi
from .attack import AttackConfig, run_attack, write_trace_csv
from .imagecore import load_png, psnr as psnr_of, save_png, to_grayscale
from .oracle import make_oracle
from .pipeline import (AttackFailed, EmptyCorpus, RunConfig, make_rae,
                       resolve_payload, run_corpus, verify)


def _attack_options(fn):
    opts = [
        click.option("--mode", type=click.Choice(["targeted", "untargeted"]),
                     default="targeted", show_default=True),
        click.option("--target-class", type=int, default=None),
        click.option("--true-class", type=int, default=None),
        click.option("--step-size", type=float, default=0.2, show_default=True),
        click.option("--beam-size", type=int, default=3, show_default=True),
        click.option("--decay", type=float, default=1 / 3, show_default=True),
        click.option("--budget", type=int, default=20000, show_default=True),
        click.option("--freq-fraction", type=str, default=None,
                     help="e.g. 1/3; default depends on image size"),
        click.option("--seed", type=int, default=1, show_default=True),
        click.option("--no-beam", is_flag=True, help="disable the beam recorder"),
        click.option("--oracle", "oracle_spec", default="builtin:mlp:1",
                     show_default=True,
                     help="builtin:linear:SEED | builtin:mlp:SEED | http://HOST:PORT"),
        click.option("--classes", type=int, default=10, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_attack_config(mode, target_class, true_class, step_size, beam_size,
                         decay, budget, freq_fraction, seed, no_beam) -> AttackConfig:
    try:
        return AttackConfig(
            mode=mode, target_class=target_class, true_class=true_class,
            step_size=step_size, beam_size=beam_size, decay=decay, budget=budget,
            frequency_fraction=Fraction(freq_fraction) if freq_fraction else None,
            seed=seed, beam_enabled=not no_beam)
    except ValueError as exc:
        raise click.UsageError(str(exc))


@click.group()
def main():
    """Reversible adversarial examples: beam-search attack + grayscale-invariant
    reversible data hiding."""


@main.command()
@click.argument("source", type=click.Path(exists=True))
@_attack_options
@click.option("--out", type=click.Path(), default="out", show_default=True)
def attack(source, oracle_spec, classes, out, **kw):
    """Run the black-box attack on one image; writes the AE and a trace CSV."""
    x = load_png(source)
    cfg = _build_attack_config(**kw)
    oracle = make_oracle(oracle_spec, x.height, x.width, classes)
    outcome = run_attack(x, cfg, oracle)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(source).stem
    save_png(outcome.adversarial_image, out_dir / f"{stem}.ae.png")
    write_trace_csv(outcome.trace, out_dir / f"{stem}.trace.csv")
    click.echo(json.dumps({
        "success": outcome.success, "queries_used": outcome.queries_used,
        "delta_l2": outcome.delta_l2, "termination": outcome.termination,
    }, sort_keys=True))
    if not outcome.success:
        sys.exit(1)


@main.command()
@click.argument("cover", type=click.Path(exists=True))
@click.option("--payload", default="random:64:1", show_default=True,
              help="FILE | random:BITS:SEED")
@click.option("--out", type=click.Path(), required=True, help="stego PNG path")
def embed(cover, payload, out):
    """Embed a payload reversibly; the grayscale plane is unchanged."""
    img = load_png(cover)
    bits = resolve_payload(payload)
    try:
        stego = rdhgi.embed(img, bits)
    except rdhgi.CodecError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}")
    save_png(stego, out)
    click.echo(f"embedded {len(bits)} bits -> {out}")


@main.command()
@click.argument("stego", type=click.Path(exists=True))
@click.option("--payload-out", type=click.Path(), default=None,
              help="write recovered payload bytes here")
@click.option("--cover-out", type=click.Path(), default=None,
              help="write recovered cover PNG here")
def extract(stego, payload_out, cover_out):
    """Extract the payload and recover the cover bit-exactly."""
    img = load_png(stego)
    try:
        bits, cover = rdhgi.extract(img)
    except rdhgi.CodecError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}")
    if payload_out:
        Path(payload_out).write_bytes(rdhgi.pack_bits(bits))
    if cover_out:
        save_png(cover, cover_out)
    click.echo(f"extracted {len(bits)} bits")


@main.command()
@click.argument("source", type=click.Path(exists=True))
@_attack_options
@click.option("--payload", default="random:64:1", show_default=True)
@click.option("--truncate-payload", is_flag=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
def rae(source, oracle_spec, classes, payload, truncate_payload, out, **kw):
    """Attack then embed: produce a reversible adversarial example."""
    x = load_png(source)
    cfg = _build_attack_config(**kw)
    oracle = make_oracle(oracle_spec, x.height, x.width, classes)
    bits = resolve_payload(payload)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(source).stem
    try:
        rae_img, ae_img, report, outcome = make_rae(x, bits, cfg, oracle,
                                                    truncate_payload)
    except AttackFailed as exc:
        click.echo(f"attack failed: {exc}", err=True)
        sys.exit(1)
    except rdhgi.CodecError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}")
    save_png(rae_img, out_dir / f"{stem}.rae.png")
    save_png(ae_img, out_dir / f"{stem}.ae.png")
    write_trace_csv(outcome.trace, out_dir / f"{stem}.trace.csv")
    report.trace_path = f"{stem}.trace.csv"
    report_path = out_dir / f"{stem}.report.json"
    with open(report_path, "w") as fh:
        json.dump(asdict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")
    click.echo(json.dumps(asdict(report), sort_keys=True))


@main.command("verify")
@click.argument("rae_png", type=click.Path(exists=True))
@click.option("--reference", type=click.Path(exists=True), default=None,
              help="expected recovered image (the AE)")
def verify_cmd(rae_png, reference):
    """Extract and check a reversible adversarial example."""
    img = load_png(rae_png)
    ref = load_png(reference) if reference else None
    verdict = verify(img, ref)
    click.echo(json.dumps({
        "ok": verdict.ok, "extract_ok": verdict.extract_ok,
        "payload_bits": verdict.payload_bits,
        "matches_reference": verdict.matches_reference,
        "gray_matches_reference": verdict.gray_matches_reference,
        "cause": verdict.cause,
    }, sort_keys=True))
    if not verdict.ok:
        sys.exit(1)


@main.command("psnr")
@click.argument("a", type=click.Path(exists=True))
@click.argument("b", type=click.Path(exists=True))
def psnr_cmd(a, b):
    """PSNR between two PNGs, in dB."""
    value = psnr_of(load_png(a), load_png(b))
    click.echo("inf" if value == float("inf") else f"{value:.4f}")


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
def gray(source, out):
    """Write the exact grayscale plane of a PNG."""
    plane = to_grayscale(load_png(source))
    Image.fromarray(np.asarray(plane.values), mode="L").save(out, format="PNG")
    click.echo(f"wrote {out}")


@main.command()
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
@_attack_options
@click.option("--payload", default="random:64:1", show_default=True)
@click.option("--truncate-payload", is_flag=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
def corpus(corpus_dir, oracle_spec, classes, payload, truncate_payload,
           workers, out, **kw):
    """Run the full pipeline over every PNG in a directory."""
    cfg = RunConfig(
        attack=_build_attack_config(**kw), oracle_spec=oracle_spec,
        payload_spec=payload, corpus_dir=corpus_dir, out_dir=out,
        workers=workers, num_classes=classes, truncate_payload=truncate_payload)
    try:
        summary = run_corpus(cfg)
    except EmptyCorpus as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(summary, sort_keys=True))


if __name__ == "__main__":
    main()
