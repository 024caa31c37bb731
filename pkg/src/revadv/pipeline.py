"""End-to-end composition: attack, embed, verify, metrics, corpus runner."""

from __future__ import annotations

import concurrent.futures
import csv
import json
import statistics
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rdhgi
from .attack import AttackConfig, run_attack, success_predicate, write_trace_csv
from .imagecore import ColorImage, dequantize, load_png, psnr, save_png, to_grayscale
from .oracle import CountingOracle, make_oracle


class AttackFailed(Exception):
    def __init__(self, message: str, queries_used: int):
        super().__init__(message)
        self.queries_used = queries_used


class EmptyCorpus(Exception):
    pass


@dataclass
class RaeReport:
    attack_success: bool
    rae_success: bool
    queries_used: int
    psnr_rae_vs_source: float
    psnr_rae_vs_ae: float
    psnr_ae_vs_source: float
    l2_delta: float
    l2_rdh: float
    l2_total: float
    payload_bits: int
    trace_path: str = ""


@dataclass
class RunConfig:
    attack: AttackConfig
    oracle_spec: str
    payload_spec: str = "random:64:1"
    corpus_dir: str = ""
    out_dir: str = "out"
    workers: int = 1
    num_classes: int = 10
    truncate_payload: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def resolve_payload(spec: str, seed_mix: int = 0) -> list[int]:
    """``random:BITS:SEED`` or a file path whose bytes become the payload."""
    if spec.startswith("random:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad payload spec: {spec!r}")
        nbits, seed = int(parts[1]), int(parts[2])
        rng = np.random.default_rng((seed, seed_mix))
        return rng.integers(0, 2, size=nbits).tolist()
    data = Path(spec).read_bytes()
    return rdhgi.unpack_bits(data, len(data) * 8)


def make_rae(x: ColorImage, payload, cfg: AttackConfig, oracle,
             truncate_payload: bool = False):
    """Attack, then embed.  Returns (rae, ae, report, attack outcome)."""
    counting = oracle if isinstance(oracle, CountingOracle) else CountingOracle(oracle, cfg.budget)
    outcome = run_attack(x, cfg, counting)
    if not outcome.success:
        raise AttackFailed(f"attack terminated: {outcome.termination}", counting.used)
    ae = outcome.adversarial_image

    payload = [int(b) & 1 for b in payload]
    try:
        rae = rdhgi.embed(ae, payload)
    except rdhgi.InsufficientCapacity:
        if not truncate_payload:
            raise
        payload = payload[: rdhgi.capacity(ae)]
        rae = rdhgi.embed(ae, payload)

    counting.budget += 1  # one extra counted query to label the final RAE
    rae_probs = counting.score(dequantize(rae))
    rae_success = success_predicate(rae_probs, cfg)

    xf = dequantize(x).values
    aef = dequantize(ae).values
    raef = dequantize(rae).values
    report = RaeReport(
        attack_success=True,
        rae_success=rae_success,
        queries_used=counting.used,
        psnr_rae_vs_source=psnr(rae, x),
        psnr_rae_vs_ae=psnr(rae, ae),
        psnr_ae_vs_source=psnr(ae, x),
        l2_delta=outcome.delta_l2,
        l2_rdh=float(np.linalg.norm(raef - aef)),
        l2_total=float(np.linalg.norm(raef - xf)),
        payload_bits=len(payload),
    )
    return rae, ae, report, outcome


@dataclass
class Verdict:
    extract_ok: bool
    payload_bits: int = 0
    matches_reference: bool | None = None
    gray_matches_reference: bool | None = None
    cause: str = ""

    @property
    def ok(self) -> bool:
        return (self.extract_ok and self.matches_reference is not False
                and self.gray_matches_reference is not False)


def verify(rae: ColorImage, reference_ae: ColorImage | None = None) -> Verdict:
    try:
        payload, recovered = rdhgi.extract(rae)
    except rdhgi.CodecError as exc:
        return Verdict(extract_ok=False, cause=type(exc).__name__)
    verdict = Verdict(extract_ok=True, payload_bits=len(payload))
    if reference_ae is not None:
        verdict.matches_reference = recovered == reference_ae
        verdict.gray_matches_reference = to_grayscale(rae) == to_grayscale(reference_ae)
    return verdict


def _image_seed(base_seed: int, name: str) -> int:
    return (base_seed * 1000003 + zlib.crc32(name.encode())) & 0x7FFFFFFFFFFF


def _run_one(args) -> dict:
    cfg_dict, image_path, out_dir = args
    cfg = RunConfig(attack=AttackConfig(**cfg_dict.pop("attack")), **cfg_dict)
    path = Path(image_path)
    out = Path(out_dir)
    name = path.stem
    row = {"image": name, "attack_success": False, "rae_success": False,
           "queries": 0, "psnr_rae_vs_source": "", "psnr_rae_vs_ae": "",
           "psnr_ae_vs_source": "", "error": ""}
    try:
        x = load_png(path)
        seed = _image_seed(cfg.attack.seed, name)
        attack_cfg = AttackConfig(**{**asdict_attack(cfg.attack), "seed": seed})
        oracle = make_oracle(cfg.oracle_spec, x.height, x.width, cfg.num_classes)
        if attack_cfg.mode == "untargeted" and attack_cfg.true_class is None:
            raise ValueError("untargeted corpus runs need --true-class")
        payload = resolve_payload(cfg.payload_spec, seed)
        rae, ae, report, outcome = make_rae(x, payload, attack_cfg, oracle,
                                            cfg.truncate_payload)
        trace_path = out / f"{name}.trace.csv"
        write_trace_csv(outcome.trace, trace_path)
        report.trace_path = trace_path.name
        save_png(rae, out / f"{name}.rae.png")
        save_png(ae, out / f"{name}.ae.png")
        with open(out / f"{name}.report.json", "w") as fh:
            json.dump(asdict(report), fh, sort_keys=True, indent=2)
            fh.write("\n")
        row.update(attack_success=True, rae_success=report.rae_success,
                   queries=report.queries_used,
                   psnr_rae_vs_source=repr(report.psnr_rae_vs_source),
                   psnr_rae_vs_ae=repr(report.psnr_rae_vs_ae),
                   psnr_ae_vs_source=repr(report.psnr_ae_vs_source))
    except AttackFailed as exc:
        row.update(queries=exc.queries_used, error=str(exc))
    except Exception as exc:  # per-image failures never abort the sweep
        row.update(error=f"{type(exc).__name__}: {exc}")
    return row


def asdict_attack(cfg: AttackConfig) -> dict:
    return {
        "mode": cfg.mode, "target_class": cfg.target_class,
        "true_class": cfg.true_class, "step_size": cfg.step_size,
        "beam_size": cfg.beam_size, "decay": cfg.decay, "budget": cfg.budget,
        "frequency_fraction": cfg.frequency_fraction, "seed": cfg.seed,
        "beam_enabled": cfg.beam_enabled,
    }


def run_corpus(cfg: RunConfig) -> dict:
    corpus = sorted(Path(cfg.corpus_dir).glob("*.png"))
    if not corpus:
        raise EmptyCorpus(f"no PNG files in {cfg.corpus_dir!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cfg_dict = {"attack": asdict_attack(cfg.attack), "oracle_spec": cfg.oracle_spec,
                "payload_spec": cfg.payload_spec, "corpus_dir": cfg.corpus_dir,
                "out_dir": cfg.out_dir, "workers": cfg.workers,
                "num_classes": cfg.num_classes,
                "truncate_payload": cfg.truncate_payload}
    jobs = [(dict(cfg_dict, attack=dict(cfg_dict["attack"])), str(p), str(out))
            for p in corpus]
    if cfg.workers == 1:
        rows = [_run_one(job) for job in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    rows.sort(key=lambda r: r["image"])

    ok = [r for r in rows if r["attack_success"]]
    queries = [r["queries"] for r in ok]
    psnrs = [float(r["psnr_rae_vs_source"]) for r in ok]
    summary = {
        "images": len(rows),
        "attack_success_rate": len(ok) / len(rows),
        "rae_success_rate": sum(r["rae_success"] for r in rows) / len(rows),
        "mean_queries": statistics.mean(queries) if queries else "",
        "median_queries": statistics.median(queries) if queries else "",
        "mean_psnr_rae_vs_source": statistics.mean(psnrs) if psnrs else "",
    }
    with open(out / "images.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary.keys()))
        writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v
                         for k, v in summary.items()})
    return summary
