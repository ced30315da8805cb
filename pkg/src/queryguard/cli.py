"""Command-line interface.

Subcommands: detect-serve (stdin/stdout detector filter), bench (run an
experiment config), report (recompute metrics from trace logs),
estimate-storage, tradeoff, embed-file utilities, encode-serve (reference
dense encoder speaking the round-trip protocol), and kernel-bench.
"""

from __future__ import annotations

import base64
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import kernels
from .analysis import TradeoffConfig, curve_to_csv, tradeoff_curve
from .attacks import ATTACK_REGISTRY
from .attacks.adaptive import OarsConfig
from .bank import BankConfig, storage_estimate
from .core import QueryRecord
from .detector import Detector, DetectorConfig
from .encoders import (
    EncoderConfig,
    image_from_bytes,
    read_embedding_file,
    serve_protocol,
    write_embedding_file,
)
from .harness import (
    BenignConfig,
    ExperimentConfig,
    build_victim,
    compute_metrics,
    format_report,
    read_trace_log,
    run_experiment,
    write_report_csv,
    write_trace_log,
)
from .projection import ProjectionEncoder
from .target import BlobDataConfig


def _encoder_config(d: dict) -> EncoderConfig:
    src = d.get("external_source")
    if isinstance(src, list):
        src = [str(s) for s in src]
    return EncoderConfig(
        variant=d.get("variant", "pixel-hash"),
        quantization_step=d.get("quantization_step", 50),
        window_size=d.get("window_size"),
        window_stride=d.get("window_stride", 1),
        signature_budget=d.get("signature_budget", 50),
        block_size=d.get("block_size", 7),
        external_source=src,
    )


def _detector_config(d: dict) -> DetectorConfig:
    bank = d.get("bank", {})
    return DetectorConfig(
        encoder=_encoder_config(d.get("encoder", {})),
        bank=BankConfig(
            scope=bank.get("scope", "global"),
            capacity=bank.get("capacity"),
            eviction=bank.get("eviction", "none"),
            precision=bank.get("precision", "single"),
        ),
        threshold=d.get("threshold"),
        mode=d.get("mode", "threshold"),
        action=d.get("action", "return-cache"),
        knn_k=d.get("knn_k", 50),
        knn_threshold=d.get("knn_threshold", 10.0),
        append_flagged=d.get("append_flagged", True),
        append_on_reject=d.get("append_on_reject", True),
        external_dim=d.get("external_dim"),
    )


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    data = BlobDataConfig(**d.get("data", {}))
    attacks = []
    for spec in d.get("attacks", []):
        name = spec["name"]
        if name not in ATTACK_REGISTRY:
            raise click.ClickException(f"unknown attack {name!r}")
        _, cfg_cls, _ = ATTACK_REGISTRY[name]
        attacks.append((name, cfg_cls(**spec.get("config", {}))))
    oars = d.get("oars")
    return ExperimentConfig(
        detector=_detector_config(d["detector"]) if d.get("detector") else None,
        data=data,
        victim_kind=d.get("victim_kind", "softmax-linear"),
        victim_gain=d.get("victim_gain", 4.5),
        attacks=attacks,
        instances_per_attack=d.get("instances_per_attack", 10),
        benign=BenignConfig(**d.get("benign", {})),
        seed=d.get("seed", 1234),
        user_split=d.get("user_split", 1),
        oars=OarsConfig(**oars) if oars else None,
    )


@click.group()
def main():
    """Stateful detection of query-based black-box adversarial attacks."""


@main.command("estimate-storage")
@click.option("--users", type=int, required=True)
@click.option("--queries-per-user", type=int, required=True)
@click.option("--dim", type=int, default=512, show_default=True)
@click.option("--precision", type=click.Choice(["single", "half"]), default="single",
              show_default=True)
def estimate_storage_cmd(users, queries_per_user, dim, precision):
    """Bytes and GiB needed to store every user's query embeddings."""
    est = storage_estimate(users, queries_per_user, dim, precision)
    click.echo(f"bytes_per_embedding: {est.bytes_per_embedding}")
    click.echo(f"total_bytes: {est.total_bytes}")
    click.echo(f"gib: {est.gib:.2f}")


@main.command("tradeoff")
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--beta", type=float, default=0.1, show_default=True)
@click.option("--samples", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=2024, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="write the curve as CSV instead of printing it")
def tradeoff_cmd(dim, sigma, beta, samples, seed, out):
    """Detection-rate vs false-positive-rate curve over a threshold grid."""
    cfg = TradeoffConfig(dim=dim, sigma=sigma, beta=beta, samples=samples, seed=seed)
    points = tradeoff_curve(cfg)
    if out:
        curve_to_csv(points, out)
        click.echo(f"wrote {len(points)} rows to {out}")
    else:
        click.echo("mu,alpha_det,alpha_fp")
        for p in points:
            click.echo(f"{p.mu},{p.alpha_det},{p.alpha_fp}")


@main.command("bench")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def bench_cmd(config_path, out_dir):
    """Run an experiment config file and report the metrics."""
    with open(config_path) as fh:
        cfg = experiment_config_from_dict(json.load(fh))
    report, traces, _ = run_experiment(cfg)
    click.echo(format_report(report))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(out / "report.csv", report)
        for i, trace in enumerate(traces):
            write_trace_log(out / f"trace-{i:04d}-{trace.attack}.jsonl", trace)
        click.echo(f"wrote report and {len(traces)} trace logs to {out}")


@main.command("report")
@click.argument("trace_logs", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def report_cmd(trace_logs, csv_path):
    """Recompute metrics from serialized trace logs."""
    traces = [read_trace_log(p) for p in trace_logs]
    report = compute_metrics(traces)
    click.echo(format_report(report))
    if csv_path:
        write_report_csv(csv_path, report)


@main.command("detect-serve")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True,
              help="JSON file with 'detector', 'data' and optional victim settings")
def detect_serve_cmd(config_path):
    """Run the detector as a stdin/stdout filter.

    Requests are JSON lines {"user": str, "image_b64": base64 raw image
    bytes}; responses are JSON lines with the verdict and served output.
    """
    with open(config_path) as fh:
        raw = json.load(fh)
    det_cfg = _detector_config(raw["detector"])
    _, victim = build_victim(
        BlobDataConfig(**raw.get("data", {})),
        raw.get("victim_kind", "softmax-linear"),
        raw.get("victim_gain", 4.5),
    )
    detector = Detector(det_cfg)
    seqs: dict = {}
    clock = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        image = image_from_bytes(base64.b64decode(req["image_b64"]))
        user = req.get("user", "anonymous")
        seq = seqs.get(user, 0)
        seqs[user] = seq + 1
        clock += 1
        verdict = detector.detect_and_serve(
            QueryRecord(user_id=user, seq=seq, image=image, timestamp_ms=clock),
            victim,
        )
        out = verdict.served_output
        sys.stdout.write(json.dumps({
            "flagged": verdict.flagged,
            "score": None if np.isinf(verdict.score) else verdict.score,
            "action": verdict.action_taken,
            "label": out.label,
            "probs": None if out.probs is None else [float(p) for p in out.probs],
        }) + "\n")
        sys.stdout.flush()


@main.command("encode-serve")
@click.option("--height", type=int, default=16, show_default=True)
@click.option("--width", type=int, default=16, show_default=True)
@click.option("--channels", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def encode_serve_cmd(height, width, channels, seed):
    """Serve the reference dense encoder over the round-trip protocol (stdio)."""
    enc = ProjectionEncoder(height=height, width=width, channels=channels, seed=seed)
    serve_protocol(enc.embed)


@main.group("embed-file")
def embed_file():
    """AQDE exchange file utilities."""


@embed_file.command("inspect")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def embed_inspect(path):
    table = read_embedding_file(path)
    dtype = "f16" if table.dtype_code == 1 else "f32"
    click.echo(f"dim: {table.dim}  dtype: {dtype}  count: {table.count}")
    for key in table.keys[:10]:
        click.echo(f"  {key.hex()}")
    if table.count > 10:
        click.echo(f"  ... {table.count - 10} more")


@embed_file.command("create")
@click.argument("npz", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--half", is_flag=True, default=False)
def embed_create(npz, out, half):
    """Build an AQDE file from an .npz with 'keys' (hex strings) and 'vectors'."""
    data = np.load(npz)
    keys = [bytes.fromhex(str(k)) for k in data["keys"]]
    write_embedding_file(out, keys, data["vectors"], half=half)
    click.echo(f"wrote {len(keys)} embeddings to {out}")


@embed_file.command("lookup")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.argument("digest_hex")
def embed_lookup(path, digest_hex):
    table = read_embedding_file(path)
    want = bytes.fromhex(digest_hex)
    for key, vec in zip(table.keys, table.vectors):
        if key == want:
            click.echo(" ".join(f"{v:.6g}" for v in np.asarray(vec, dtype=np.float64)))
            return
    raise click.ClickException("digest not found")


@main.command("kernel-bench")
@click.option("--image-side", type=int, default=16, show_default=True)
@click.option("--bank-size", type=int, default=5000, show_default=True)
@click.option("--repeats", type=int, default=200, show_default=True)
def kernel_bench_cmd(image_side, bank_size, repeats):
    """Time the numba kernels against the pure-numpy fallbacks."""
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, size=image_side * image_side * 3, dtype=np.uint8)
    sigs = np.sort(
        rng.integers(0, 2**63, size=(bank_size, 50), dtype=np.uint64), axis=1
    )
    flat = sigs.ravel()
    offsets = np.arange(0, 50 * (bank_size + 1), 50, dtype=np.int64)
    probe = sigs[bank_size // 2].copy()
    bits = rng.integers(0, 2, size=(bank_size, 81), dtype=np.uint8)
    pbits = bits[0].copy()

    variants = [("numpy", kernels.sha256_low64_windows_numpy,
                 kernels.window_sig_scan_numpy, kernels.bit_sig_scan_numpy)]
    if kernels.HAVE_NUMBA:
        variants.append(("numba", kernels.sha256_low64_windows_numba,
                         kernels.window_sig_scan_numba, kernels.bit_sig_scan_numba))
        kernels.warmup()

    click.echo(f"active path: {'numba' if kernels.USING_NUMBA else 'numpy'}")
    for name, sha_fn, scan_fn, bits_fn in variants:
        sha_fn(data, 20, 1)  # warm
        t0 = time.perf_counter()
        for _ in range(repeats):
            sha_fn(data, 20, 1)
        t1 = time.perf_counter()
        scan_fn(flat, offsets, None, probe, 50)
        t2 = time.perf_counter()
        for _ in range(repeats):
            scan_fn(flat, offsets, None, probe, 50)
        t3 = time.perf_counter()
        bits_fn(bits, pbits)
        t4 = time.perf_counter()
        for _ in range(repeats):
            bits_fn(bits, pbits)
        t5 = time.perf_counter()
        click.echo(
            f"{name:>6}: window-sha {1e3 * (t1 - t0) / repeats:8.3f} ms/image"
            f" | sig-scan {1e3 * (t3 - t2) / repeats:8.3f} ms/{bank_size}"
            f" | bit-scan {1e3 * (t5 - t4) / repeats:8.3f} ms/{bank_size}"
        )


if __name__ == "__main__":
    main()
