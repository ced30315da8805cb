"""Trainer acceptance: loss oracles, the PGD contract, the tuning effect at
toy scale, and byte-level interoperability with the detector package.

The detector is exercised only through its external interfaces: the AQDE
exchange file, the embedding round-trip protocol, and the `detect-serve`
CLI filter.
"""

import base64
import json
import math
import shutil
import struct
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from prompt_trainer import (
    TuningConfig,
    PgdConfig,
    PromptedEncoder,
    default_pairs,
    export_embeddings,
    load_corpus,
    make_corpus,
    nt_xent_loss,
    two_stream_loss,
    robust_pair_similarity,
    train,
)
from prompt_trainer.export import content_digest, image_wire_bytes
from prompt_trainer.views import augment_pair, interleave_views, pgd_views

SEED = 20240808


def _report(tag, ok, detail):
    print(f"\nACCEPTANCE [{tag}]: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{tag}: {detail}"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    make_corpus(path, count=288, seed=7)
    return path


@pytest.fixture(scope="module")
def committed_run(corpus, tmp_path_factory):
    cfg = TuningConfig(seed=0)
    result = train(cfg, corpus)
    ckpt = tmp_path_factory.mktemp("ckpt") / "tuned.pt"
    result.encoder.save(ckpt)
    return cfg, result, ckpt


# ---------------------------------------------------------------------------

def test_loss_oracles_match_brute_force():
    worst = 0.0
    for n_images in range(2, 9):
        rng = np.random.default_rng(n_images)
        z = rng.standard_normal((2 * n_images, 12))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        pairs = default_pairs(n_images)
        tau = 0.4
        got = float(nt_xent_loss(torch.tensor(z), pairs, tau))
        total = 0.0
        for i, j in pairs:
            for a, b in ((i, j), (j, i)):
                num = math.exp(float(z[a] @ z[b]) / tau)
                den = sum(math.exp(float(z[a] @ z[k]) / tau)
                          for k in range(2 * n_images) if k != a)
                total += -math.log(num / den)
        expect = total / (2 * len(pairs))
        worst = max(worst, abs(got - expect))

    # alpha affinity on fixed streams
    rng = np.random.default_rng(99)
    clean = torch.tensor(rng.standard_normal((8, 12)))
    clean = torch.nn.functional.normalize(clean, dim=1)
    adv = torch.tensor(rng.standard_normal((8, 12)))
    adv = torch.nn.functional.normalize(adv, dim=1)
    pairs = default_pairs(4)
    vals = {a: float(two_stream_loss(clean, adv, pairs, a, 0.4))
            for a in (0.0, 0.25, 0.5, 1.0)}
    affine_err = max(
        abs(vals[0.25] - (vals[0.0] + 0.25 * (vals[1.0] - vals[0.0]))),
        abs(vals[0.5] - (vals[0.0] + 0.5 * (vals[1.0] - vals[0.0]))),
    )
    ok = worst <= 1e-5 and affine_err <= 1e-6
    _report("loss-oracle", ok,
            f"max |loss - brute force| {worst:.2e} (N=2..8), "
            f"alpha-affinity error {affine_err:.2e}")


# ---------------------------------------------------------------------------

def test_pgd_contract():
    budget = 8.0 / 255.0
    # ball containment on the committed encoder shape
    enc = PromptedEncoder(height=24, width=24, channels=3, tokens=4, seed=0)
    rng = np.random.default_rng(SEED)
    images = torch.tensor(rng.random((8, 3, 24, 24)), dtype=torch.float32)
    gen = torch.Generator().manual_seed(0)
    vi, vj = augment_pair(images, gen)
    clean = interleave_views(vi, vj)
    adv = pgd_views(enc, clean, PgdConfig())
    max_dev = float((adv - clean).abs().max())
    in_ball = max_dev <= budget + 1e-7 and adv.min() >= 0 and adv.max() <= 1

    # sign agreement with finite differences on a tiny double-precision encoder
    tiny = PromptedEncoder(height=4, width=4, channels=3, embed_dim=8,
                           tokens=0, seed=2).double()
    small = torch.tensor(rng.random((4, 3, 4, 4)), dtype=torch.float64)
    pairs = default_pairs(2)
    x = small.clone().requires_grad_(True)
    loss = nt_xent_loss(tiny(x), pairs, 0.2)
    (grad,) = torch.autograd.grad(loss, x)
    grad = grad.numpy().ravel()
    flat = small.numpy().ravel()
    h = 1e-6
    agree = checked = 0
    for c in rng.choice(flat.size, size=150, replace=False):
        xp = flat.copy(); xp[c] += h
        xm = flat.copy(); xm[c] -= h
        with torch.no_grad():
            lp = float(nt_xent_loss(tiny(torch.tensor(xp.reshape(small.shape))),
                                    pairs, 0.2))
            lm = float(nt_xent_loss(tiny(torch.tensor(xm.reshape(small.shape))),
                                    pairs, 0.2))
        fd = (lp - lm) / (2 * h)
        if abs(fd) < 1e-9 and abs(grad[c]) < 1e-9:
            continue
        checked += 1
        agree += int(np.sign(fd) == np.sign(grad[c]))
    rate = agree / checked
    ok = in_ball and rate >= 0.99
    _report("pgd-contract", ok,
            f"max |adv - clean| {max_dev:.5f} <= 8/255, "
            f"sign agreement {rate:.1%} over {checked} coordinates")


# ---------------------------------------------------------------------------

def _drive_detect_serve(config: dict, queries, tmp_path):
    """Push a query stream through the detector CLI; returns flagged booleans."""
    cfg_path = tmp_path / "detector.json"
    cfg_path.write_text(json.dumps(config))
    lines = []
    for q in queries:
        payload = base64.b64encode(image_wire_bytes(q)).decode()
        lines.append(json.dumps({"user": "adaptive", "image_b64": payload}))
    res = subprocess.run(
        [sys.executable, "-m", "queryguard.cli", "detect-serve",
         "--config", str(cfg_path)],
        input="\n".join(lines) + "\n", capture_output=True, text=True, timeout=300,
    )
    assert res.returncode == 0, res.stderr
    return [json.loads(l)["flagged"] for l in res.stdout.strip().splitlines()]


def _noise_resampling_stream(x, n_queries, rng, scale=8.0 / 255.0):
    """Adaptive probe: re-sends the image under fresh noise every query."""
    stream = [x]
    for _ in range(n_queries - 1):
        noisy = np.clip(x + rng.uniform(-scale, scale, x.shape), 0.0, 1.0)
        stream.append(noisy.astype(np.float32))
    return stream


def test_tuning_effect_at_toy_scale(corpus, committed_run, tmp_path):
    t0 = time.perf_counter()
    cfg, result, ckpt = committed_run
    images = load_corpus(corpus)
    heldout = images[-64:]

    untrained = PromptedEncoder(tokens=cfg.tokens, seed=cfg.encoder_seed)
    _, adv_before = robust_pair_similarity(untrained, heldout, cfg.pgd,
                                           cfg.temperature)
    _, adv_after = robust_pair_similarity(result.encoder, heldout, cfg.pgd,
                                          cfg.temperature)
    improved = adv_after > adv_before

    # few-shot DR comparison on a noise-resampling adaptive attack, detector
    # driven end to end through its CLI
    serve_cmd = [sys.executable, "-m", "prompt_trainer.cli", "serve",
                 "--checkpoint", str(ckpt)]
    dense_cfg = {"detector": {
        "encoder": {"variant": "external", "external_source": serve_cmd},
        "external_dim": untrained.embed_dim,
        "action": "return-cache",
    }}
    pixel_cfg = {"detector": {"encoder": {"variant": "pixel-hash"},
                              "action": "return-cache"}}
    rng = np.random.default_rng(SEED)
    k_dense = {3: 0, 5: 0}
    k_pixel = {3: 0, 5: 0}
    n_traces = 10
    for t in range(n_traces):
        x = images[t]
        stream = _noise_resampling_stream(x, 6, rng)
        dense_flags = _drive_detect_serve(dense_cfg, stream, tmp_path)
        pixel_flags = _drive_detect_serve(pixel_cfg, stream, tmp_path)
        for k in (3, 5):
            k_dense[k] += any(dense_flags[:k])
            k_pixel[k] += any(pixel_flags[:k])
    dr_ok = all(k_dense[k] >= k_pixel[k] for k in (3, 5))

    elapsed = time.perf_counter() - t0
    ok = improved and dr_ok
    _report("tuning-effect", ok,
            f"adversarial-pair sim {adv_before:.4f} -> {adv_after:.4f}; "
            f"3/5-shot DR dense {k_dense[3]}/{k_dense[5]} vs pixel-hash "
            f"{k_pixel[3]}/{k_pixel[5]} over {n_traces} traces; {elapsed:.0f}s")


# ---------------------------------------------------------------------------

def test_round_trip_bit_identical(corpus, committed_run, tmp_path):
    _, result, _ = committed_run
    out = tmp_path / "tuned.aqde"
    stats = export_embeddings(result.encoder, corpus, out)

    from queryguard.encoders import read_embedding_file  # the reference reader

    table = read_embedding_file(out)
    images = load_corpus(corpus)
    key_to_row = {k: i for i, k in enumerate(table.keys)}
    exact = 0
    for img in images:
        vec = result.encoder.embed_numpy(img)[0]  # the export-time computation
        row = key_to_row[content_digest(img)]
        if np.array_equal(np.asarray(table.vectors[row]), vec.astype("<f4")):
            exact += 1
    ok = stats["exported"] == len(images) and exact == len(images)
    _report("aqde-round-trip", ok,
            f"{exact}/{len(images)} embeddings bit-identical after reload "
            f"by the detector package")
