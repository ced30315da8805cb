"""Trainer CLI: corpus generation, tuning, export, protocol serving, sweeps."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .data import load_corpus, make_corpus
from .encoder import PromptedEncoder
from .export import export_embeddings, serve_protocol
from .train import TuningConfig, robust_pair_similarity, token_sweep, train


@click.group()
def main():
    """Adversarial contrastive prompt tuning for the detector's dense encoder."""


@main.command("make-corpus")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--count", type=int, default=512, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
def make_corpus_cmd(out_dir, count, seed):
    n = make_corpus(out_dir, count=count, seed=seed)
    click.echo(f"wrote {n} images to {out_dir}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON training config; defaults apply otherwise")
@click.option("--corpus", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="checkpoint path for the tuned encoder")
@click.option("--log", type=click.Path(dir_okay=False), default=None)
def train_cmd(config_path, corpus, out, log):
    cfg = TuningConfig.from_json(config_path) if config_path else TuningConfig()
    result = train(cfg, corpus)
    result.encoder.save(out)
    click.echo(f"epoch losses: {[round(x, 4) for x in result.epoch_means]}")
    click.echo(f"backbone unchanged: {result.backbone_unchanged}")
    if log:
        Path(log).write_text(json.dumps({
            "losses": result.losses, "epoch_means": result.epoch_means}))
    click.echo(f"saved tuned encoder to {out}")


@main.command("export")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--images", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def export_cmd(checkpoint, images, out):
    encoder = PromptedEncoder.load(checkpoint)
    stats = export_embeddings(encoder, images, out)
    click.echo(f"exported {stats['exported']} embeddings "
               f"({stats['skipped']} skipped) to {out}")


@main.command("serve")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
              default=None, help="tuned encoder; omit for an untuned one")
@click.option("--tokens", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def serve_cmd(checkpoint, tokens, seed):
    """Speak the embedding round-trip protocol on stdio."""
    if checkpoint:
        encoder = PromptedEncoder.load(checkpoint)
    else:
        encoder = PromptedEncoder(tokens=tokens, seed=seed)
    serve_protocol(encoder)


@main.command("sweep")
@click.option("--corpus", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--tokens", default="0,5,10,20,30", show_default=True,
              help="comma-separated token counts")
@click.option("--epochs", type=int, default=2, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def sweep_cmd(corpus, tokens, epochs, out):
    """Token-length sweep: per K, benign- and adversarial-pair similarity."""
    ks = [int(k) for k in tokens.split(",")]
    base = TuningConfig(epochs=epochs)
    images = load_corpus(corpus)
    heldout = images[-64:]
    rows = token_sweep(corpus, ks, base, heldout)
    lines = ["tokens,benign_pair_similarity,adversarial_pair_similarity"]
    lines += [f"{k},{b:.6f},{a:.6f}" for k, b, a in rows]
    text = "\n".join(lines)
    click.echo(text)
    if out:
        Path(out).write_text(text + "\n")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--corpus", type=click.Path(exists=True, file_okay=False), required=True)
def eval_cmd(checkpoint, corpus):
    """Benign- and adversarial-pair similarity of a tuned encoder."""
    encoder = PromptedEncoder.load(checkpoint)
    images = load_corpus(corpus)[-64:]
    from .views import PgdConfig

    benign, adv = robust_pair_similarity(encoder, images, PgdConfig())
    click.echo(f"benign-pair similarity: {benign:.4f}")
    click.echo(f"adversarial-pair similarity: {adv:.4f}")


if __name__ == "__main__":
    main()
