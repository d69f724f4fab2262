"""Command-line interface: data generation, relation extraction, training,
evaluation, and plotting."""

from __future__ import annotations

import json
import os
import sys

import click

from .config import (
    gen_config_from,
    load_config_file,
    model_config_from,
    train_config_from,
)


@click.group()
def main():
    """Synthetic relational-grounding pipeline."""


@main.command("generate-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--count", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def generate_data_cmd(config_path, count, out_path):
    """Write COUNT scene/utterance records as line-delimited JSON."""
    from .generator import GenConfig, generate_dataset

    values = load_config_file(config_path) if config_path else {}
    cfg = gen_config_from(values)
    summary = generate_dataset(cfg, count, out_path)
    click.echo(json.dumps(summary, sort_keys=True))


@main.command("extract-relations")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--source", type=click.Choice(["parser", "llm"]), default="parser")
@click.option("--out", "out_path", type=click.Path(), required=True)
def extract_relations_cmd(in_path, source, out_path):
    """Extract soft relational labels from every record's text."""
    from .relations import LlmClient, default_grammar, llm_extract_relations, parse_relations
    from .scenes import read_dataset

    records = read_dataset(in_path)
    vocab = tuple(sorted({c for r in records for c in r.scene.categories()}))
    client = LlmClient.from_env() if source == "llm" else None
    grammar = default_grammar(vocab)
    written = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for idx, record in enumerate(records):
            if source == "parser":
                result = parse_relations(record.utterance.text, grammar)
            else:
                result = llm_extract_relations(record.utterance.text, client, vocab)
            fh.write(
                json.dumps(
                    {
                        "index": idx,
                        "pairs": [list(p) for p in result.sorted_pairs()],
                        "unresolved": list(result.unresolved),
                        "source": result.source,
                    },
                    separators=(",", ":"),
                )
            )
            fh.write("\n")
            written += 1
    click.echo(f"wrote {written} label records to {out_path}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def train_cmd(config_path, data_dir, out_path):
    """Train on <data>/train.jsonl, validating on <data>/val.jsonl."""
    from .scenes import read_dataset
    from .training import train

    values = load_config_file(config_path) if config_path else {}
    model_cfg = model_config_from(values)
    train_cfg = train_config_from(values)
    train_records = read_dataset(os.path.join(data_dir, "train.jsonl"))
    val_records = read_dataset(os.path.join(data_dir, "val.jsonl"))

    def progress(epoch, loss, acc):
        click.echo(f"epoch {epoch:3d}  loss {loss:.4f}  val acc {acc:.4f}")

    result = train(
        train_records, val_records, model_cfg, train_cfg, out_path, progress=progress
    )
    click.echo(
        f"finished after {result.epochs_run} epochs; "
        f"val accuracy {result.final_val_acc:.4f}; checkpoint at {result.checkpoint_path}"
    )


@main.command("eval")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--split", default="val", show_default=True)
def eval_cmd(ckpt_path, data_dir, report_path, split):
    """Evaluate a checkpoint on <data>/<split>.jsonl and write the report."""
    from .evaluation import evaluate
    from .scenes import read_dataset

    records = read_dataset(os.path.join(data_dir, f"{split}.jsonl"))
    report = evaluate(ckpt_path, records)
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    click.echo(
        f"overall {report.overall_acc:.4f}  "
        f"hard {_fmt(report.hard_acc)}  easy {_fmt(report.easy_acc)}  "
        f"rn>=2 {_fmt(report.rn_ge2_acc)}  rn<=1 {_fmt(report.rn_le1_acc)}"
    )


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


@main.command("plot")
@click.option("--reports", "report_paths", type=click.Path(exists=True), multiple=True, required=True)
@click.option("--out-dir", "out_dir", type=click.Path(), default="plots", show_default=True)
def plot_cmd(report_paths, out_dir):
    """Render figures and a summary table from evaluation reports."""
    from .plots import plot_report_files

    summary = plot_report_files(report_paths, out_dir)
    click.echo(json.dumps(summary, sort_keys=True))


if __name__ == "__main__":
    sys.exit(main())
