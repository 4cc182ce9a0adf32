"""Command-line entry point.

Commands: ``run`` (stream a corpus through the engine), ``eval``
(recompute clustering metrics offline from logs), ``inspect`` (dump a
checkpoint, story table, or per-sentence pooling weights), ``synth``
(emit a synthetic labeled fixture). Flags mirror the config fields in
kebab-case; a flat key=value config file can set any of them, with
explicit flags winning. Exit codes: 1 config error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import encoder, metrics, providers
from .domain import Article, ConfigError, EngineConfig, StreamValidationError, day_index
from .numkernel import KernelError
from .providers import EmbeddingFileError, ProviderMiss, SyntheticSpec
from .stream import StreamEngine, corpus_embedding_metrics

log = logging.getLogger("storystream")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class MalformedLog(ValueError):
    pass


# ---------------------------------------------------------------------------
# input parsing


def parse_config_file(path: Path) -> Dict[str, str]:
    """Flat key = value lines, # comments, optional quotes around values."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        value = value.split("#", 1)[0].strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        out[key.strip().replace("-", "_")] = value
    return out


def _parse_timestamp(value) -> int:
    if isinstance(value, (int, float)):
        return int(value)
    text = str(value).strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def read_articles_jsonl(path: Path) -> Tuple[List[Article], Dict[str, List[str]]]:
    """Load the article stream; returns articles plus raw sentences by id."""
    articles: List[Article] = []
    sentences: Dict[str, List[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                article_id = rec["id"]
                ts = _parse_timestamp(rec["published_at"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedLog(f"{path}:{lineno}: bad article record: {exc}") from exc
            sents = rec.get("sentences")
            count = len(sents) if sents is not None else 0
            articles.append(
                Article(
                    id=article_id,
                    published_at=ts,
                    sentence_count=count,
                    true_story_label=rec.get("story_label"),
                )
            )
            if sents is not None:
                sentences[article_id] = list(sents)
    return articles, sentences


def parse_synthetic_kv(text: str) -> SyntheticSpec:
    """Comma-separated key=value recipe, e.g.
    'n_topics=5,dim=64,days=30,per_day=40,angle=75,sigma=0.05,sent_lo=3,sent_hi=8,seed=7'."""
    fields = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"bad synthetic spec item {item!r}")
        k, v = item.split("=", 1)
        fields[k.strip()] = v.strip()

    def geti(key, default=None):
        if key in fields:
            return int(fields[key])
        if default is None:
            raise ConfigError(f"synthetic spec missing {key!r}")
        return default

    def getf(key, default):
        return float(fields[key]) if key in fields else default

    return SyntheticSpec(
        n_topics=geti("n_topics"),
        topic_separation_deg=getf("angle", 90.0),
        noise_sigma=getf("sigma", 0.05),
        sentences_per_article=(geti("sent_lo", 3), geti("sent_hi", 8)),
        seed=geti("seed", 0),
        dim=geti("dim", 64),
        days=geti("days", 10),
        articles_per_day=geti("per_day", 20),
    )


# ---------------------------------------------------------------------------
# run


_ENGINE_FIELDS = {
    "window_days": int,
    "slide_days": int,
    "L": int,
    "h_c": int,
    "n_heads": int,
    "delta": float,
    "tau": float,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "rng_seed": int,
    "cold_start_k": int,
}


def _coerce(value: str, typ):
    if typ is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return typ(value)


def build_engine_config(h_e: int, file_values: Dict[str, str], args) -> EngineConfig:
    kwargs = {"h_e": h_e}
    for name, typ in _ENGINE_FIELDS.items():
        if name in file_values:
            kwargs[name] = _coerce(file_values[name], typ)
        flag = getattr(args, name, None)
        if flag is not None:
            kwargs[name] = flag
    train = True
    if "train" in file_values:
        train = _coerce(file_values["train"], bool)
    if getattr(args, "no_train", False):
        train = False
    kwargs["train"] = train
    return EngineConfig(**kwargs)


def _json_line(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True))
    fh.write("\n")


def cmd_run(args) -> int:
    file_values = parse_config_file(Path(args.config)) if args.config else {}

    articles_path = args.articles or file_values.get("articles_jsonl")
    embeddings_path = args.embeddings or file_values.get("embeddings_file")
    synthetic = args.synthetic or file_values.get("synthetic_spec")
    if (embeddings_path is None) == (synthetic is None):
        raise ConfigError("exactly one of --embeddings / --synthetic is required")
    if embeddings_path is not None and articles_path is None:
        raise ConfigError("--articles is required with --embeddings")

    if synthetic is not None:
        spec = parse_synthetic_kv(synthetic)
        articles, provider = providers.synthesize(spec)
    else:
        articles, _ = read_articles_jsonl(Path(articles_path))
        provider = providers.load(embeddings_path)
        fixed = []
        for a in articles:
            count = a.sentence_count or provider.sentence_count(a.id)
            fixed.append(
                Article(
                    id=a.id,
                    published_at=a.published_at,
                    sentence_count=count,
                    true_story_label=a.true_story_label,
                )
            )
        articles = fixed

    config = build_engine_config(provider.dim, file_values, args)
    out_dir = Path(args.output_dir or file_values.get("output_dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    config_echo = {
        "h_e": config.h_e,
        "h_c": config.h_c,
        "L": config.L,
        "n_heads": config.n_heads,
        "window_days": config.window_days,
        "slide_days": config.slide_days,
        "delta": config.delta,
        "tau": config.tau,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "rng_seed": config.rng_seed,
        "cold_start_k": config.cold_start_k,
        "train": config.train,
        "n_articles": len(articles),
    }
    log.info("config: %s", json.dumps(config_echo, sort_keys=True))
    (out_dir / "config.json").write_text(json.dumps(config_echo, indent=2, sort_keys=True))

    engine = StreamEngine(provider, config, compute_scores=args.eval)
    scores: List[metrics.WindowScore] = []
    with open(out_dir / "assignments.jsonl", "w") as afh, open(
        out_dir / "training.jsonl", "w"
    ) as tfh, open(out_dir / "metrics.jsonl", "w") as mfh:
        n_records = 0
        for result in engine.run(articles):
            for rec in engine.assignment_records[n_records:]:
                _json_line(afh, rec)
            n_records = len(engine.assignment_records)
            for step, loss in enumerate(result.losses):
                _json_line(
                    tfh,
                    {
                        "window_index": result.window_index,
                        "step": step,
                        "loss": loss,
                        "n_stories": len(engine.window.stories),
                        "n_articles": engine.window.n_articles,
                    },
                )
            if result.score is not None:
                scores.append(result.score)
                _json_line(mfh, {"type": "window", **result.score.as_dict()})
        summary = {"type": "summary"}
        if scores:
            summary.update(metrics.prequential_average(scores))
        if args.corpus_metrics:
            final_params = engine.params if config.train else None
            align, uniform = corpus_embedding_metrics(
                articles, provider, final_params, config.L
            )
            summary["corpus_alignment"] = align
            summary["corpus_uniformity"] = uniform
        _json_line(mfh, summary)

    encoder.save_params(engine.params, out_dir / "encoder.ckpt")
    if args.csv and scores:
        _write_csv(out_dir / "metrics.csv", scores)
    log.info("run complete: %d articles, %d stories", len(articles), engine.next_story_id)
    return EXIT_OK


def _write_csv(path: Path, scores: Sequence[metrics.WindowScore]) -> None:
    import csv

    fields = list(scores[0].as_dict().keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for s in scores:
            writer.writerow(s.as_dict())


# ---------------------------------------------------------------------------
# eval


def windows_from_days(days: Sequence[int], window_days: int, slide_days: int):
    """Reproduce the run-time slide grid: (window_index, start_day, end_day)."""
    first, last = min(days), max(days)
    end = first + slide_days - 1
    index = 0
    while True:
        yield index, end - window_days + 1, end
        if end >= last:
            break
        end += slide_days
        index += 1


def cmd_eval(args) -> int:
    truth_articles, _ = read_articles_jsonl(Path(args.truth))
    truth_by_id = {a.id: a for a in truth_articles}
    assigned: Dict[str, int] = {}
    with open(args.assignments, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                article_id = rec["article_id"]
                story_id = int(rec["story_id"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedLog(f"{args.assignments}:{lineno}: {exc}") from exc
            if article_id not in truth_by_id:
                raise MalformedLog(
                    f"{args.assignments}:{lineno}: unknown article {article_id!r}"
                )
            assigned[article_id] = story_id

    items = [a for a in truth_articles if a.id in assigned]
    if not items:
        raise MalformedLog("assignment log covers no article of the truth file")
    days = [a.day for a in items]
    scores = []
    for index, start, end in windows_from_days(days, args.window_days, args.slide_days):
        in_window = [a for a in items if start <= a.day <= end]
        if not in_window:
            continue
        pred = [assigned[a.id] for a in in_window]
        truth = [a.true_story_label for a in in_window]
        scores.append(metrics.score_window(index, pred, truth))
    summary = metrics.prequential_average(scores)
    report = {
        "windows": [s.as_dict() for s in scores],
        "summary": summary,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    try:
        params = encoder.load_params(args.checkpoint)
    except (OSError, encoder.CheckpointError) as exc:
        raise encoder.CheckpointError(f"bad checkpoint file: {exc}") from exc
    print(f"checkpoint: h_e={params.h_e} h_c={params.h_c} n_heads={params.n_heads}")
    for name, tensor in params.named():
        norm = float(np.linalg.norm(tensor.data))
        print(f"  {name:18s} shape={tensor.data.shape!s:12s} l2={norm:.6f}")

    if args.assignments:
        table: Dict[int, int] = {}
        with open(args.assignments, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    table[rec["story_id"]] = table.get(rec["story_id"], 0) + 1
        print(f"stories: {len(table)}")
        for sid in sorted(table):
            print(f"  story {sid:6d}  articles={table[sid]}")

    if args.article:
        if not args.embeddings:
            raise ConfigError("--article needs --embeddings")
        provider = providers.load(args.embeddings)
        matrix = provider.get(args.article, args.L)
        out = encoder.encode_article(matrix, params)
        print(f"article {args.article}: {matrix.n_real} sentences")
        print("sentence,pooling_weight,attention_importance")
        for k in range(matrix.n_real):
            print(f"{k},{out.pooling_weights[k]:.9f},{out.attention_importance[k]:.9f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    spec = parse_synthetic_kv(args.spec)
    articles, provider = providers.synthesize(spec)
    out_articles = Path(args.out_articles)
    out_embeddings = Path(args.out_embeddings)
    out_articles.parent.mkdir(parents=True, exist_ok=True)
    out_embeddings.parent.mkdir(parents=True, exist_ok=True)
    with open(out_articles, "w", encoding="utf-8") as fh:
        for a in articles:
            stamp = datetime.fromtimestamp(a.published_at, tz=timezone.utc)
            _json_line(
                fh,
                {
                    "id": a.id,
                    "published_at": stamp.isoformat().replace("+00:00", "Z"),
                    "title": f"synthetic article {a.id}",
                    "sentences": [
                        f"filler sentence {k} of {a.id}" for k in range(a.sentence_count)
                    ],
                    "story_label": a.true_story_label,
                },
            )
    providers.write_embedding_file(
        out_embeddings,
        ((a.id, provider.get(a.id, a.sentence_count).rows) for a in articles),
        provider.dim,
    )
    print(f"wrote {len(articles)} articles to {out_articles} and {out_embeddings}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storystream", description=__doc__)
    parser.add_argument("--log-level", default=None, help="overrides SCSTORY_LOG")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="stream a corpus through the engine")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--articles", help="articles JSONL path")
    run.add_argument("--embeddings", help="embedding file path")
    run.add_argument("--synthetic", help="synthetic spec, key=value comma list")
    run.add_argument("--output-dir", help="output directory (default: out)")
    run.add_argument("--window-days", type=int, dest="window_days")
    run.add_argument("--slide-days", type=int, dest="slide_days")
    run.add_argument("--L", type=int, dest="L")
    run.add_argument("--h-c", type=int, dest="h_c")
    run.add_argument("--n-heads", type=int, dest="n_heads")
    run.add_argument("--delta", type=float, dest="delta")
    run.add_argument("--tau", type=float, dest="tau")
    run.add_argument("--epochs", type=int, dest="epochs")
    run.add_argument("--batch-size", type=int, dest="batch_size")
    run.add_argument("--learning-rate", type=float, dest="learning_rate")
    run.add_argument("--rng-seed", type=int, dest="rng_seed")
    run.add_argument("--cold-start-k", type=int, dest="cold_start_k")
    run.add_argument("--no-train", action="store_true", help="ablation: skip model updates")
    run.add_argument("--eval", dest="eval", action="store_true", default=True)
    run.add_argument("--no-eval", dest="eval", action="store_false")
    run.add_argument("--corpus-metrics", action="store_true",
                     help="corpus-wide alignment/uniformity of the final model")
    run.add_argument("--csv", action="store_true", help="also export metrics.csv")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="recompute clustering metrics from logs")
    ev.add_argument("--assignments", required=True)
    ev.add_argument("--truth", required=True, help="articles JSONL with story_label")
    ev.add_argument("--window-days", type=int, default=7)
    ev.add_argument("--slide-days", type=int, default=1)
    ev.add_argument("--out", help="write the JSON report here as well")
    ev.set_defaults(func=cmd_eval)

    ins = sub.add_parser("inspect", help="dump checkpoint / story table / weights")
    ins.add_argument("--checkpoint", required=True)
    ins.add_argument("--assignments")
    ins.add_argument("--embeddings")
    ins.add_argument("--article", help="print pooling weights for this article")
    ins.add_argument("--L", type=int, default=50)
    ins.set_defaults(func=cmd_inspect)

    sy = sub.add_parser("synth", help="emit a synthetic labeled fixture")
    sy.add_argument("--spec", required=True, help="key=value comma list")
    sy.add_argument("--out-articles", required=True)
    sy.add_argument("--out-embeddings", required=True)
    sy.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = args.log_level or os.environ.get("SCSTORY_LOG", "INFO")
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (
        FileNotFoundError,
        MalformedLog,
        EmbeddingFileError,
        encoder.CheckpointError,
        ProviderMiss,
        StreamValidationError,
    ) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except KernelError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


def entry() -> None:  # console_scripts hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
