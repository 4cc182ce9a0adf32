"""Corpus export: articles JSONL in, embedding file out."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .encoders import DEFAULT_MODEL, resolve_model
from .formats import write_embedding_file

log = logging.getLogger("pse_export")


class InputParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ExportJob:
    input_path: Path
    output_path: Path
    model: str = DEFAULT_MODEL
    batch_size: int = 64
    device: Optional[str] = None


def read_corpus(path: Path) -> List[Tuple[str, List[str]]]:
    """(article_id, sentences) pairs; rejects malformed or empty records."""
    corpus: List[Tuple[str, List[str]]] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise InputParseError(f"invalid JSON: {exc}", lineno) from exc
            article_id = rec.get("id")
            sentences = rec.get("sentences")
            if not article_id or not isinstance(article_id, str):
                raise InputParseError("missing or invalid 'id'", lineno)
            if article_id in seen:
                raise InputParseError(f"duplicate article id {article_id!r}", lineno)
            if not isinstance(sentences, list) or not sentences:
                raise InputParseError(f"article {article_id!r} has no sentences", lineno)
            if any(not isinstance(s, str) or not s.strip() for s in sentences):
                raise InputParseError(f"article {article_id!r} has an empty sentence", lineno)
            seen.add(article_id)
            corpus.append((article_id, sentences))
    return corpus


def export(job: ExportJob) -> int:
    """Embed every sentence of every article and write the interchange
    file; returns the number of exported articles. Deterministic for a
    fixed model and input."""
    corpus = read_corpus(Path(job.input_path))
    encoder = resolve_model(job.model, device=job.device)

    flat: List[str] = []
    offsets: List[Tuple[int, int]] = []
    for _, sentences in corpus:
        offsets.append((len(flat), len(sentences)))
        flat.extend(sentences)

    chunks = []
    for start in range(0, len(flat), job.batch_size):
        chunks.append(encoder.encode(flat[start : start + job.batch_size]))
    matrix = np.concatenate(chunks, axis=0) if chunks else np.empty((0, encoder.dim))

    records = (
        (article_id, matrix[start : start + count])
        for (article_id, _), (start, count) in zip(corpus, offsets)
    )
    count = write_embedding_file(job.output_path, records, encoder.dim)
    log.info(
        "exported %d articles (%d sentences, dim %d) to %s",
        count, len(flat), encoder.dim, job.output_path,
    )
    return count
