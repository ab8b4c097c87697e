"""Byte-level tokenizer and corpus packing."""
from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InputError

PAD, BOS, EOS = 256, 257, 258
VOCAB_SIZE = 259


def tokenize(text: bytes | str) -> list[int]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


def detokenize(ids: Iterable[int], strip_special: bool = True) -> bytes:
    """Inverse of :func:`tokenize`. Reserved ids are dropped when ``strip_special``."""
    out = bytearray()
    for i in ids:
        i = int(i)
        if i < 0 or i >= VOCAB_SIZE:
            raise InputError(f"token id {i} outside vocabulary of {VOCAB_SIZE}")
        if i >= 256:
            if strip_special:
                continue
            raise InputError(f"reserved id {i} has no byte form")
        out.append(i)
    return bytes(out)


def encode_document(text: bytes | str) -> list[int]:
    return [BOS] + tokenize(text) + [EOS]


def split_documents(raw: bytes, delimiter: bytes | None = b"\n\n") -> list[bytes]:
    """Split a file into documents on ``delimiter``; empty pieces are dropped."""
    parts = [raw] if delimiter is None else raw.split(delimiter)
    return [p for p in parts if p.strip()]


def pack_blocks(documents: Iterable[bytes | str], context_length: int) -> np.ndarray:
    """Concatenate ``BOS doc EOS`` sequences and chop into ``context_length`` blocks.

    The final partial block is right-padded with ``PAD``.
    """
    stream: list[int] = []
    for doc in documents:
        stream.extend(encode_document(doc))
    if not stream:
        raise InputError("empty corpus")
    n_blocks = math.ceil(len(stream) / context_length)
    out = np.full(n_blocks * context_length, PAD, dtype=np.int64)
    out[: len(stream)] = stream
    return out.reshape(n_blocks, context_length)


def ingest_corpus(paths, context_length: int, delimiter: bytes | None = b"\n\n",
                  max_bytes: int | None = None) -> np.ndarray:
    """Read one or more files (or every file in a directory) into token blocks."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.rglob("*") if q.is_file()))
        elif p.is_file():
            files.append(p)
        else:
            raise InputError(f"corpus path not found: {p}")
    docs: list[bytes] = []
    budget = max_bytes
    for f in files:
        raw = f.read_bytes()
        if budget is not None:
            raw = raw[:budget]
            budget -= len(raw)
        docs.extend(split_documents(raw, delimiter))
        if budget is not None and budget <= 0:
            break
    if not docs:
        raise InputError("empty corpus")
    return pack_blocks(docs, context_length)


def truncate_words(text: str, n_words: int) -> str:
    """First ``n_words`` whitespace-separated words of ``text``."""
    return " ".join(text.split()[:n_words])


def read_prompts(path, delimiter: str | None = None) -> list[str]:
    """One prompt per line, or ``delimiter``-separated documents."""
    text = Path(path).read_text(encoding="utf-8")
    if delimiter is None:
        return text.splitlines()
    return text.split(delimiter)
