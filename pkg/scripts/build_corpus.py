"""Assemble a >= 1 MB public-domain byte corpus from files shipped with the OS.

The SQLite headers are dedicated to the public domain by their authors and
the IANA time-zone source (tzdata.zi) is public domain as well. Documents are
separated by blank lines, which is what ``ingest_corpus`` splits on.

    python3 scripts/build_corpus.py data/corpus.txt
"""
from __future__ import annotations

import argparse
import glob
from pathlib import Path

CANDIDATES = (
    "/usr/include/sqlite3.h",
    "/usr/include/sqlite3ext.h",
    "/usr/share/zoneinfo/tzdata.zi",
    "/usr/local/lib/python3*/dist-packages/tensorflow/include/external/org_sqlite/sqlite3*.h",
)
MIN_BYTES = 1 << 20


def source_files() -> list[Path]:
    found = []
    for pattern in CANDIDATES:
        found.extend(Path(p) for p in sorted(glob.glob(pattern)))
    return [p for p in found if p.is_file()]


def build(out: Path) -> int:
    files = source_files()
    data = b"\n\n".join(f.read_bytes() for f in files)
    if len(data) < MIN_BYTES:
        raise SystemExit(f"only {len(data)} bytes of source text found; need {MIN_BYTES}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    return len(data)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path, nargs="?", default=Path("data/corpus.txt"))
    args = ap.parse_args()
    n = build(args.out)
    print(f"wrote {n} bytes to {args.out}")


if __name__ == "__main__":
    main()
