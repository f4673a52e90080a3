#!/usr/bin/env python3
"""Materialize MovieLens 100K as ``u.data`` / ``u.item`` under ``data/ml-100k``.

The GroupLens archive is the canonical source; point ``--from-dir`` at an
unpacked copy and the two files are copied as-is.  Without it, the RecBole
wheel (which bundles the same 100,000 ratings and the item genres as
"atomic" files) is fetched from the package index with ``pip download`` and
converted.  The ``u.item`` written that way keeps id, title, release year and
the 19 genre flags; the URL and video-date columns are left empty.
"""
import argparse
import shutil
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
WHEEL_PREFIX = "recbole/dataset_example/ml-100k/"


def convert_atomic(inter_text: str, item_text: str, dest: Path):
    dest.mkdir(parents=True, exist_ok=True)
    lines = inter_text.splitlines()[1:]
    with open(dest / "u.data", "w", encoding="utf-8") as fh:
        for line in lines:
            u, i, r, t = line.split("\t")
            fh.write(f"{u}\t{i}\t{int(float(r))}\t{int(float(t))}\n")
    rows = []
    for line in item_text.splitlines()[1:]:
        iid, title, year, classes = (line.split("\t") + ["", "", ""])[:4]
        flags = ["1" if g in classes.split(" ") else "0" for g in GENRES]
        if not any(f == "1" for f in flags):
            flags[0] = "1"
        rows.append((int(iid), "|".join([iid, title, year, "", ""] + flags)))
    with open(dest / "u.item", "w", encoding="latin-1", errors="replace") as fh:
        for _, row in sorted(rows):
            fh.write(row + "\n")
    return len(lines), len(rows)


def from_wheel(dest: Path):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "recbole==1.2.1", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            inter = z.read(WHEEL_PREFIX + "ml-100k.inter").decode("utf-8")
            item = z.read(WHEEL_PREFIX + "ml-100k.item").decode("utf-8", errors="replace")
    return convert_atomic(inter, item, dest)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default=str(Path(__file__).resolve().parents[1] / "data" / "ml-100k"))
    ap.add_argument("--from-dir", help="unpacked GroupLens ml-100k directory")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)
    dest = Path(args.dest)
    if (dest / "u.data").exists() and (dest / "u.item").exists() and not args.force:
        print(f"{dest} already populated")
        return 0
    if args.from_dir:
        dest.mkdir(parents=True, exist_ok=True)
        for name in ("u.data", "u.item"):
            shutil.copy(Path(args.from_dir) / name, dest / name)
        print(f"copied u.data and u.item to {dest}")
        return 0
    n_ratings, n_items = from_wheel(dest)
    print(f"wrote {n_ratings} ratings and {n_items} items to {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
