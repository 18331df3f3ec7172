"""Writers for histories, images, traces and summaries.  All output is byte-deterministic."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..mesh import ScalarField, write_field

HISTORY_HEADER = ["iter", "residual_l2", "G_alpha", "misclassified_fraction"]
LK_HISTORY_HEADER = HISTORY_HEADER + ["cycle", "component_j"]


def _num(x) -> str:
    return repr(float(x))


def write_history(path, records, lk: bool = False) -> None:
    """CSV history; ``records`` are tuples in the header's column order."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(LK_HISTORY_HEADER if lk else HISTORY_HEADER)
        for rec in records:
            row = [rec[0]] + [_num(v) for v in rec[1:4]] + [int(v) for v in rec[4:]]
            out.writerow(row)


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def pgm_bytes(f: ScalarField, lo: float = 1.0, hi: float = 2.0) -> bytes:
    """Plain PGM (P2): ``lo`` maps to 0 and ``hi`` to 255, top row first."""
    v = np.clip((f.values - lo) / (hi - lo), 0.0, 1.0)
    pix = np.rint(255 * v).astype(int)[::-1]
    rows, cols = pix.shape
    lines = ["P2", f"{cols} {rows}", "255"] + [" ".join(map(str, r)) for r in pix]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(path, f: ScalarField, lo: float = 1.0, hi: float = 2.0) -> None:
    Path(path).write_bytes(pgm_bytes(f, lo, hi))


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM file")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array(tokens[4:], dtype=int).reshape(rows, cols)
    if pix.max(initial=0) > maxval:
        raise ValueError(f"{path}: pixel above maxval")
    return pix


def write_traces(path, nodes, traces, clean=None) -> None:
    """CSV ``source,node_i,node_j,value`` (plus ``clean`` when noise was added)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["source", "node_i", "node_j", "value"] + (["clean"] if clean is not None else []))
        for s, tr in enumerate(traces, 1):
            for k, (i, j) in enumerate(nodes):
                row = [s, i, j, _num(tr[k])]
                if clean is not None:
                    row.append(_num(clean[s - 1][k]))
                out.writerow(row)


def read_traces(path) -> dict[int, np.ndarray]:
    out: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["source"]), []).append(float(row["value"]))
    return {k: np.array(v) for k, v in out.items()}


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def export(path, field: ScalarField, fmt: str | None = None) -> None:
    """Write ``field`` as a field file (``.field``) or a PGM image (``.pgm``)."""
    fmt = fmt or Path(path).suffix.lstrip(".")
    if fmt == "pgm":
        write_pgm(path, field)
    elif fmt in ("field", "txt"):
        write_field(path, field)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
