"""CSV, PGM and JSON writers plus a checksummed manifest.

PGM rasters are binary P5 with one byte per cell: 0 EXTERIOR, 128 DIRICHLET,
255 wetted INTERIOR, 32 dry INTERIOR. In 2D, row r of the image is y index
``ny-1-r`` so the picture has y pointing up.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .energy import BREAKDOWN_COLUMNS, EnergyBreakdown, Profile
from .grid import DIRICHLET, EXTERIOR, GridDomain

PGM_EXTERIOR = 0
PGM_DIRICHLET = 128
PGM_WET = 255
PGM_DRY = 32


class OutputError(OSError):
    pass


def mask_raster(domain: GridDomain, mask: np.ndarray) -> np.ndarray:
    img = np.where(mask, PGM_WET, PGM_DRY).astype(np.uint8)
    img[domain.cell_class == DIRICHLET] = PGM_DIRICHLET
    img[domain.cell_class == EXTERIOR] = PGM_EXTERIOR
    if domain.dim == 1:
        return img[None, :]
    return img.T[::-1]


def pgm_bytes(img: np.ndarray) -> bytes:
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise OutputError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def field_rows(profile: Profile):
    d = profile.domain
    coords = d.coordinates()
    for idx in np.ndindex(d.shape):
        yield [*idx, *(float(c[idx]) for c in coords), float(profile.u[idx])]


def field_header(dim: int) -> list[str]:
    return (["i"] if dim == 1 else ["i", "j"]) + (["x"] if dim == 1 else ["x", "y"]) + ["u"]


def breakdown_text(bd: EnergyBreakdown, t: float = 0.0) -> str:
    return csv_text(BREAKDOWN_COLUMNS, [bd.csv_row(t)])


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class OutputWriter:
    """Single writer per output directory; records every file for the manifest."""

    root: str
    files: list = field(default_factory=list)

    def __post_init__(self):
        try:
            os.makedirs(self.root, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {self.root}: {exc.strerror}") from exc

    def _write(self, name: str, data: bytes) -> str:
        path = os.path.join(self.root, name)
        try:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc.strerror}") from exc
        self.files.append(name)
        return path

    def text(self, name: str, text: str) -> str:
        return self._write(name, text.encode("utf-8"))

    def csv(self, name: str, header, rows) -> str:
        return self.text(name, csv_text(header, rows))

    def json(self, name: str, obj) -> str:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def pgm(self, name: str, domain: GridDomain, mask: np.ndarray) -> str:
        return self._write(name, pgm_bytes(mask_raster(domain, mask)))

    def manifest(self, name: str = "manifest.json", extra: dict | None = None) -> str:
        entries = [{"file": f, "sha256": sha256_file(os.path.join(self.root, f))} for f in sorted(set(self.files))]
        body = {"files": entries}
        if extra:
            body.update(extra)
        path = os.path.join(self.root, name)
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(body, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc.strerror}") from exc
        return path


def write_solve(prefix: str, result, domain: GridDomain) -> list[str]:
    """Mask PGM, field CSV, breakdown CSV and certificate text for one solve."""
    root, base = os.path.split(prefix)
    w = OutputWriter(root or ".")
    base = base or "solve"
    w.pgm(f"{base}_mask.pgm", domain, result.profile.mask)
    w.csv(f"{base}_u.csv", field_header(domain.dim), field_rows(result.profile))
    w.text(f"{base}_breakdown.csv", breakdown_text(result.breakdown))
    w.text(f"{base}_certificate.txt", result.certificate.text())
    w.manifest(f"{base}_manifest.json")
    return w.files


def _snapshot_indices(entries, snapshots) -> list[int]:
    if not snapshots:
        return list(range(len(entries)))
    times = np.array([e.t for e in entries])
    out = []
    for t in snapshots:
        k = int(np.searchsorted(times, t + 1e-12, side="right") - 1)
        if k >= 0 and k not in out:
            out.append(k)
    return out


def write_outputs(tree, out_dir: str, snapshots=(), extra: dict | None = None) -> OutputWriter:
    """Per-branch trace CSVs, mask PGMs at snapshot times, the branch tree and a manifest.

    ``tree`` may be a BranchTree, a single Trace, or None for an empty run.
    """
    from .evolution import TRACE_COLUMNS, BranchTree, Trace, branch_ledger

    w = OutputWriter(out_dir)
    if tree is None or (isinstance(tree, Trace) and not tree.entries):
        w.manifest(extra=extra)
        return w
    if isinstance(tree, Trace):
        branches = [("r", tree)]
        tree_json = [{"id": "r", "parent": None, "spawn_time": None, "decision": None, "children": []}]
    elif isinstance(tree, BranchTree):
        branches = [(leaf.id, branch_ledger(tree, leaf.id)) for leaf in sorted(tree.leaves(), key=lambda n: n.id)]
        tree_json = tree.to_list()
    else:
        raise TypeError("expected a BranchTree, Trace or None")
    for bid, tr in branches:
        if not tr.entries:
            continue
        w.csv(f"trace_{bid}.csv", TRACE_COLUMNS, tr.rows())
        for k in _snapshot_indices(tr.entries, snapshots):
            e = tr.entries[k]
            w.pgm(f"masks/{bid}_k{k:04d}.pgm", tr.domain, e.profile.mask)
    w.json("branches.json", tree_json)
    w.manifest(extra=extra)
    return w
