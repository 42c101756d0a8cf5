"""Manifest-driven dataset handling: parsing, patient-grouped splitting,
image decoding and seeded batching.

Manifest format (UTF-8 CSV)::

    # class:0:non-Covid
    # class:1:COVID-19
    path,label,patient_id,split
    images/a.png,COVID-19,P001,train
    images/b.png,0,P002,

Labels may be given by name or by integer id. Relative paths resolve against
the manifest's directory. A missing or empty split means ``unassigned``.
"""
from __future__ import annotations

import csv
import io
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ArgumentError, ImageLoadError, ManifestParseError, ValidationError
from .optim import batch_order, encode_targets
from .tensor import Shape2d, bilinear_resize

SPLITS = ("train", "val", "test", "unassigned")
HEADER = ["path", "label", "patient_id", "split"]
_CLASS_LINE = re.compile(r"^#\s*class:(\d+):(.+?)\s*$")


@dataclass(frozen=True)
class Record:
    path: str
    label: int
    patient_id: str
    split: str = "unassigned"


@dataclass
class DatasetManifest:
    classes: list
    records: list = field(default_factory=list)
    root: Path = field(default_factory=Path)

    @property
    def task(self) -> str:
        return {2: "binary", 3: "three_class"}.get(len(self.classes), "unsupported")

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def resolve(self, record: Record) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def to_csv(self) -> str:
        buf = io.StringIO()
        for i, name in enumerate(self.classes):
            buf.write(f"# class:{i}:{name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for r in self.records:
            w.writerow([r.path, self.classes[r.label], r.patient_id, r.split])
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def parse_manifest(source, root=None) -> DatasetManifest:
    """Parse a manifest from a path or from CSV text (``root`` then sets the base dir)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ManifestParseError(f"cannot read manifest {path}: {exc}") from None
        root = path.parent if root is None else Path(root)
    else:
        text = source
        root = Path(root or ".")

    lines = text.splitlines()
    declared = {}
    pos = 0
    while pos < len(lines) and (lines[pos].startswith("#") or not lines[pos].strip()):
        m = _CLASS_LINE.match(lines[pos])
        if m:
            cid = int(m.group(1))
            if cid in declared:
                raise ManifestParseError(f"class id {cid} declared twice", pos + 1)
            declared[cid] = m.group(2)
        pos += 1
    if not declared:
        raise ManifestParseError("no '# class:<id>:<name>' declarations before the header")
    if sorted(declared) != list(range(len(declared))):
        raise ValidationError(f"class ids must be dense 0..n-1, got {sorted(declared)}")
    classes = [declared[i] for i in range(len(declared))]
    by_name = {name: i for i, name in enumerate(classes)}

    if pos >= len(lines):
        raise ManifestParseError("missing header row", pos + 1)
    header = [h.strip() for h in next(csv.reader([lines[pos]]))]
    if header[:3] != HEADER[:3] or header[3:] not in ([], ["split"]):
        raise ManifestParseError(f"header must be {','.join(HEADER)}, got {lines[pos]!r}", pos + 1)
    header_line = pos + 1

    records = []
    seen = set()
    for offset, row in enumerate(csv.reader(lines[pos + 1:])):
        lineno = header_line + offset + 1
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) not in (3, 4):
            raise ManifestParseError(f"expected 3 or 4 columns, got {len(row)}", lineno)
        path, label, patient = (c.strip() for c in row[:3])
        split = row[3].strip() if len(row) == 4 else ""
        split = split or "unassigned"
        if not path:
            raise ManifestParseError("empty path", lineno)
        if not patient:
            raise ManifestParseError("empty patient_id", lineno)
        if split not in SPLITS:
            raise ManifestParseError(f"unknown split {split!r}", lineno)
        if label in by_name:
            cid = by_name[label]
        elif label.isdigit() and int(label) < len(classes):
            cid = int(label)
        else:
            raise ValidationError(f"line {lineno}: unknown label {label!r}")
        if path in seen:
            raise ValidationError(f"line {lineno}: duplicate path {path}")
        seen.add(path)
        records.append(Record(path, cid, patient, split))
    return DatasetManifest(classes, records, root)


def _assign_groups(groups: list, ratios, names) -> dict:
    """Greedy: each group goes to the split furthest below its target share."""
    total = sum(size for _, size in groups)
    targets = [r * total for r in ratios]
    counts = [0] * len(ratios)
    out = {}
    for key, size in groups:
        deficits = [targets[i] - counts[i] for i in range(len(ratios))]
        best = max(range(len(ratios)), key=lambda i: (deficits[i], -i))
        counts[best] += size
        out[key] = names[best]
    return out


def _split_names(ratios):
    if len(ratios) == 2:
        return ("train", "val")
    if len(ratios) == 3:
        return ("train", "val", "test")
    raise ArgumentError(f"expected 2 or 3 split ratios, got {len(ratios)}")


def _check_ratios(ratios):
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ArgumentError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    return ratios


def patient_split(manifest: DatasetManifest, ratios=(0.8, 0.2), seed=0) -> DatasetManifest:
    """Assign unassigned records to splits, keeping each patient's images together.

    Patients are shuffled with ``seed``, ordered largest first, then placed
    greedily so image counts approach ``ratios``. Records that already carry a
    split are left alone.
    """
    ratios = _check_ratios(ratios)
    names = _split_names(ratios)
    pending = [r for r in manifest.records if r.split == "unassigned"]
    if not pending:
        return manifest
    sizes = defaultdict(int)
    for r in pending:
        sizes[r.patient_id] += 1
    patients = sorted(sizes)
    if len(patients) < len(ratios):
        raise ArgumentError(f"{len(patients)} patients cannot fill {len(ratios)} splits")
    order = np.random.default_rng(seed).permutation(len(patients))
    groups = [(patients[i], sizes[patients[i]]) for i in order]
    groups.sort(key=lambda g: -g[1])  # stable: ties keep the shuffled order
    where = _assign_groups(groups, ratios, names)
    records = [
        replace(r, split=where[r.patient_id]) if r.split == "unassigned" else r
        for r in manifest.records
    ]
    return replace(manifest, records=records)


def image_split(manifest: DatasetManifest, ratios=(0.8, 0.2), seed=0) -> DatasetManifest:
    """Image-level split that ignores patient identity."""
    ratios = _check_ratios(ratios)
    names = _split_names(ratios)
    pending = [i for i, r in enumerate(manifest.records) if r.split == "unassigned"]
    if not pending:
        return manifest
    if len(pending) < len(ratios):
        raise ArgumentError(f"{len(pending)} images cannot fill {len(ratios)} splits")
    order = np.random.default_rng(seed).permutation(len(pending))
    where = _assign_groups([(pending[i], 1) for i in order], ratios, names)
    records = list(manifest.records)
    for i, split in where.items():
        records[i] = replace(records[i], split=split)
    return replace(manifest, records=records)


def decode_image(path) -> np.ndarray:
    """Decode PNG/JPEG/PGM into a float64 ``3 x h x w`` array in [0, 1]."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.float64)
                peak = 65535.0 if img.mode.startswith("I;16") or arr.max(initial=0) > 255 else 255.0
                arr = np.clip(arr / peak, 0.0, 1.0)[None]
            elif img.mode in ("L", "P", "LA", "1"):
                arr = np.asarray(img.convert("L"), dtype=np.float64)[None] / 255.0
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageLoadError(path, exc) from None
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return arr


def load_image(record_or_path, target=(224, 224), root=None) -> np.ndarray:
    path = record_or_path.path if isinstance(record_or_path, Record) else record_or_path
    path = Path(path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    arr = decode_image(path)
    out = bilinear_resize(arr, Shape2d.of(target))
    return np.clip(out, 0.0, 1.0)


class ArrayDataset:
    """In-memory images (``n x c x h x w``) with integer labels."""

    def __init__(self, images, labels, dtype=np.float32):
        self.images = np.asarray(images, dtype=dtype)
        self.labels = np.asarray(labels, dtype=np.intp)
        if len(self.images) != len(self.labels):
            raise ArgumentError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def get(self, idx):
        return self.images[idx], self.labels[idx]


class ManifestDataset:
    """Lazily decoded view of one manifest split; decoded images are cached."""

    def __init__(self, manifest: DatasetManifest, split: str, target=(224, 224), dtype=np.float32):
        self.manifest = manifest
        self.records = manifest.split(split)
        self.target = Shape2d.of(target)
        self.dtype = dtype
        self._cache = {}

    def __len__(self):
        return len(self.records)

    def image(self, i):
        if i not in self._cache:
            rec = self.records[i]
            self._cache[i] = load_image(self.manifest.resolve(rec), self.target).astype(self.dtype)
        return self._cache[i]

    def get(self, idx):
        idx = np.atleast_1d(idx)
        x = np.stack([self.image(int(i)) for i in idx])
        y = np.array([self.records[int(i)].label for i in idx], dtype=np.intp)
        return x, y


def make_batches(manifest: DatasetManifest, split: str, batch_size=8, seed=0, epoch=0) -> list:
    """Seeded batch plan for one epoch: list of (records, targets)."""
    records = manifest.split(split)
    if not records:
        raise ArgumentError(f"split {split!r} is empty")
    task = manifest.task
    out = []
    for idx in batch_order(len(records), batch_size, seed, epoch):
        batch = [records[i] for i in idx]
        out.append((batch, encode_targets([r.label for r in batch], task)))
    return out
