"""Reading UCR/UEA archive files and writing pipeline artifacts.

Two input layouts are understood, chosen by file extension:

* ``.ts`` -- the UEA format: ``@`` header directives, then ``@data`` lines of
  colon-separated dimensions, each a comma-separated list of values, with the
  class label as the last field.
* ``.tsv`` / ``.txt`` / ``.csv`` -- the UCR layout: one univariate series per
  line, class label in the first column.

Class tokens are mapped to contiguous indices 0..K-1 in sorted order (numeric
order when every token parses as a number).
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, IoError, LabelError, ParseError, ShapeError


@dataclass
class MultichannelSeries:
    values: np.ndarray
    label: int | None = None
    id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2:
            raise ShapeError(f"series values must be (C, N), got shape {values.shape}")
        if values.shape[1] < 2:
            raise ShapeError(f"series needs at least 2 samples, got {values.shape[1]}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"series {self.id!r} contains non-finite samples")
        self.values = values

    @property
    def channel_count(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    items: list
    class_count: int
    split_tag: str = "train"
    class_names: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.class_count < 1:
            raise LabelError("class_count must be positive")
        if self.items:
            channels = {s.channel_count for s in self.items}
            if len(channels) != 1:
                raise ShapeError(f"items disagree on channel count: {sorted(channels)}")
        for s in self.items:
            if s.label is not None and not 0 <= s.label < self.class_count:
                raise LabelError(f"label {s.label} outside [0, {self.class_count})")

    def __len__(self):
        return len(self.items)

    @property
    def channel_count(self) -> int:
        return self.items[0].channel_count if self.items else 0

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.items], dtype=int)

    def array(self) -> np.ndarray:
        """Stack equal-length items into a (B, C, N) array."""
        lengths = {s.length for s in self.items}
        if len(lengths) != 1:
            raise ShapeError(f"items have differing lengths: {sorted(lengths)}")
        return np.stack([s.values for s in self.items])

    def subset(self, indices, split_tag=None) -> "Dataset":
        return Dataset([self.items[i] for i in indices], self.class_count,
                       split_tag or self.split_tag, list(self.class_names), self.name)


def _sort_labels(tokens):
    try:
        return sorted(tokens, key=float)
    except ValueError:
        return sorted(tokens)


def _label_index(token, mapping, lineno):
    try:
        return mapping[token]
    except KeyError:
        raise LabelError(f"line {lineno}: unknown class token {token!r}") from None


def _split_tag(path):
    stem = os.path.basename(path).upper()
    return "test" if "_TEST" in stem else "train"


def _parse_float(text, lineno):
    text = text.strip()
    if text in ("?", "", "NaN", "nan"):
        raise DataError(f"line {lineno}: missing value")
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse value {text!r}", lineno) from None
    if not np.isfinite(value):
        raise DataError(f"line {lineno}: non-finite value {text!r}")
    return value


_KNOWN_DIRECTIVES = {
    "@problemname", "@timestamps", "@missing", "@univariate", "@dimensions",
    "@dimension", "@equallength", "@serieslength", "@classlabel", "@targetlabel",
    "@data",
}


def _read_ts(lines, path, class_names):
    header = {}
    declared_labels = None
    data_start = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not line.startswith("@"):
            raise ParseError("data before @data directive", lineno)
        parts = line.split()
        key = parts[0].lower()
        if key not in _KNOWN_DIRECTIVES:
            raise ParseError(f"unknown directive {parts[0]!r}", lineno)
        if key == "@data":
            data_start = lineno
            break
        if key in ("@univariate", "@timestamps", "@missing", "@equallength", "@targetlabel"):
            if len(parts) != 2 or parts[1].lower() not in ("true", "false"):
                raise ParseError(f"{parts[0]} expects true or false", lineno)
            header[key] = parts[1].lower() == "true"
        elif key == "@classlabel":
            if len(parts) < 2 or parts[1].lower() not in ("true", "false"):
                raise ParseError("@classLabel expects true or false", lineno)
            if parts[1].lower() == "true":
                if len(parts) < 3:
                    raise ParseError("@classLabel true needs at least one class token", lineno)
                declared_labels = parts[2:]
            header[key] = parts[1].lower() == "true"
        elif key in ("@dimensions", "@dimension", "@serieslength"):
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError(f"{parts[0]} expects a positive integer", lineno)
            header[key] = int(parts[1])
        else:
            if len(parts) < 2:
                raise ParseError(f"{parts[0]} expects a value", lineno)
            header[key] = " ".join(parts[1:])
    if data_start is None:
        raise ParseError("missing @data directive", len(lines))
    if not header.get("@classlabel", False):
        raise ParseError("file declares no class labels", data_start)
    if class_names is None:
        class_names = _sort_labels(declared_labels)
    else:
        unknown = set(declared_labels) - set(class_names)
        if unknown:
            raise LabelError(f"class tokens {sorted(unknown)} not in the supplied label set")
    mapping = {name: i for i, name in enumerate(class_names)}
    expected_dims = header.get("@dimensions", header.get("@dimension"))
    if header.get("@univariate") is True:
        expected_dims = 1

    items = []
    for lineno in range(data_start + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(":")
        if len(fields) < 2:
            raise ParseError("data line needs at least one dimension and a label", lineno)
        label = _label_index(fields[-1].strip(), mapping, lineno)
        channels = [[_parse_float(v, lineno) for v in dim.split(",")] for dim in fields[:-1]]
        if expected_dims is not None and len(channels) != expected_dims:
            raise ShapeError(f"line {lineno}: expected {expected_dims} dimensions, found {len(channels)}")
        lengths = {len(c) for c in channels}
        if len(lengths) != 1:
            raise ShapeError(f"line {lineno}: ragged channel lengths {sorted(lengths)}")
        items.append(MultichannelSeries(np.array(channels), label, f"{os.path.basename(path)}:{len(items)}"))
    name = header.get("@problemname", os.path.splitext(os.path.basename(path))[0])
    return Dataset(items, len(class_names), _split_tag(path), list(class_names), name)


def _read_tsv(lines, path, class_names):
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = re.split(r"[\t,]| +", line)
        if len(fields) < 3:
            raise ParseError("a row needs a label and at least two samples", lineno)
        rows.append((lineno, fields[0].strip(), fields[1:]))
    tokens = {token for _, token, _ in rows}
    if class_names is None:
        class_names = _sort_labels(tokens)
    mapping = {name: i for i, name in enumerate(class_names)}
    items = []
    for lineno, token, values in rows:
        label = _label_index(token, mapping, lineno)
        x = np.array([_parse_float(v, lineno) for v in values])
        items.append(MultichannelSeries(x[None, :], label, f"{os.path.basename(path)}:{len(items)}"))
    name = re.sub(r"_(TRAIN|TEST)$", "", os.path.splitext(os.path.basename(path))[0], flags=re.I)
    return Dataset(items, max(len(class_names), 1), _split_tag(path), list(class_names), name)


def parse_ts(path, class_names=None) -> Dataset:
    """Read a ``.ts`` or UCR tab-separated file.

    ``class_names`` fixes the label mapping (e.g. to the training split's);
    tokens outside it raise :class:`LabelError`.
    """
    try:
        with open(path, encoding="utf8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if class_names is not None:
        class_names = list(class_names)
    if str(path).lower().endswith(".ts"):
        return _read_ts(lines, str(path), class_names)
    return _read_tsv(lines, str(path), class_names)


def write_tsv(dataset: Dataset, path) -> None:
    """Write a univariate dataset in the UCR layout, values at round-trip precision."""
    if dataset.channel_count not in (0, 1):
        raise ShapeError("the UCR layout holds univariate series only")
    names = dataset.class_names or [str(i) for i in range(dataset.class_count)]
    out = io.StringIO()
    for s in dataset.items:
        out.write("\t".join([names[s.label]] + [repr(float(v)) for v in s.values[0]]) + "\n")
    _write_text(path, out.getvalue())


def write_ts(dataset: Dataset, path) -> None:
    names = dataset.class_names or [str(i) for i in range(dataset.class_count)]
    lines = [
        f"@problemName {dataset.name or 'dataset'}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if dataset.channel_count == 1 else 'false'}",
        f"@dimensions {dataset.channel_count}",
        "@equalLength true",
        f"@classLabel true {' '.join(names)}",
        "@data",
    ]
    for s in dataset.items:
        dims = [",".join(repr(float(v)) for v in row) for row in s.values]
        lines.append(":".join(dims + [names[s.label]]))
    _write_text(path, "\n".join(lines) + "\n")


def znormalize(series: MultichannelSeries) -> MultichannelSeries:
    """Per-channel z-score with population std; zero-variance channels become zeros."""
    x = np.asarray(series.values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("cannot normalise non-finite samples")
    mu = x.mean(axis=1, keepdims=True)
    centred = x - mu
    sd = np.sqrt((centred ** 2).mean(axis=1, keepdims=True))
    safe = np.where(sd > 0, sd, 1.0)
    z = np.where(sd > 0, centred / safe, 0.0)
    return MultichannelSeries(z, series.label, series.id)


def znormalize_dataset(dataset: Dataset) -> Dataset:
    return Dataset([znormalize(s) for s in dataset.items], dataset.class_count,
                   dataset.split_tag, list(dataset.class_names), dataset.name)


def _write_bytes(path, payload: bytes):
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text: str):
    _write_bytes(path, text.encode("utf8"))


def image_bytes(pixels) -> bytes:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ShapeError(f"image must be 2-D, got shape {pixels.shape}")
    if np.any(pixels < 0) or np.any(pixels > 1) or not np.all(np.isfinite(pixels)):
        raise DataError("image pixels must lie in [0, 1]")
    h, w = pixels.shape
    # round half up: 0.5 -> 128
    body = np.floor(pixels * 255.0 + 0.5).astype(np.uint8)
    return f"P5 {w} {h} 255\n".encode("ascii") + body.tobytes()


def export_image(image, path) -> None:
    """Write a [0, 1] image as binary PGM (``P5``, maxval 255, row-major)."""
    _write_bytes(path, image_bytes(getattr(image, "pixels", image)))


def read_image(path) -> np.ndarray:
    """Read a ``P5`` file written by :func:`export_image` back to [0, 1] floats."""
    with open(path, "rb") as fh:
        data = fh.read()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not match:
        raise ParseError("not a binary PGM file")
    w, h, maxval = (int(g) for g in match.groups())
    body = np.frombuffer(data[match.end():match.end() + w * h], dtype=np.uint8)
    return body.reshape(h, w) / float(maxval)


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def export_csv(table, path) -> None:
    """Write named columns as CSV with a header row and 17-significant-digit floats."""
    columns = list(table.keys())
    lengths = {len(table[c]) for c in columns}
    if len(lengths) > 1:
        raise ShapeError(f"columns differ in length: {sorted(lengths)}")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in zip(*(table[c] for c in columns)):
        writer.writerow([_format_cell(v) for v in row])
    _write_text(path, out.getvalue())


def read_csv(path) -> dict:
    """Read a CSV written by :func:`export_csv`; numeric columns come back as floats."""
    with open(path, encoding="utf8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    table = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            table[name] = [float(v) for v in col]
        except ValueError:
            table[name] = col
    return table
