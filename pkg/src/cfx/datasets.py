"""Readers for UCR ``.tsv`` / UEA ``.ts`` archive files and a CBF generator."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cfx.seeding import rng_for
from cfx.series import ClassLabel, Dataset, TimeSeries

CBF_KINDS = ("cylinder", "bell", "funnel")


class DataFormatError(ValueError):
    """Malformed archive file; message carries line (and column) numbers."""


@dataclass(frozen=True)
class TsHeader:
    problem_name: str
    univariate: bool
    class_labels: tuple[str, ...]
    dimensions: int = 0


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    length: int
    count: int
    seed: int

    def __post_init__(self):
        if self.kind not in CBF_KINDS:
            raise ValueError(f"unknown CBF class {self.kind!r}")
        if self.length < 16:
            raise ValueError(f"CBF length must be >= 16, got {self.length}")
        if self.count < 1:
            raise ValueError("CBF sample count must be >= 1")


def _lines(stream):
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def _float(token: str, lineno: int, col: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DataFormatError(f"line {lineno}, column {col}: cannot parse {token!r} as a number") from None
    if not np.isfinite(v):
        raise DataFormatError(f"line {lineno}, column {col}: non-finite value {token!r}")
    return v


def _index_labels(raw: list[str]) -> list[ClassLabel]:
    vocab = {name: i for i, name in enumerate(sorted(set(raw)))}
    return [ClassLabel(vocab[name], name) for name in raw]


def parse_ucr_tsv(stream) -> list[tuple[TimeSeries, ClassLabel]]:
    """Parse ``label<TAB>v1<TAB>v2...`` rows into univariate series."""
    rows, raw_labels = [], []
    width = first_line = None
    for lineno, line in _lines(stream):
        tokens = line.split("\t")
        values = [_float(tok.strip(), lineno, col) for col, tok in enumerate(tokens[1:], start=2)]
        if not values:
            raise DataFormatError(f"line {lineno}: no values after label")
        if width is None:
            width, first_line = len(values), lineno
        elif len(values) != width:
            raise DataFormatError(
                f"line {lineno}: ragged row with {len(values)} values, expected {width} (from line {first_line})"
            )
        raw_labels.append(tokens[0].strip())
        rows.append(values)
    if not rows:
        raise DataFormatError("no data rows")
    labels = _index_labels(raw_labels)
    return [(TimeSeries(np.array(r)[:, None]), lab) for r, lab in zip(rows, labels)]


def _header_flag(value: str, lineno: int) -> bool:
    v = value.lower()
    if v not in ("true", "false"):
        raise DataFormatError(f"line {lineno}: expected true/false, got {value!r}")
    return v == "true"


def parse_uea_ts(stream) -> tuple[TsHeader, list[tuple[TimeSeries, ClassLabel]]]:
    """Parse an equal-length, class-labeled ``.ts`` file."""
    name, univariate, class_labels = "", None, None
    in_data = False
    series, raw_labels = [], []
    shape = None
    for lineno, line in _lines(stream):
        if not in_data:
            if not line.startswith("@"):
                raise DataFormatError(f"line {lineno}: data before @data section")
            key, _, rest = line[1:].partition(" ")
            key, rest = key.lower(), rest.strip()
            if key == "problemname":
                name = rest
            elif key == "univariate":
                univariate = _header_flag(rest, lineno)
            elif key == "timestamps":
                if _header_flag(rest, lineno):
                    raise DataFormatError(f"line {lineno}: timestamped .ts files are not supported")
            elif key == "classlabel":
                parts = rest.split()
                if not parts or not _header_flag(parts[0], lineno):
                    raise DataFormatError(f"line {lineno}: only class-labeled files are supported")
                if len(parts) < 2:
                    raise DataFormatError(f"line {lineno}: empty class label list")
                class_labels = tuple(parts[1:])
            elif key == "data":
                if class_labels is None:
                    raise DataFormatError(f"line {lineno}: @data reached without @classLabel")
                in_data = True
            # other keys (@missing, @equalLength, @seriesLength, ...) carry nothing we need
            continue

        blocks = line.split(":")
        if len(blocks) < 2:
            raise DataFormatError(f"line {lineno}: expected 'dim1:...:label'")
        label = blocks[-1].strip()
        if label not in class_labels:
            raise DataFormatError(f"line {lineno}: label {label!r} not declared in @classLabel {list(class_labels)}")
        dims, col = [], 1
        for block in blocks[:-1]:
            toks = block.split(",")
            dims.append([_float(t.strip(), lineno, col + k) for k, t in enumerate(toks)])
            col += len(toks)
        lengths = {len(d) for d in dims}
        if len(lengths) != 1:
            raise DataFormatError(f"line {lineno}: unequal dimension lengths {[len(d) for d in dims]}")
        values = np.array(dims).T
        if shape is None:
            shape = values.shape
        elif values.shape != shape:
            raise DataFormatError(f"line {lineno}: series shape (T={values.shape[0]}, d={values.shape[1]}) "
                                  f"differs from earlier (T={shape[0]}, d={shape[1]})")
        series.append(TimeSeries(values))
        raw_labels.append(label)

    if not in_data:
        raise DataFormatError("missing @data section")
    if not series:
        raise DataFormatError("no data rows after @data")
    if univariate and shape[1] != 1:
        raise DataFormatError(f"@univariate true but rows have {shape[1]} dimensions")
    vocab = {n: i for i, n in enumerate(sorted(class_labels))}
    header = TsHeader(name, bool(univariate) if univariate is not None else shape[1] == 1,
                      class_labels, shape[1])
    return header, [(s, ClassLabel(vocab[lab], lab)) for s, lab in zip(series, raw_labels)]


def format_ucr_tsv(pairs) -> str:
    out = []
    for s, lab in pairs:
        if s.channels != 1:
            raise ValueError("UCR .tsv holds univariate series only")
        out.append("\t".join([lab.name] + [repr(float(v)) for v in s.values[:, 0]]))
    return "\n".join(out) + "\n"


def format_uea_ts(header: TsHeader, pairs) -> str:
    lines = [
        f"@problemName {header.problem_name}",
        "@timeStamps false",
        f"@univariate {'true' if header.univariate else 'false'}",
        f"@classLabel true {' '.join(header.class_labels)}",
        "@data",
    ]
    for s, lab in pairs:
        dims = [",".join(repr(float(v)) for v in s.values[:, ch]) for ch in range(s.channels)]
        lines.append(":".join(dims + [lab.name]))
    return "\n".join(lines) + "\n"


def read_split(path) -> list[tuple[TimeSeries, ClassLabel]]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        if path.suffix.lower() == ".ts":
            return parse_uea_ts(fh)[1]
        return parse_ucr_tsv(fh)


def _find_split(directory: Path, tag: str) -> Path:
    hits = sorted(p for p in directory.iterdir()
                  if p.is_file() and p.stem.upper().endswith("_" + tag) and p.suffix.lower() in (".ts", ".tsv", ".txt"))
    if not hits:
        raise FileNotFoundError(f"no *_{tag}.ts/.tsv file in {directory}")
    # prefer .ts when both formats are present
    hits.sort(key=lambda p: p.suffix.lower() != ".ts")
    return hits[0]


def resolve_split_paths(paths) -> tuple[Path, Path]:
    """Accept a directory holding ``*_TRAIN``/``*_TEST`` files, or the two files themselves."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    paths = [Path(p) for p in paths]
    if len(paths) == 1 and paths[0].is_dir():
        return _find_split(paths[0], "TRAIN"), _find_split(paths[0], "TEST")
    if len(paths) == 2:
        for p in paths:
            if not p.is_file():
                raise FileNotFoundError(f"data file not found: {p}")
        return paths[0], paths[1]
    raise FileNotFoundError(f"expected a dataset directory or TRAIN and TEST files, got {[str(p) for p in paths]}")


def load_dataset(paths) -> Dataset:
    train_path, test_path = resolve_split_paths(paths)
    name = train_path.stem
    if name.upper().endswith("_TRAIN"):
        name = name[: -len("_TRAIN")]
    return Dataset.from_pairs(read_split(train_path), read_split(test_path), name=name)


def cbf_series(kind: str, length: int, rng: np.random.Generator, noise: bool = True) -> np.ndarray:
    """One cylinder/bell/funnel draw with event bounds scaled to ``length``."""
    T = length
    a = int(rng.integers(T // 8, T // 4, endpoint=True))
    b = a + int(rng.integers(T // 4, 3 * T // 4, endpoint=True))
    amp = 6.0 + rng.standard_normal()
    eps = rng.standard_normal(T)
    if not noise:
        eps[:] = 0.0
    t = np.arange(T, dtype=np.float64)
    inside = ((t >= a) & (t <= b)).astype(np.float64)
    if kind == "cylinder":
        shape = inside
    elif kind == "bell":
        shape = inside * (t - a) / (b - a)
    elif kind == "funnel":
        shape = inside * (b - t) / (b - a)
    else:
        raise ValueError(f"unknown CBF class {kind!r}")
    return amp * shape + eps


def _cbf_pairs(specs, split: str, noise: bool):
    pairs = []
    for spec in specs:
        rng = rng_for(spec.seed, f"cbf/{split}/{spec.kind}")
        for _ in range(spec.count):
            x = cbf_series(spec.kind, spec.length, rng, noise=noise)
            pairs.append((TimeSeries(x[:, None]), ClassLabel(0, spec.kind)))
    return pairs


def generate_cbf(length: int = 64, per_class: int = 100, seed: int = 0, test_per_class: int = 0,
                 noise: bool = True) -> Dataset:
    """Balanced three-class cylinder-bell-funnel dataset, deterministic in ``seed``."""
    train_specs = [SyntheticSpec(k, length, per_class, seed) for k in CBF_KINDS]
    test = []
    if test_per_class > 0:
        test = _cbf_pairs([SyntheticSpec(k, length, test_per_class, seed) for k in CBF_KINDS], "test", noise)
    return Dataset.from_pairs(_cbf_pairs(train_specs, "train", noise), test, name="CBF")
