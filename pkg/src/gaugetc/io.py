"""File formats: sample CSV, model JSON and JSON-lines traces.

Coordinates in files are one-based.
"""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from .gauge import AtomicModel, SignVertex
from .tensor import SampleSet, Shape, as_shape


class FormatError(ValueError):
    """Malformed input file."""


def write_samples_csv(path, samples: SampleSet):
    p = samples.shape.order
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(p)] + ["y"])
        for x, y in zip(samples.indices, samples.values):
            w.writerow([int(c) + 1 for c in x] + [repr(float(y))])


def read_samples_csv(path, shape=None) -> SampleSet:
    """Read a sample CSV; ``shape`` defaults to the largest coordinate per mode."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        p = len(header) - 1
        if p < 1 or header != [f"x{k + 1}" for k in range(p)] + ["y"]:
            raise FormatError(f"{path}, line 1: expected header x1,...,xp,y, got {','.join(header)}")
        coords, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != p + 1:
                raise FormatError(f"{path}, line {lineno}: expected {p + 1} fields, got {len(row)}")
            try:
                x = [int(cell) - 1 for cell in row[:p]]
                y = float(row[p])
            except ValueError:
                raise FormatError(f"{path}, line {lineno}: cannot parse {','.join(row)}") from None
            if any(c < 0 for c in x):
                raise FormatError(f"{path}, line {lineno}: coordinates are one-based")
            if not math.isfinite(y):
                raise FormatError(f"{path}, line {lineno}: non-finite value")
            coords.append(x)
            values.append(y)
    if not values:
        raise FormatError(f"{path}: no samples")
    idx = np.asarray(coords, dtype=np.int64)
    if shape is None:
        shape = Shape(idx.max(axis=0) + 1)
    shape = as_shape(shape)
    if shape.order != p:
        raise FormatError(f"{path}: file has {p} modes, shape {shape.dims} has {shape.order}")
    bad = np.argwhere(idx >= np.asarray(shape.dims))
    if len(bad):
        row, mode = bad[0]
        raise FormatError(f"{path}, line {row + 2}: coordinate {idx[row, mode] + 1} exceeds "
                          f"mode {mode + 1} size {shape[mode]}")
    return SampleSet.from_arrays(shape, idx, values)


def model_to_dict(model: AtomicModel) -> dict:
    return {
        "shape": list(model.shape.dims),
        "lambda": model.lam,
        "terms": [
            {"weight": float(a), "signs": [[int(s) for s in vec] for vec in v.signs]}
            for a, v in zip(model.weights, model.vertices)
        ],
    }


def model_from_dict(data: dict) -> AtomicModel:
    try:
        shape = Shape(data["shape"])
        lam = float(data["lambda"])
        weights, vertices = [], []
        for t in data["terms"]:
            weights.append(float(t["weight"]))
            vertices.append(SignVertex(t["signs"]))
    except (KeyError, TypeError) as err:
        raise FormatError(f"malformed model: {err}") from None
    for v in vertices:
        if v.shape != shape:
            raise FormatError(f"term signs have lengths {v.shape.dims}, model shape is {shape.dims}")
    return AtomicModel(shape, lam, weights, vertices)


def write_model_json(path, model: AtomicModel):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def read_model_json(path) -> AtomicModel:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"{path}: {err}") from None
    try:
        return model_from_dict(data)
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from None


def write_trace_jsonl(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
