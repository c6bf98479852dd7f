"""Versioned text checkpoints.

Layout (one record per line, floats written with ``repr`` so they round-trip
exactly)::

    dropgp-checkpoint 1
    widths 1,50,50,1
    nonlinearity relu
    scale_features 0
    output_bias 1
    keep_probs 0.9,0.9,0.9
    tau 1.0
    task regression
    array weight0 1 50
    <one row per line, entries space separated, row-major>
    ...
    calibration 20
    <one value per line>
    end

Arrays appear in ParamSet order: weights, hidden biases, output bias. The
calibration block is optional.
"""
from dataclasses import dataclass

import numpy as np

from dropgp.network import NetworkSpec, ParamSet, param_shapes
from dropgp.uncertainty import CalibrationTable

MAGIC = "dropgp-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: ParamSet
    keep_probs: tuple
    tau: float
    task: str = "regression"
    calibration: CalibrationTable = None


def _fmt(v):
    return repr(float(v))


def _array_names(spec):
    names = [f"weight{i}" for i in range(spec.n_layers)]
    names += [f"bias{i}" for i in range(len(spec.hidden))]
    if spec.output_bias:
        names.append("output_bias")
    return names


def dumps(ckpt):
    spec = ckpt.spec
    lines = [
        f"{MAGIC} {VERSION}",
        "widths " + ",".join(str(w) for w in spec.widths),
        f"nonlinearity {spec.nonlinearity}",
        f"scale_features {int(spec.scale_features)}",
        f"output_bias {int(spec.output_bias)}",
        "keep_probs " + ",".join(_fmt(p) for p in ckpt.keep_probs),
        f"tau {_fmt(ckpt.tau)}",
        f"task {ckpt.task}",
    ]
    for name, a in zip(_array_names(spec), ckpt.params.arrays()):
        a2 = np.atleast_2d(a) if a.ndim == 1 else a
        lines.append(f"array {name} {a2.shape[0]} {a2.shape[1]}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in a2)
    if ckpt.calibration is not None:
        lines.append(f"calibration {ckpt.calibration.count}")
        lines.extend(_fmt(v) for v in ckpt.calibration.values)
    lines.append("end")
    return "\n".join(lines) + "\n"


def save(path, ckpt):
    with open(path, "w") as fh:
        fh.write(dumps(ckpt))


def loads(text):
    lines = text.splitlines()
    pos = 0

    def take(key):
        nonlocal pos
        if pos >= len(lines):
            raise CheckpointError(f"unexpected end of checkpoint, expected {key!r}")
        parts = lines[pos].split(" ", 1)
        if parts[0] != key:
            raise CheckpointError(f"line {pos + 1}: expected {key!r}, got {parts[0]!r}")
        pos += 1
        return parts[1] if len(parts) > 1 else ""

    version = take(MAGIC)
    if version.strip() != str(VERSION):
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    widths = tuple(int(w) for w in take("widths").split(","))
    spec = NetworkSpec(widths, take("nonlinearity").strip(),
                       take("scale_features").strip() == "1", take("output_bias").strip() == "1")
    keep_probs = tuple(float(v) for v in take("keep_probs").split(","))
    tau = float(take("tau"))
    task = take("task").strip()
    arrays = []
    for name, shape in zip(_array_names(spec), param_shapes(spec)):
        header = take("array").split()
        rows, cols = int(header[1]), int(header[2])
        if header[0] != name:
            raise CheckpointError(f"line {pos}: expected array {name}, got {header[0]}")
        block = lines[pos:pos + rows]
        pos += rows
        try:
            a = np.array([[float(v) for v in row.split()] for row in block])
        except ValueError as exc:
            raise CheckpointError(f"bad number in array {name}") from exc
        if a.shape != (rows, cols) or a.size != int(np.prod(shape)):
            raise CheckpointError(f"array {name} has shape {a.shape}, expected {shape}")
        arrays.append(a.reshape(shape))
    calibration = None
    if pos < len(lines) and lines[pos].startswith("calibration"):
        count = int(take("calibration"))
        calibration = CalibrationTable(np.array([float(v) for v in lines[pos:pos + count]]))
        pos += count
    take("end")
    return Checkpoint(spec, ParamSet.from_arrays(spec, arrays), keep_probs, tau, task, calibration)


def load(path):
    with open(path) as fh:
        return loads(fh.read())
