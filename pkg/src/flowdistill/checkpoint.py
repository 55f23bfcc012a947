"""Checkpoints and artifact files.

Checkpoint layout (a NumPy ``.npz`` archive, no pickled objects):

``__meta__``
    uint8 array holding UTF-8 JSON: ``{"format": 1, "spec": {...}, "extra": {...}}``.
    ``spec`` is the builder spec (architecture, dim, depth, hidden, n_hidden).
``param/step{i}.{name}``
    float64 trainable parameter arrays.
``buffer/step{i}.{name}``
    float64 fixed state (ActNorm init flag, PLU permutation and signs,
    coupling masks, MAF output permutations).

Arrays are stored as raw float64, so a save/load round-trip is bit-exact.
"""

import csv
import json
import os
import tempfile
import zipfile

import numpy as np

from .errors import CheckpointError, ConfigError
from .flow_model import build_model

FORMAT_VERSION = 1


def atomic_write(path, write):
    """Call ``write(fh)`` on a temp file next to ``path``, then rename over it."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write(path, lambda fh: fh.write(text.encode("utf-8")))


def save_checkpoint(model, path, extra=None):
    if not model.spec:
        raise CheckpointError("only models built from a spec can be checkpointed")
    meta = {"format": FORMAT_VERSION, "spec": model.spec, "extra": extra or {}}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for i, step in enumerate(model.steps):
        for name, p in step.parameters().items():
            arrays[f"param/step{i}.{name}"] = p.data
        for name, b in step.buffers().items():
            arrays[f"buffer/step{i}.{name}"] = np.asarray(b, dtype=np.float64)
    atomic_write(path, lambda fh: np.savez(fh, **arrays))


def load_checkpoint(path, with_meta=False):
    """Rebuild a :class:`FlowModel` from ``path``."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist") from None
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"checkpoint {path} is unreadable: {exc}") from None
    try:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    except (KeyError, ValueError, UnicodeDecodeError):
        raise CheckpointError(f"checkpoint {path} has no valid metadata") from None
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r}")
    try:
        model = build_model(meta["spec"])
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint spec is invalid: {exc}") from None

    expected = set()
    for i, step in enumerate(model.steps):
        buffers = {}
        for name in step.buffers():
            key = f"buffer/step{i}.{name}"
            expected.add(key)
            if key not in arrays:
                raise CheckpointError(f"checkpoint is missing {key}")
            buffers[name] = arrays[key]
        try:
            step.load_buffers(buffers)
        except ConfigError as exc:
            raise CheckpointError(str(exc)) from None
        for name, p in step.parameters().items():
            key = f"param/step{i}.{name}"
            expected.add(key)
            if key not in arrays:
                raise CheckpointError(f"checkpoint is missing {key}")
            if arrays[key].shape != p.data.shape:
                raise CheckpointError(f"{key} has shape {arrays[key].shape}, expected {p.data.shape}")
            p.data = np.array(arrays[key], dtype=np.float64)
    unknown = set(arrays) - expected
    if unknown:
        raise CheckpointError(f"checkpoint has unexpected entries {sorted(unknown)[:3]}")
    model._tap_frames = model._coordinate_frames()
    return (model, meta) if with_meta else model


def write_csv(path, rows, header=None):
    """Write a 2-D array of floats with full round-trip precision."""
    def write(fh):
        text = []
        if header:
            text.append(",".join(header))
        text.extend(",".join(repr(float(v)) for v in row) for row in np.atleast_2d(rows))
        fh.write(("\n".join(text) + "\n").encode("utf-8"))

    atomic_write(path, write)


def read_points(path):
    """All numeric rows of a CSV file (header row allowed)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def write_report(directory, report, extra=None):
    """Line-delimited epoch log plus a JSON summary."""
    payload = report.to_dict()
    lines = [json.dumps({"epoch": i, "train_loss": loss}) for i, loss in enumerate(report.epoch_losses)]
    atomic_write_text(os.path.join(directory, "train_log.jsonl"), "\n".join(lines) + ("\n" if lines else ""))
    summary = {k: v for k, v in payload.items() if k != "epoch_losses"}
    summary.update(extra or {})
    atomic_write_text(os.path.join(directory, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
