"""File formats: binary PGM masks, binary PPM images, FLD1 raw tensors, metrics CSV.

FLD1 layout (one record; files may hold several back to back)::

    b"FLD1\\n"
    b"<channels> <rows> <cols> <spacing>\\n"
    channels*rows*cols float32, little-endian, channel-major then row-major
"""
import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from ielseg.field import Field, LabelMask

MAGIC = b"FLD1\n"
CSV_HEADER = ["epoch", "split", "variant", "dice", "miou", "noise_rate", "loss"]


class ParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# ------------------------------------------------------------------ FLD1

def encode_field(U: Field) -> bytes:
    header = f"{U.channels} {U.rows} {U.cols} {U.spacing!r}\n".encode("ascii")
    return MAGIC + header + U.values.astype("<f4").tobytes()


def decode_fields(buf: bytes):
    """All FLD1 records in ``buf``."""
    out, pos = [], 0
    while pos < len(buf):
        field, pos = _decode_one(buf, pos)
        out.append(field)
    return out


def _decode_one(buf, pos):
    if buf[pos:pos + len(MAGIC)] != MAGIC:
        raise ParseError("bad magic, expected b'FLD1\\n'", pos)
    pos += len(MAGIC)
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ParseError("unterminated header line", pos)
    try:
        parts = buf[pos:end].decode("ascii").split()
        if len(parts) != 4:
            raise ValueError
        c, r, w = (int(p) for p in parts[:3])
        spacing = float(parts[3])
        if min(c, r, w) < 1 or not spacing > 0:
            raise ValueError
    except (ValueError, UnicodeDecodeError):
        raise ParseError("malformed header, expected 'channels rows cols spacing'", pos) from None
    pos = end + 1
    nbytes = 4 * c * r * w
    if pos + nbytes > len(buf):
        raise ParseError(f"truncated payload: need {nbytes} bytes", pos)
    values = np.frombuffer(buf, dtype="<f4", count=c * r * w, offset=pos).reshape(c, r, w)
    return Field(values.astype(np.float32), spacing), pos + nbytes


def write_fld(path, fields):
    if isinstance(fields, Field):
        fields = [fields]
    Path(path).write_bytes(b"".join(encode_field(f) for f in fields))


def read_fld(path):
    """Read a single-record FLD1 file."""
    fields = decode_fields(Path(path).read_bytes())
    if len(fields) != 1:
        raise ParseError(f"expected one record, found {len(fields)}", 0)
    return fields[0]


def read_fld_records(path):
    return decode_fields(Path(path).read_bytes())


# ------------------------------------------------------------------ Netpbm

def _read_pnm(data: bytes, magic: bytes):
    if data[:2] != magic:
        raise ParseError(f"bad magic, expected {magic!r}", 0)
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise ParseError("unterminated comment", len(data))
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated header", pos)
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise ParseError("non-integer header token", start) from None
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = tokens
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise ParseError("unsupported dimensions or maxval", pos)
    return width, height, maxval, pos


def encode_pgm(mask: LabelMask) -> bytes:
    if mask.classes > 256:
        raise ValueError("PGM masks hold at most 256 classes")
    return f"P5\n{mask.cols} {mask.rows}\n255\n".encode("ascii") + mask.ids.astype(np.uint8).tobytes()


def decode_pgm(data: bytes, classes=None) -> LabelMask:
    w, h, _, pos = _read_pnm(data, b"P5")
    if len(data) < pos + w * h:
        raise ParseError("truncated raster", len(data))
    ids = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).astype(np.int64)
    if classes is None:
        classes = max(2, int(ids.max()) + 1)
    return LabelMask(ids, classes)


def encode_ppm(image: Field) -> bytes:
    if image.channels != 3:
        raise ValueError("PPM images need exactly 3 channels")
    rgb = np.clip(np.rint(image.values * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{image.cols} {image.rows}\n255\n".encode("ascii") + rgb.tobytes()


def decode_ppm(data: bytes) -> Field:
    w, h, maxval, pos = _read_pnm(data, b"P6")
    if len(data) < pos + 3 * w * h:
        raise ParseError("truncated raster", len(data))
    rgb = np.frombuffer(data, dtype=np.uint8, count=3 * w * h, offset=pos).reshape(h, w, 3)
    return Field(rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(maxval))


def write_pgm(path, mask):
    Path(path).write_bytes(encode_pgm(mask))


def read_pgm(path, classes=None):
    return decode_pgm(Path(path).read_bytes(), classes)


def write_ppm(path, image):
    Path(path).write_bytes(encode_ppm(image))


def read_ppm(path):
    return decode_ppm(Path(path).read_bytes())


# ------------------------------------------------------------------ CSV

def format_metrics_csv(rows) -> str:
    """``rows`` are dicts keyed by :data:`CSV_HEADER`; floats get 6 decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            row["epoch"], row["split"], row["variant"],
            *(f"{float(row[k]):.6f}" for k in ("dice", "miou", "noise_rate", "loss")),
        ])
    return buf.getvalue()


def write_metrics_csv(path, rows):
    Path(path).write_text(format_metrics_csv(rows))


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ParseError(f"unexpected CSV header {reader.fieldnames}", 0)
        rows = []
        for row in reader:
            row["epoch"] = int(row["epoch"])
            for k in ("dice", "miou", "noise_rate", "loss"):
                row[k] = float(row[k])
            rows.append(row)
        return rows


# ------------------------------------------------------------------ datasets on disk

def save_dataset(ds, directory):
    """``images/NNNN.ppm``, ``masks/NNNN.pgm``, optional ``noisy/NNNN.pgm`` and ``meta.json``."""
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(exist_ok=True)
    if ds.noisy_masks is not None:
        (d / "noisy").mkdir(exist_ok=True)
    for i, (img, m) in enumerate(zip(ds.images, ds.clean_masks)):
        write_ppm(d / "images" / f"{i:04d}.ppm", img)
        write_pgm(d / "masks" / f"{i:04d}.pgm", m)
        if ds.noisy_masks is not None:
            write_pgm(d / "noisy" / f"{i:04d}.pgm", ds.noisy_masks[i])
    meta = {"split": ds.split, "classes": ds.classes, "count": len(ds)}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(directory):
    from ielseg.data import Dataset

    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    n, classes = meta["count"], meta["classes"]
    images = [read_ppm(d / "images" / f"{i:04d}.ppm") for i in range(n)]
    masks = [read_pgm(d / "masks" / f"{i:04d}.pgm", classes) for i in range(n)]
    noisy = None
    if os.path.isdir(d / "noisy"):
        noisy = [read_pgm(d / "noisy" / f"{i:04d}.pgm", classes) for i in range(n)]
    return Dataset(images, masks, noisy, meta["split"], classes)


# ------------------------------------------------------------------ checkpoints

def params_to_fields(params):
    """One FLD1 record per parameter, in ``param_names`` order.

    Kernel ``(out, in, 3, 3)`` -> record ``out*in x 3 x 3``; bias ``(out,)`` -> ``1 x 1 x out``.
    """
    out = []
    for name, arr in params.items():
        if arr.ndim == 4:
            v = arr.reshape(arr.shape[0] * arr.shape[1], 3, 3)
        else:
            v = arr.reshape(1, 1, -1)
        out.append(Field(v.astype(np.float32)))
    return out


def fields_to_params(fields):
    from ielseg.model import ModelParams, layer_table, param_names

    if len(fields) != len(param_names()):
        raise ValueError(f"checkpoint holds {len(fields)} records, expected {len(param_names())}")
    classes = fields[-1].cols
    in_channels = fields[0].channels // 8
    arrays = {}
    for (name, cin, cout), kf, bf in zip(layer_table(in_channels, classes), fields[0::2], fields[1::2]):
        if kf.shape != (cout * cin, 3, 3) or bf.shape != (1, 1, cout):
            raise ValueError(f"record shapes for layer {name} do not match the architecture")
        arrays[f"{name}.w"] = np.array(kf.values).reshape(cout, cin, 3, 3)
        arrays[f"{name}.b"] = np.array(bf.values).reshape(cout)
    return ModelParams(arrays, in_channels, classes)


def save_params(path, params):
    write_fld(path, params_to_fields(params))


def load_params(path):
    return fields_to_params(read_fld_records(path))
