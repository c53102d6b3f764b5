"""NIfTI-1 volumes, affine text files, cohort manifests, and feature CSVs.

Only the single-file NIfTI-1 form ("n+1") is supported; the two-file form
and NIfTI-2 are rejected. Files suffixed ``.gz`` are gzip containers.
Scalars and deformation fields are written float32, label maps uint8, with
``vox_offset=352``, ``scl_slope=1``, ``scl_inter=0``. Byte order on read is
inferred from ``sizeof_hdr`` and swapped transparently.
"""

from __future__ import annotations

import csv
import gzip
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .grid import (
    AffineTransform,
    DeformationField,
    GridShape,
    LabelMap,
    ScalarVolume,
)


class NiftiError(ParseError):
    """A NIfTI file could not be read or written."""


class NiftiBadMagicError(NiftiError):
    """Not a single-file NIfTI-1 document."""


class NiftiUnsupportedDatatypeError(NiftiError):
    """The on-disk datatype code is outside the supported set."""


class NiftiDimensionError(NiftiError):
    """dim[0]/dim[5] describe a layout this reader does not handle."""


class NiftiTruncatedError(NiftiError):
    """The header or data section ends early."""


class AffineParseError(ParseError):
    """An affine text file is malformed."""


class ManifestError(ParseError):
    """A cohort manifest is malformed."""


class FeatureCsvError(ParseError):
    """A feature CSV does not follow the fixed schema."""


HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"
_VECTOR_INTENT = 1007

# datatype code -> numpy dtype (endianless)
_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64}


def _open_read(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n: int, what: str) -> bytes:
    try:
        buf = fh.read(n)
    except (EOFError, zlib.error, gzip.BadGzipFile) as exc:
        raise NiftiTruncatedError(f"{what}: corrupt or truncated gzip stream ({exc})") from exc
    if len(buf) < n:
        raise NiftiTruncatedError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_nifti(path) -> ScalarVolume | LabelMap | DeformationField:
    """Read a single-file NIfTI-1 volume.

    dim[0]==3 yields a ScalarVolume (or a LabelMap when the datatype is
    uint8); dim[0]==5 with dim[5]==3 yields a DeformationField. Intensity
    scaling ``slope*raw + inter`` is applied to scalar and vector data;
    label maps require the trivial scaling (slope in {0, 1}, inter 0).
    """
    path = Path(path)
    with _open_read(path) as fh:
        hdr = _read_exact(fh, HEADER_SIZE, f"{path}: header")
        magic = hdr[344:348]
        if magic == _MAGIC_PAIR:
            raise NiftiBadMagicError(f"{path}: two-file NIfTI-1 ('ni1') is not supported")
        if magic != _MAGIC_SINGLE:
            raise NiftiBadMagicError(f"{path}: bad magic {magic!r}, expected 'n+1\\0'")

        (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
        if sizeof_hdr == HEADER_SIZE:
            bo = "<"
        elif struct.unpack_from(">i", hdr, 0)[0] == HEADER_SIZE:
            bo = ">"
        else:
            raise NiftiBadMagicError(f"{path}: sizeof_hdr is not 348 in either byte order")

        dim = struct.unpack_from(bo + "8h", hdr, 40)
        (datatype, bitpix) = struct.unpack_from(bo + "2h", hdr, 70)
        pixdim = struct.unpack_from(bo + "8f", hdr, 76)
        (vox_offset, scl_slope, scl_inter) = struct.unpack_from(bo + "3f", hdr, 108)

        if datatype not in _DTYPES:
            raise NiftiUnsupportedDatatypeError(f"{path}: unsupported datatype code {datatype}")
        if bitpix != _BITPIX[datatype]:
            raise NiftiError(f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")

        if dim[0] == 3:
            n_comp = 1
        elif dim[0] == 5:
            if dim[4] != 1:
                raise NiftiDimensionError(f"{path}: dim[4]={dim[4]} time points unsupported")
            if dim[5] not in (1, 3):
                raise NiftiDimensionError(f"{path}: dim[5]={dim[5]} not in {{1, 3}}")
            n_comp = dim[5]
        else:
            raise NiftiDimensionError(f"{path}: dim[0]={dim[0]} unsupported (need 3 or 5)")

        try:
            shape = GridShape(dim[1], dim[2], dim[3], pixdim[1], pixdim[2], pixdim[3])
        except ValidationError as exc:
            raise NiftiError(f"{path}: invalid grid geometry ({exc})") from exc

        if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
            raise NiftiError(f"{path}: vox_offset {vox_offset} is not usable")
        offset = int(round(vox_offset))
        _read_exact(fh, offset - HEADER_SIZE, f"{path}: pre-data gap")
        itemsize = _BITPIX[datatype] // 8
        n_items = shape.n_voxels * n_comp
        raw = _read_exact(fh, n_items * itemsize, f"{path}: data section")

    arr = np.frombuffer(raw, dtype=np.dtype(bo + _DTYPES[datatype]), count=n_items)
    if bo == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))

    if datatype == 2 and n_comp == 1:
        if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
            raise NiftiError(
                f"{path}: label volume carries non-trivial scaling "
                f"(slope={scl_slope}, inter={scl_inter})"
            )
        try:
            return LabelMap(shape, arr)
        except ValidationError as exc:
            raise NiftiError(f"{path}: {exc}") from exc

    values = arr.astype(np.float64)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        values = values * np.float64(scl_slope) + np.float64(scl_inter)
    if n_comp == 3:
        # component axis is slowest on disk
        return DeformationField(shape, values.reshape(3, -1).T)
    return ScalarVolume(shape, values)


def read_scalar_volume(path) -> ScalarVolume:
    vol = read_nifti(path)
    if not isinstance(vol, ScalarVolume):
        raise NiftiError(f"{path}: expected a scalar volume, found {type(vol).__name__}")
    return vol


def read_label_map(path) -> LabelMap:
    vol = read_nifti(path)
    if not isinstance(vol, LabelMap):
        raise NiftiError(f"{path}: expected a uint8 label map, found {type(vol).__name__}")
    return vol


def read_deformation_field(path) -> DeformationField:
    vol = read_nifti(path)
    if not isinstance(vol, DeformationField):
        raise NiftiError(f"{path}: expected a deformation field, found {type(vol).__name__}")
    return vol


def _build_header(shape: GridShape, datatype: int, dim0: int, dim5: int, intent: int) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, dim0, shape.nx, shape.ny, shape.nz, 1, dim5, 1, 1)
    struct.pack_into("<h", hdr, 68, intent)
    struct.pack_into("<2h", hdr, 70, datatype, _BITPIX[datatype])
    struct.pack_into("<8f", hdr, 76, 1.0, shape.sx, shape.sy, shape.sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, 352.0, 1.0, 0.0)  # vox_offset, scl_slope, scl_inter
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = _MAGIC_SINGLE
    return bytes(hdr)


def write_nifti(volume: ScalarVolume | LabelMap | DeformationField, path) -> None:
    """Write a single-file NIfTI-1 volume (gzipped when the path ends .gz)."""
    if isinstance(volume, LabelMap):
        hdr = _build_header(volume.shape, 2, 3, 1, 0)
        payload = volume.labels.astype("<u1").tobytes()
    elif isinstance(volume, ScalarVolume):
        hdr = _build_header(volume.shape, 16, 3, 1, 0)
        payload = volume.data.astype("<f4").tobytes()
    elif isinstance(volume, DeformationField):
        hdr = _build_header(volume.shape, 16, 5, 3, _VECTOR_INTENT)
        payload = volume.vectors.T.astype("<f4").tobytes(order="C")
    else:
        raise ValidationError(f"cannot write object of type {type(volume).__name__} as NIfTI")

    blob = hdr + b"\x00" * 4 + payload  # 4 zero bytes: no extensions
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        # fixed mtime and no stored name keep repeated runs byte-identical
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                gz.write(blob)
    else:
        path.write_bytes(blob)


def read_affine(path) -> AffineTransform:
    """Parse a 4x4 whitespace-separated affine text file (mm to mm)."""
    path = Path(path)
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(line.split())
    if len(rows) != 4 or any(len(r) != 4 for r in rows):
        raise AffineParseError(f"{path}: expected 4 rows of 4 numbers")
    try:
        m = np.array([[float(tok) for tok in row] for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise AffineParseError(f"{path}: non-numeric token ({exc})") from exc
    if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
        raise AffineParseError(f"{path}: bottom row must be (0,0,0,1), got {m[3]}")
    m[3] = (0.0, 0.0, 0.0, 1.0)
    try:
        return AffineTransform(m)
    except ValidationError as exc:
        raise AffineParseError(f"{path}: {exc}") from exc


def write_affine(transform: AffineTransform, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [" ".join(repr(float(v)) for v in row) for row in transform.m]
    path.write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SubjectRecord:
    """Paths to one subject's inputs; validated segmentation is optional."""

    id: str
    mri_path: Path
    computed_seg_path: Path
    validated_seg_path: Path | None
    affine_fwd_path: Path
    affine_inv_path: Path
    deformation_path: Path
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CohortManifest:
    subjects: tuple[SubjectRecord, ...]
    meta: dict = field(default_factory=dict)


_SUBJECT_KEYS = ("id", "mri", "computed_seg", "affine_fwd", "affine_inv", "deformation")


def read_manifest(path) -> CohortManifest:
    """Read a cohort manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("subjects"), list):
        raise ManifestError(f"{path}: expected an object with a 'subjects' list")

    base = path.parent
    subjects = []
    seen = set()
    for entry in doc["subjects"]:
        if not isinstance(entry, dict):
            raise ManifestError(f"{path}: subject entries must be objects")
        missing = [k for k in _SUBJECT_KEYS if k not in entry]
        if missing:
            raise ManifestError(f"{path}: subject entry missing keys {missing}")
        sid = entry["id"]
        if not isinstance(sid, str) or not sid:
            raise ManifestError(f"{path}: subject id must be a nonempty string")
        if sid in seen:
            raise ManifestError(f"{path}: duplicate subject id {sid!r}")
        seen.add(sid)

        def resolve(key: str) -> Path:
            val = entry[key]
            if not isinstance(val, str) or not val:
                raise ManifestError(f"{path}: subject {sid!r} key {key!r} must be a path")
            return (base / val).resolve() if not os.path.isabs(val) else Path(val)

        validated = entry.get("validated_seg")
        if validated is not None and not isinstance(validated, str):
            raise ManifestError(f"{path}: subject {sid!r} validated_seg must be a path or null")
        subjects.append(
            SubjectRecord(
                id=sid,
                mri_path=resolve("mri"),
                computed_seg_path=resolve("computed_seg"),
                validated_seg_path=(
                    ((base / validated).resolve() if not os.path.isabs(validated) else Path(validated))
                    if validated
                    else None
                ),
                affine_fwd_path=resolve("affine_fwd"),
                affine_inv_path=resolve("affine_inv"),
                deformation_path=resolve("deformation"),
                meta=dict(entry.get("meta", {})),
            )
        )
    return CohortManifest(subjects=tuple(subjects), meta=dict(doc.get("meta", {})))


def _relativize(target: Path, base: Path) -> str:
    try:
        return target.resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(target)


def write_manifest(manifest: CohortManifest, path) -> None:
    """Write a manifest; paths under its directory are stored relative."""
    path = Path(path)
    base = path.parent
    base.mkdir(parents=True, exist_ok=True)
    subjects = []
    for s in manifest.subjects:
        entry = {
            "id": s.id,
            "mri": _relativize(s.mri_path, base),
            "computed_seg": _relativize(s.computed_seg_path, base),
            "validated_seg": _relativize(s.validated_seg_path, base) if s.validated_seg_path else None,
            "affine_fwd": _relativize(s.affine_fwd_path, base),
            "affine_inv": _relativize(s.affine_inv_path, base),
            "deformation": _relativize(s.deformation_path, base),
        }
        if s.meta:
            entry["meta"] = s.meta
        subjects.append(entry)
    doc: dict = {"subjects": subjects}
    if manifest.meta:
        doc["meta"] = manifest.meta
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_feature_csv(rows: Sequence[tuple], path) -> None:
    """Write subject rows as CSV in the frozen column order.

    ``rows`` holds (subject_id, FeatureVector, DiceScores | None) tuples;
    absent Dice scores leave their cells empty. Values are serialized with
    repr, which round-trips float64 exactly.
    """
    from .feature_pipeline import DICE_COLUMNS, FEATURE_NAMES

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("subject",) + FEATURE_NAMES + DICE_COLUMNS)
        for subject_id, features, dice in rows:
            cells = [subject_id] + [repr(float(v)) for v in features.values]
            if dice is None:
                cells += [""] * len(DICE_COLUMNS)
            else:
                cells += [repr(float(v)) for v in dice.as_array()]
            writer.writerow(cells)


def read_feature_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read a feature CSV back into (ids, features (n,20), dice (n,5)).

    Missing Dice cells come back as NaN. The header must match the frozen
    schema; the five Dice columns may be absent as a block.
    """
    from .feature_pipeline import DICE_COLUMNS, FEATURE_NAMES

    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FeatureCsvError(f"{path}: empty file") from None
        expected = ["subject", *FEATURE_NAMES]
        if header[: len(expected)] != expected:
            raise FeatureCsvError(f"{path}: header does not match the fixed feature schema")
        extra = header[len(expected) :]
        if extra and extra != list(DICE_COLUMNS):
            raise FeatureCsvError(f"{path}: unexpected trailing columns {extra}")
        has_dice = bool(extra)

        ids: list[str] = []
        feats: list[list[float]] = []
        dices: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FeatureCsvError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            ids.append(row[0])
            try:
                feats.append([float(c) for c in row[1 : 1 + len(FEATURE_NAMES)]])
                if has_dice:
                    dices.append(
                        [float(c) if c != "" else float("nan") for c in row[1 + len(FEATURE_NAMES) :]]
                    )
                else:
                    dices.append([float("nan")] * len(DICE_COLUMNS))
            except ValueError as exc:
                raise FeatureCsvError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc

    n = len(ids)
    features = np.array(feats, dtype=np.float64).reshape(n, len(FEATURE_NAMES))
    dice = np.array(dices, dtype=np.float64).reshape(n, len(DICE_COLUMNS))
    return ids, features, dice
