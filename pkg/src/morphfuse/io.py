"""File formats: OBJ / ASCII PLY meshes, float64 array files, PGM masks, JSON.

Array files (``.mfa``) are little-endian::

    8 bytes   magic  b"MFARRAY1"
    uint32    ndim
    uint64    dims[ndim]
    float64   data, column-major (Fortran) order
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError

ARRAY_MAGIC = b"MFARRAY1"


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def _format_for(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".")
    fmt = fmt.lower()
    if fmt not in ("obj", "ply"):
        raise ValueError(f"unsupported mesh format {fmt!r} (expected obj or ply)")
    return fmt


def load_mesh(path, format=None) -> Mesh:
    fmt = _format_for(path, format)
    if fmt == "obj":
        return _load_obj(path)
    return _load_ply(path)


def save_mesh(mesh: Mesh, path, format=None) -> None:
    fmt = _format_for(path, format)
    text = _obj_text(mesh) if fmt == "obj" else _ply_text(mesh)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def _num(x) -> str:
    # repr gives the shortest string that round-trips exactly.
    return repr(float(x))


def _obj_text(mesh):
    lines = []
    has_color = mesh.colors is not None
    for i, v in enumerate(mesh.vertices):
        rec = "v " + " ".join(_num(x) for x in v)
        if has_color:
            rec += " " + " ".join(_num(x) for x in mesh.colors[i])
        lines.append(rec)
    if mesh.normals is not None:
        for n in mesh.normals:
            lines.append("vn " + " ".join(_num(x) for x in n))
    with_n = mesh.normals is not None
    for f in mesh.faces:
        if with_n:
            lines.append("f " + " ".join(f"{i + 1}//{i + 1}" for i in f))
        else:
            lines.append("f " + " ".join(str(i + 1) for i in f))
    return "\n".join(lines) + "\n"


def _load_obj(path):
    verts, colors, normals, faces = [], [], [], []
    face_lines = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    if len(parts) not in (4, 7):
                        raise FormatError(path, "vertex record needs 3 (or 6 with color) numbers", lineno)
                    nums = [float(x) for x in parts[1:]]
                    verts.append(nums[:3])
                    if len(nums) == 6:
                        colors.append(nums[3:])
                elif tag == "vn":
                    if len(parts) != 4:
                        raise FormatError(path, "normal record needs 3 numbers", lineno)
                    normals.append([float(x) for x in parts[1:]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise FormatError(path, "only triangular faces are supported", lineno)
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        if i < 0:
                            i = len(verts) + 1 + i
                        idx.append(i - 1)
                    faces.append(idx)
                    face_lines.append(lineno)
                elif tag in ("vt", "o", "g", "s", "usemtl", "mtllib", "l"):
                    continue
                else:
                    raise FormatError(path, f"unknown record {tag!r}", lineno)
            except ValueError as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(path, f"cannot parse {line!r}: {exc}", lineno) from None
    nv = len(verts)
    for k, (tri, lineno) in enumerate(zip(faces, face_lines)):
        if any(i < 0 or i >= nv for i in tri):
            raise FormatError(
                path, f"face {k + 1} references vertex outside 1..{nv}: {[i + 1 for i in tri]}", lineno
            )
    if colors and len(colors) != nv:
        raise FormatError(path, "either all or no vertices must carry colors")
    if normals and len(normals) != nv:
        raise FormatError(path, "normal count must match vertex count")
    try:
        return Mesh(
            np.array(verts, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3),
            np.array(colors) if colors else None,
            np.array(normals) if normals else None,
        )
    except MeshError as exc:
        raise FormatError(path, str(exc)) from None


def _ply_text(mesh):
    has_color = mesh.colors is not None
    has_n = mesh.normals is not None
    head = ["ply", "format ascii 1.0", f"element vertex {mesh.n_vertices}",
            "property double x", "property double y", "property double z"]
    if has_n:
        head += ["property double nx", "property double ny", "property double nz"]
    if has_color:
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    head += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    lines = list(head)
    rgb = None
    if has_color:
        rgb = np.rint(mesh.colors * 255).astype(int)
    for i, v in enumerate(mesh.vertices):
        rec = [_num(x) for x in v]
        if has_n:
            rec += [_num(x) for x in mesh.normals[i]]
        if has_color:
            rec += [str(x) for x in rgb[i]]
        lines.append(" ".join(rec))
    for f in mesh.faces:
        lines.append("3 " + " ".join(str(int(i)) for i in f))
    return "\n".join(lines) + "\n"


def _load_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise FormatError(path, "binary PLY is not supported (ASCII 1.0 only)") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(path, "missing 'ply' magic", 1)
    elements = []  # (name, count, [props])
    lineno = 1
    header_end = None
    for lineno in range(2, len(lines) + 1):
        parts = lines[lineno - 1].split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise FormatError(path, "binary PLY is not supported (ASCII 1.0 only)", lineno)
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(path, "property before element", lineno)
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[-1]))
            else:
                elements[-1][2].append((parts[1], parts[-1]))
        elif parts[0] == "end_header":
            header_end = lineno
            break
        else:
            raise FormatError(path, f"unexpected header line {lines[lineno - 1]!r}", lineno)
    if header_end is None:
        raise FormatError(path, "missing end_header")

    cur = header_end
    verts = colors = normals = None
    faces = np.zeros((0, 3), dtype=np.int64)
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            cur += 1
            while cur <= len(lines) and not lines[cur - 1].strip():
                cur += 1
            if cur > len(lines):
                raise FormatError(path, f"unexpected end of file in element {name!r}", cur)
            rows.append((cur, lines[cur - 1].split()))
        if name == "vertex":
            names = [p[1] for p in props]
            try:
                arr = np.array([[float(x) for x in r[: len(names)]] for _, r in rows]).reshape(-1, len(names))
            except ValueError as exc:
                raise FormatError(path, f"bad vertex record: {exc}") from None
            for ln, r in rows:
                if len(r) != len(names):
                    raise FormatError(path, f"vertex record has {len(r)} values, expected {len(names)}", ln)
            col = {n: k for k, n in enumerate(names)}
            verts = arr[:, [col["x"], col["y"], col["z"]]]
            if all(k in col for k in ("red", "green", "blue")):
                colors = arr[:, [col["red"], col["green"], col["blue"]]] / 255.0
            if all(k in col for k in ("nx", "ny", "nz")):
                normals = arr[:, [col["nx"], col["ny"], col["nz"]]]
        elif name == "face":
            out = []
            nv = 0 if verts is None else len(verts)
            for k, (ln, r) in enumerate(rows):
                try:
                    n = int(r[0])
                    idx = [int(x) for x in r[1:1 + n]]
                except (ValueError, IndexError):
                    raise FormatError(path, "bad face record", ln) from None
                if n != 3:
                    raise FormatError(path, "only triangular faces are supported", ln)
                if any(i < 0 or i >= nv for i in idx):
                    raise FormatError(path, f"face {k + 1} references vertex outside 0..{nv - 1}: {idx}", ln)
                out.append(idx)
            faces = np.array(out, dtype=np.int64).reshape(-1, 3)
    if verts is None:
        raise FormatError(path, "no vertex element")
    try:
        return Mesh(verts, faces, colors, normals)
    except MeshError as exc:
        raise FormatError(path, str(exc)) from None


def save_array(path, array) -> None:
    a = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(np.asfortranarray(a).astype("<f8").tobytes(order="F"))


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != ARRAY_MAGIC:
        raise FormatError(path, "not an MFARRAY1 file")
    (ndim,) = struct.unpack_from("<I", data, 8)
    dims = struct.unpack_from(f"<{ndim}Q", data, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(data) - offset != 8 * count:
        raise FormatError(path, f"payload size does not match dims {dims}")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    return np.array(flat.reshape(dims, order="F"), dtype=np.float64)


def load_pgm(path) -> np.ndarray:
    """Read a plain (P2) PGM as an integer array of shape (H, W)."""
    tokens = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise FormatError(path, "only plain PGM (P2) is supported")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        pix = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    except (ValueError, IndexError):
        raise FormatError(path, "malformed PGM header or pixel data") from None
    if pix.size != w * h:
        raise FormatError(path, f"expected {w * h} pixels, found {pix.size}")
    if np.any(pix < 0) or np.any(pix > maxval):
        raise FormatError(path, "pixel value outside [0, maxval]")
    return pix.reshape(h, w)


def save_pgm(path, image, maxval=255) -> None:
    img = np.asarray(image, dtype=np.int64)
    h, w = img.shape
    rows = [" ".join(str(int(x)) for x in row) for row in img]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P2\n{w} {h}\n{maxval}\n" + "\n".join(rows) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
