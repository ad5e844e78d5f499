"""Readers and writers: point clouds (XYZ[C], PLY), GeoJSON footprints, OBJ/PLY meshes."""

from __future__ import annotations

import json
import os
import struct
from collections import defaultdict

import numpy as np

from .errors import ParseError, UnsupportedFormat
from .geom import Plane3, PointCloud, Polygon2, ring_signed_area
from .mesh import BuildingMesh, Facet, facet_frame

POINT_SUFFIXES = {".xyz", ".xyzc", ".txt", ".asc", ".pts"}
ROLE_CODES = {"roof": 0, "wall": 1, "ground": 2}
ROLE_NAMES = {v: k for k, v in ROLE_CODES.items()}
CLASS_PROPS = ("classification", "class", "scalar_classification", "label")

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# -- point clouds ------------------------------------------------------------------


def load_point_cloud(path) -> PointCloud:
    """Read ``x y z [class]`` text files or PLY (ASCII / binary) vertex data."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        with open(path, "rb") as fh:
            return read_ply_points(fh.read())
    if ext in POINT_SUFFIXES:
        with open(path, "rb") as fh:
            return read_xyz(fh.read())
    raise UnsupportedFormat(f"unknown point cloud format {ext!r}")


def read_xyz(data: bytes) -> PointCloud:
    rows, classes = [], []
    ncols = None
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), start=1):
        line = raw.strip()
        start = offset
        offset += len(raw)
        if not line or line.startswith(b"#") or line.startswith(b"//"):
            continue
        parts = line.replace(b",", b" ").split()
        if len(parts) not in (3, 4) and not (len(parts) > 4 and ncols == 4):
            raise ParseError(f"expected 3 or 4 columns, got {len(parts)}", line=lineno, byte=start)
        if ncols is None:
            ncols = min(len(parts), 4)
        elif min(len(parts), 4) != ncols:
            raise ParseError("inconsistent column count", line=lineno, byte=start)
        try:
            xyz = [float(p) for p in parts[:3]]
            c = int(float(parts[3])) if ncols == 4 else None
        except ValueError as exc:
            raise ParseError(f"not a number: {exc}", line=lineno, byte=start) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", line=lineno, byte=start)
        rows.append(xyz)
        if c is not None:
            classes.append(c)
    xyz = np.array(rows, dtype=float).reshape(-1, 3)
    return PointCloud(xyz, np.array(classes, dtype=np.int64) if ncols == 4 else None)


def _ply_header(data: bytes):
    if not data.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", line=1, byte=0)
    end = data.find(b"end_header")
    if end < 0:
        raise ParseError("missing end_header", byte=len(data))
    nl = data.find(b"\n", end)
    body = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []
    offset = 0
    for lineno, raw in enumerate(data[:body].splitlines(keepends=True), start=1):
        words = raw.split()
        here = offset
        offset += len(raw)
        if not words or words[0] in (b"ply", b"comment", b"obj_info", b"end_header"):
            continue
        try:
            if words[0] == b"format":
                fmt = words[1].decode()
                if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
                    raise UnsupportedFormat(f"PLY format {fmt}")
            elif words[0] == b"element":
                elements.append([words[1].decode(), int(words[2]), []])
            elif words[0] == b"property":
                if not elements:
                    raise ParseError("property before element", line=lineno, byte=here)
                if words[1] == b"list":
                    elements[-1][2].append((words[4].decode(), "list", PLY_TYPES[words[2].decode()], PLY_TYPES[words[3].decode()]))
                else:
                    elements[-1][2].append((words[2].decode(), PLY_TYPES[words[1].decode()]))
            else:
                raise ParseError(f"unknown header keyword {words[0].decode(errors='replace')!r}", line=lineno, byte=here)
        except (IndexError, ValueError, KeyError) as exc:
            raise ParseError(f"malformed header line ({exc})", line=lineno, byte=here) from None
    if fmt is None:
        raise ParseError("missing format line", line=2, byte=0)
    return fmt, elements, body


def _read_ply_elements(data: bytes):
    """Yields (name, records) for each element; list properties become Python lists."""
    fmt, elements, pos = _ply_header(data)
    header_lines = data[:pos].count(b"\n")
    out = {}
    if fmt == "ascii":
        lines = data[pos:].splitlines(keepends=True)
        li = 0
        byte = pos
        for name, count, props in elements:
            recs = []
            for _ in range(count):
                while li < len(lines) and not lines[li].strip():
                    byte += len(lines[li])
                    li += 1
                if li >= len(lines):
                    raise ParseError(f"truncated {name} data", line=header_lines + li + 1, byte=byte)
                words = lines[li].split()
                k = 0
                rec = []
                try:
                    for prop in props:
                        if prop[1] == "list":
                            n = int(words[k])
                            rec.append([float(w) for w in words[k + 1 : k + 1 + n]])
                            if len(rec[-1]) != n:
                                raise IndexError("short list")
                            k += 1 + n
                        else:
                            rec.append(float(words[k]))
                            k += 1
                except (IndexError, ValueError) as exc:
                    raise ParseError(f"bad {name} record ({exc})", line=header_lines + li + 1, byte=byte) from None
                recs.append(rec)
                byte += len(lines[li])
                li += 1
            out[name] = (props, recs)
        return out
    order = "<" if fmt == "binary_little_endian" else ">"
    for name, count, props in elements:
        if all(p[1] != "list" for p in props):
            dt = np.dtype([(p[0], order + p[1]) for p in props])
            need = dt.itemsize * count
            if pos + need > len(data):
                raise ParseError(f"truncated binary {name} data", byte=len(data))
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += need
            out[name] = (props, arr)
            continue
        recs = []
        for _ in range(count):
            rec = []
            for prop in props:
                try:
                    if prop[1] == "list":
                        ct = np.dtype(order + prop[2])
                        n = int(np.frombuffer(data, ct, 1, pos)[0])
                        pos += ct.itemsize
                        it = np.dtype(order + prop[3])
                        rec.append(np.frombuffer(data, it, n, pos).tolist())
                        pos += it.itemsize * n
                    else:
                        t = np.dtype(order + prop[1])
                        rec.append(np.frombuffer(data, t, 1, pos)[0].item())
                        pos += t.itemsize
                except ValueError:
                    raise ParseError(f"truncated binary {name} data", byte=pos) from None
            recs.append(rec)
        out[name] = (props, recs)
    return out


def read_ply_points(data: bytes) -> PointCloud:
    elems = _read_ply_elements(data)
    if "vertex" not in elems:
        raise ParseError("PLY has no vertex element", line=1, byte=0)
    props, recs = elems["vertex"]
    names = [p[0] for p in props]
    for c in "xyz":
        if c not in names:
            raise ParseError(f"PLY vertex lacks property {c}", line=1, byte=0)
    cname = next((n for n in CLASS_PROPS if n in names), None)
    if isinstance(recs, np.ndarray):
        xyz = np.stack([recs[c].astype(float) for c in "xyz"], axis=1)
        cls = recs[cname].astype(np.int64) if cname else None
    else:
        ix = [names.index(c) for c in "xyz"]
        xyz = np.array([[r[i] for i in ix] for r in recs], dtype=float).reshape(-1, 3)
        cls = np.array([int(r[names.index(cname)]) for r in recs], dtype=np.int64) if cname else None
    return PointCloud(xyz, cls)


def write_ply_points(cloud: PointCloud, path, binary: bool = True):
    head = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0",
            f"element vertex {len(cloud)}", "property double x", "property double y", "property double z"]
    if cloud.classes is not None:
        head.append("property uchar classification")
    head.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode())
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if cloud.classes is not None:
                fields.append(("classification", "u1"))
            rec = np.empty(len(cloud), dtype=fields)
            for k, c in enumerate("xyz"):
                rec[c] = cloud.xyz[:, k]
            if cloud.classes is not None:
                rec["classification"] = cloud.classes
            fh.write(rec.tobytes())
        else:
            for k, p in enumerate(cloud.xyz):
                tail = f" {int(cloud.classes[k])}" if cloud.classes is not None else ""
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}{tail}\n".encode())


def write_xyz(cloud: PointCloud, path):
    with open(path, "w") as fh:
        for k, p in enumerate(cloud.xyz):
            if cloud.classes is None:
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
            else:
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {int(cloud.classes[k])}\n")


# -- footprints --------------------------------------------------------------------


def _rings_to_polygon(coords) -> Polygon2:
    rings = []
    for r in coords:
        a = np.asarray(r, dtype=float)[:, :2]
        if len(a) > 1 and np.allclose(a[0], a[-1]):
            a = a[:-1]
        rings.append(a)
    return Polygon2(rings[0], tuple(rings[1:]))


def load_footprints(path):
    """GeoJSON Polygon/MultiPolygon features -> list of (id, Polygon2)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, byte=exc.pos) from None
    if doc.get("type") == "Feature":
        feats = [doc]
    elif doc.get("type") == "FeatureCollection":
        feats = doc.get("features", [])
    else:
        raise UnsupportedFormat("expected a GeoJSON Feature or FeatureCollection")
    out = []
    for k, f in enumerate(feats):
        geom = f.get("geometry") or {}
        fid = f.get("id", (f.get("properties") or {}).get("id", k))
        fid = str(fid)
        if geom.get("type") == "Polygon":
            parts = [geom["coordinates"]]
        elif geom.get("type") == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise UnsupportedFormat(f"feature {fid}: unsupported geometry {geom.get('type')!r}")
        for j, coords in enumerate(parts):
            try:
                poly = _rings_to_polygon(coords)
            except Exception as exc:
                raise ParseError(f"feature {fid}: bad coordinates ({exc})") from None
            out.append((fid if len(parts) == 1 else f"{fid}_{j}", poly))
    return out


def write_footprints(items, path):
    feats = []
    for fid, poly in items:
        rings = []
        for r in poly.rings:
            r = [[float(x), float(y)] for x, y in r]
            rings.append(r + [r[0]])
        feats.append({"type": "Feature", "id": str(fid), "properties": {"id": str(fid)},
                      "geometry": {"type": "Polygon", "coordinates": rings}})
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh, indent=1)


# -- meshes ------------------------------------------------------------------------


def _facet_faces(mesh: BuildingMesh, f: Facet):
    """Faces written for one facet: the loop itself, or its triangles if it has holes."""
    if len(f.loops) == 1:
        return [list(f.loops[0])]
    from .mesh import triangulate_facet

    return [list(t) for t in triangulate_facet(mesh, f)]


def _plane_text(pl: Plane3):
    n = pl.normal
    return f"{float(n[0])!r} {float(n[1])!r} {float(n[2])!r} {float(pl.d)!r}"


def _obj_block(mesh: BuildingMesh, name, base, t):
    lines = [f"o {name}"]
    for p in mesh.vertices:
        q = p + t
        lines.append(f"v {float(q[0])!r} {float(q[1])!r} {float(q[2])!r}")
    for k, f in enumerate(mesh.facets):
        pl = f.plane.translated(t)
        lines.append(f"# facet {k} {f.role} holes={len(f.loops) - 1} plane={_plane_text(pl)}")
        for face in _facet_faces(mesh, f):
            lines.append("f " + " ".join(str(base + i + 1) for i in face))
    return lines


def export_obj(mesh: BuildingMesh, path, name="building", offset=None):
    """OBJ with one object; facets with holes are written as their triangles.

    ``# facet`` comments carry role, plane and hole count so the file reads back
    into the same polygon facets.
    """
    export_obj_objects([(name, mesh)], path, offset)


def export_obj_objects(items, path, offset=None):
    """Several ``(name, mesh)`` pairs as consecutive objects of one OBJ file."""
    t = np.zeros(3) if offset is None else np.asarray(offset, float)
    lines = ["# lod2kit mesh"]
    base = 0
    for name, mesh in items:
        lines += _obj_block(mesh, name, base, t)
        base += len(mesh.vertices)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _newell_plane(P, loop) -> Plane3:
    pts = P[loop]
    n = np.zeros(3)
    for k in range(len(pts)):
        a, b = pts[k], pts[(k + 1) % len(pts)]
        n += np.array([(a[1] - b[1]) * (a[2] + b[2]), (a[2] - b[2]) * (a[0] + b[0]), (a[0] - b[0]) * (a[1] + b[1])])
    n = n / np.linalg.norm(n)
    return Plane3(tuple(n), -float(n @ pts.mean(axis=0)))


def _role_from_plane(pl: Plane3):
    nz = pl.normal[2]
    if abs(nz) < 1e-6:
        return "wall"
    return "roof" if nz > 0 else "ground"


def _loops_from_faces(P, faces, plane):
    """Boundary loops (outer first) of a facet given as a set of faces."""
    if len(faces) == 1:
        return [list(faces[0])]
    count = defaultdict(int)
    directed = []
    for face in faces:
        for k in range(len(face)):
            a, b = face[k], face[(k + 1) % len(face)]
            directed.append((a, b))
            count[(min(a, b), max(a, b))] += 1
    bnd = [(a, b) for a, b in directed if count[(min(a, b), max(a, b))] == 1]
    nxt = {a: b for a, b in bnd}
    loops, seen = [], set()
    for s in sorted(nxt):
        if s in seen:
            continue
        loop = [s]
        seen.add(s)
        cur = nxt[s]
        while cur != s:
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(loop)
    u, v = facet_frame(plane)
    area = [ring_signed_area(np.stack([P[l] @ u, P[l] @ v], axis=1)) for l in loops]
    order = sorted(range(len(loops)), key=lambda i: -area[i])
    return [loops[i] for i in order]


def load_obj(path) -> BuildingMesh:
    """All faces of the file as one mesh (see ``load_obj_objects`` to split by object)."""
    objs = load_obj_objects(path)
    if len(objs) == 1:
        return objs[0][1]
    P = np.concatenate([m.vertices for _, m in objs]) if objs else np.zeros((0, 3))
    facets, base = [], 0
    for _, m in objs:
        for f in m.facets:
            facets.append(Facet([[base + i for i in l] for l in f.loops], f.role, f.plane, f.cell))
        base += len(m.vertices)
    return BuildingMesh(P, facets)


def load_obj_objects(path):
    """``[(name, BuildingMesh)]``, one per ``o`` statement, with object-local vertex ids."""
    verts = []
    objects = []  # (name, first vertex, groups)
    meta = None
    groups = []
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), start=1):
        here = offset
        offset += len(raw)
        line = raw.decode("utf-8", errors="replace").strip()
        if not line:
            continue
        if line.startswith("# facet"):
            parts = line.split()
            try:
                role = parts[3]
                plane = None
                if "plane=" in line:
                    vals = [float(x) for x in line.split("plane=", 1)[1].split()]
                    plane = Plane3(tuple(vals[:3]), vals[3])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"bad facet comment ({exc})", line=lineno, byte=here) from None
            meta = (role, plane)
            if not objects:
                objects.append(("building", 0, []))
            groups = objects[-1][2]
            groups.append([meta, []])
            continue
        if line.startswith("#"):
            continue
        tag = line.split(None, 1)[0]
        if tag == "o":
            objects.append((line[1:].strip(), len(verts), []))
            groups = objects[-1][2]
            meta = None
            continue
        if not objects:
            objects.append(("building", 0, []))
            groups = objects[-1][2]
        try:
            if tag == "v":
                verts.append([float(x) for x in line.split()[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif tag == "f":
                idx = [int(w.split("/")[0]) for w in line.split()[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if len(idx) < 3:
                    raise ValueError("face needs 3 vertices")
                if meta is None:
                    groups.append([None, [idx]])
                else:
                    groups[-1][1].append(idx)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, byte=here) from None
    allP = np.array(verts, dtype=float).reshape(-1, 3)
    out = []
    for k, (name, first, groups) in enumerate(objects):
        last = objects[k + 1][1] if k + 1 < len(objects) else len(allP)
        P = allP[first:last]
        facets = []
        for m, faces in groups:
            if not faces:
                continue
            faces = [[i - first for i in face] for face in faces]
            if min(min(f) for f in faces) < 0 or max(max(f) for f in faces) >= len(P):
                raise ParseError(f"object {name!r} references vertices of another object")
            plane = m[1] if m is not None and m[1] is not None else _newell_plane(P, faces[0])
            role = m[0] if m is not None else _role_from_plane(plane)
            facets.append(Facet(_loops_from_faces(P, faces, plane), role, plane))
        out.append((name, BuildingMesh(P, facets)))
    return out


def export_ply(mesh: BuildingMesh, path, offset=None):
    """Binary little-endian PLY; faces carry their facet index and role code."""
    t = np.zeros(3) if offset is None else np.asarray(offset, float)
    faces = []
    for k, f in enumerate(mesh.facets):
        for face in _facet_faces(mesh, f):
            faces.append((face, k, ROLE_CODES[f.role]))
    head = [
        "ply",
        "format binary_little_endian 1.0",
        "comment lod2kit mesh",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "property int facet",
        "property uchar role",
        "end_header",
    ]
    out = bytearray(("\n".join(head) + "\n").encode())
    out += (mesh.vertices + t).astype("<f8").tobytes()
    for face, k, role in faces:
        out += struct.pack("<B", len(face)) + struct.pack(f"<{len(face)}i", *face) + struct.pack("<iB", k, role)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_ply_mesh(path) -> BuildingMesh:
    with open(path, "rb") as fh:
        elems = _read_ply_elements(fh.read())
    vprops, vrecs = elems["vertex"]
    if isinstance(vrecs, np.ndarray):
        P = np.stack([vrecs[c].astype(float) for c in "xyz"], axis=1)
    else:
        names = [p[0] for p in vprops]
        P = np.array([[r[names.index(c)] for c in "xyz"] for r in vrecs], dtype=float).reshape(-1, 3)
    fprops, frecs = elems.get("face", ([], []))
    names = [p[0] for p in fprops]
    groups = defaultdict(list)
    roles = {}
    for k, r in enumerate(frecs):
        idx = [int(i) for i in r[names.index("vertex_indices")]]
        fid = int(r[names.index("facet")]) if "facet" in names else k
        groups[fid].append(idx)
        if "role" in names:
            roles[fid] = ROLE_NAMES.get(int(r[names.index("role")]))
    facets = []
    for fid in sorted(groups):
        faces = groups[fid]
        plane = _newell_plane(P, faces[0])
        role = roles.get(fid) or _role_from_plane(plane)
        facets.append(Facet(_loops_from_faces(P, faces, plane), role, plane))
    return BuildingMesh(P, facets)


def export_mesh(mesh: BuildingMesh, path, fmt=None, name="building", offset=None):
    fmt = (fmt or os.path.splitext(str(path))[1].lstrip(".")).lower()
    if fmt == "obj":
        export_obj(mesh, path, name=name, offset=offset)
    elif fmt == "ply":
        export_ply(mesh, path, offset=offset)
    else:
        raise UnsupportedFormat(f"mesh format {fmt!r}")


def load_mesh(path) -> BuildingMesh:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return load_obj(path)
    if ext == ".ply":
        return load_ply_mesh(path)
    raise UnsupportedFormat(f"mesh format {ext!r}")
