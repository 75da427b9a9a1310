"""Versioned JSON forms and deterministic file output.

Elements serialize binary-free: block dims, trace weights, and blocks as
nested [re, im] pairs.  Certificates embed the problem recipe (family or
spec, ε, index, and how F was produced) so they can be re-verified
standalone.  Partitions above an entry-count threshold go to .npy sidecars
(one stacked array per N-block) referenced by SHA-256 from the JSON.

All writes are atomic (temp file + rename) and canonical: sorted keys,
two-space indent, trailing newline.  Timestamps live only under "meta", so
payloads are byte-identical across reruns with the same seed.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone

import numpy as np

from .algebra import AlgebraShape, Element, PartitionOfUnity
from .inclusion import InclusionSpec

ELEMENT_FORMAT = "element/1"
CERT_FORMAT = "paving-certificate/1"
PARTITION_SIDE_CAR_LIMIT = 2_000_000  # complex entries kept inline in JSON


def _complex_matrix_to_pairs(mat: np.ndarray):
    return [[[float(v.real), float(v.imag)] for v in row] for row in mat]


def _pairs_to_complex_matrix(rows):
    return np.array([[complex(re, im) for re, im in row] for row in rows],
                    dtype=np.complex128)


def shape_to_obj(shape: AlgebraShape) -> dict:
    return {"block_dims": list(shape.block_dims),
            "trace_weights": list(shape.trace_weights)}


def shape_from_obj(obj) -> AlgebraShape:
    return AlgebraShape(tuple(obj["block_dims"]), tuple(obj["trace_weights"]))


def element_to_obj(x: Element) -> dict:
    return {"format": ELEMENT_FORMAT,
            "shape": shape_to_obj(x.shape),
            "blocks": [_complex_matrix_to_pairs(b) for b in x.blocks]}


def element_from_obj(obj) -> Element:
    if obj.get("format") != ELEMENT_FORMAT:
        raise ValueError(f"unsupported element format {obj.get('format')!r}")
    shape = shape_from_obj(obj["shape"])
    return Element(shape, [_pairs_to_complex_matrix(b) for b in obj["blocks"]])


def inclusion_spec_to_obj(spec: InclusionSpec) -> dict:
    return {"n_blocks": list(spec.n_shape.block_dims),
            "n_weights": list(spec.n_shape.trace_weights),
            "m_blocks": list(spec.m_shape.block_dims),
            "m_weights": list(spec.m_shape.trace_weights),
            "lambda": [list(row) for row in spec.inclusion_matrix]}


def inclusion_spec_from_obj(obj) -> InclusionSpec:
    return InclusionSpec(
        n_shape=AlgebraShape(tuple(obj["n_blocks"]), tuple(obj["n_weights"])),
        m_shape=AlgebraShape(tuple(obj["m_blocks"]), tuple(obj["m_weights"])),
        inclusion_matrix=tuple(tuple(row) for row in obj["lambda"]))


def _json_default(o):
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON-serializable: {type(o)}")


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str, data: bytes):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def timestamp_meta() -> dict:
    return {"timestamp": datetime.now(timezone.utc).isoformat()}


def partition_to_obj(partition: PartitionOfUnity, sidecar_stem: str = None) -> dict:
    """Serialize a partition: dense blocks plus the producing frames.

    Frames (orthonormal column factors with p = F F*) are included whenever
    the projections carry them, and reconstruction rebuilds the blocks from
    the frames with the same outer-product code path, so a round-tripped
    partition is bit-identical to the original.  Above the inline size limit
    the frames go to one .npy sidecar per algebra block, referenced by hash.
    """
    shape = partition.shape
    framed = all("frame" in p.meta for p in partition.projections)
    entries = partition.size * shape.l2_dim
    if framed and entries > PARTITION_SIDE_CAR_LIMIT and sidecar_stem is not None:
        ranks = [[int(p.meta["frame"][k].shape[1]) for p in partition.projections]
                 for k in range(shape.num_blocks)]
        files = []
        for k in range(shape.num_blocks):
            stacked = np.concatenate(
                [np.ascontiguousarray(p.meta["frame"][k])
                 for p in partition.projections], axis=1)
            path = f"{sidecar_stem}.block{k}.npy"
            import io

            buf = io.BytesIO()
            np.save(buf, stacked)
            data = buf.getvalue()
            atomic_write_bytes(path, data)
            files.append({"path": os.path.basename(path),
                          "sha256": hashlib.sha256(data).hexdigest()})
        return {"kind": "frame-sidecar", "shape": shape_to_obj(shape),
                "size": partition.size, "ranks": ranks, "files": files}
    obj = {"kind": "inline", "shape": shape_to_obj(shape),
           "projections": [[_complex_matrix_to_pairs(b) for b in p.blocks]
                           for p in partition.projections]}
    if framed:
        obj["frames"] = [[_complex_matrix_to_pairs(p.meta["frame"][k])
                          for k in range(shape.num_blocks)]
                         for p in partition.projections]
    return obj


def partition_from_obj(obj, base_dir: str = ".") -> PartitionOfUnity:
    shape = shape_from_obj(obj["shape"])
    if obj["kind"] == "inline":
        if "frames" in obj:
            projections = []
            for frames in obj["frames"]:
                mats = [np.array([[complex(re, im) for re, im in row]
                                  for row in f], dtype=np.complex128).reshape(d, -1)
                        for f, d in zip(frames, shape.block_dims)]
                from . import algebra as _alg

                projections.append(_alg.frame_projection(shape, mats))
            return PartitionOfUnity(projections)
        return PartitionOfUnity(
            [Element(shape, [_pairs_to_complex_matrix(b) for b in blocks])
             for blocks in obj["projections"]])
    if obj["kind"] != "frame-sidecar":
        raise ValueError(f"unknown partition payload kind {obj['kind']!r}")
    stacks = []
    for entry in obj["files"]:
        path = os.path.join(base_dir, entry["path"])
        with open(path, "rb") as handle:
            data = handle.read()
        digest = hashlib.sha256(data).hexdigest()
        if digest != entry["sha256"]:
            raise ValueError(f"sidecar {path} digest mismatch")
        import io

        stacks.append(np.load(io.BytesIO(data)))
    from . import algebra as _alg

    projections = []
    offsets = [0] * shape.num_blocks
    for i in range(obj["size"]):
        frames = []
        for k in range(shape.num_blocks):
            r = obj["ranks"][k][i]
            frames.append(stacks[k][:, offsets[k]:offsets[k] + r])
            offsets[k] += r
        projections.append(_alg.frame_projection(shape, frames))
    return PartitionOfUnity(projections)


def certificate_to_obj(cert, problem_recipe: dict, sidecar_stem: str = None,
                       include_candidate: bool = True) -> dict:
    obj = {
        "format": CERT_FORMAT,
        "problem": problem_recipe,
        **cert.summary(),
        "meta": timestamp_meta(),
    }
    if include_candidate and cert.partition is not None:
        obj["partition"] = partition_to_obj(cert.partition, sidecar_stem)
    if include_candidate and cert.unitaries is not None:
        obj["unitaries"] = [element_to_obj(u) for u in cert.unitaries]
    return obj


def strip_meta(obj: dict) -> dict:
    out = dict(obj)
    out.pop("meta", None)
    return out


def write_csv(path: str, header, rows):
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    atomic_write_text(path, buf.getvalue())
