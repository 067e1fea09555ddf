"""Persistence: parameter files (.hatp), scene sets (.jsonl), reports, locks.

Every artifact embeds (tool version, config hash, seed) so a run can be
reproduced from any one of its outputs. All writers are deterministic given
identical inputs: JSON is emitted with sorted keys and compact separators,
floats print as their shortest round-trip repr, and parameter blobs are raw
little-endian float64. Wall-clock measurements never go into these files —
latency gets its own sidecar precisely so the rest stays byte-reproducible.

.hatp layout: 8-byte magic ``HATP\\x01\\x00\\x00\\x00``, little-endian uint64
manifest length, UTF-8 JSON manifest, then one length-checked float64 blob
per entry of ``manifest["params"]``, in order.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager

import numpy as np

from .align import AlignConfig, AlignerParams
from .baselines import ImplicitParams
from .errors import ValidationError
from .geometry import EgoTransform
from .harness import EvalReport, ReportRow
from .sim import ObjectTrack, Observations, Scene, WindowEncoder
from .tensor import Tensor

MAGIC = b"HATP\x01\x00\x00\x00"

REPORT_HEADER = ("method,regime,pairs,translation_mean,translation_median,"
                 "yaw_mean,velocity_mean")
LOSS_HEADER = "epoch,loss"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _provenance_line(meta: dict) -> str:
    return (f"# hypalign {meta.get('tool_version', '?')} "
            f"config={meta.get('config_hash', '?')} seed={meta.get('seed', '?')}")


# -- parameter files ----------------------------------------------------------------


def save_hatp(path, named: dict, meta: dict) -> None:
    """Write named float64 arrays plus a JSON manifest carrying `meta`."""
    params = []
    blobs = []
    for name, value in named.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        data = np.asarray(data, dtype="<f8")
        params.append({"name": name, "shape": list(data.shape)})
        blobs.append(data.tobytes(order="C"))
    manifest = dict(meta)
    manifest["params"] = params
    payload = canonical_json(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(payload).to_bytes(8, "little"))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_hatp(path) -> tuple[dict, dict]:
    """Read back (manifest, {name: float64 array}); every length is checked."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a hatp file (bad magic)")
    off = len(MAGIC)
    if len(raw) < off + 8:
        raise ValidationError(f"{path}: truncated before manifest length")
    mlen = int.from_bytes(raw[off:off + 8], "little")
    off += 8
    if len(raw) < off + mlen:
        raise ValidationError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[off:off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: manifest is not valid JSON: {exc}") from None
    off += mlen
    if not isinstance(manifest.get("params"), list):
        raise ValidationError(f"{path}: manifest lacks a params list")
    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if len(raw) < off + nbytes:
            raise ValidationError(
                f"{path}: blob '{entry['name']}' truncated "
                f"(need {nbytes} bytes, have {len(raw) - off})")
        arrays[entry["name"]] = (
            np.frombuffer(raw[off:off + nbytes], dtype="<f8").reshape(shape).copy())
        off += nbytes
    if off != len(raw):
        raise ValidationError(f"{path}: {len(raw) - off} trailing bytes")
    return manifest, arrays


def _restore(named: dict, arrays: dict, path) -> None:
    missing = set(named) ^ set(arrays)
    if missing:
        raise ValidationError(f"{path}: parameter name mismatch: {sorted(missing)}")
    for name, tensor in named.items():
        if arrays[name].shape != tensor.data.shape:
            raise ValidationError(
                f"{path}: '{name}' has shape {arrays[name].shape}, "
                f"expected {tensor.data.shape}")
        tensor.data = arrays[name]


def save_aligner(path, params: AlignerParams, encoder: WindowEncoder,
                 meta: dict) -> None:
    named = dict(params.named_parameters())
    named.update(encoder.named_parameters())
    manifest = dict(meta)
    manifest["model_kind"] = "aligner"
    manifest["config"] = {"c": params.config.c,
                          "models": [k.value for k in params.config.models],
                          "max_instances": params.config.max_instances}
    manifest["init_seed"] = params.seed
    manifest["encoder_seed"] = encoder.seed
    save_hatp(path, named, manifest)


def load_aligner(path) -> tuple[AlignerParams, WindowEncoder, dict]:
    manifest, arrays = load_hatp(path)
    if manifest.get("model_kind") != "aligner":
        raise ValidationError(f"{path}: expected an aligner parameter file")
    cfg = manifest["config"]
    params = AlignerParams(
        AlignConfig(c=cfg["c"], models=tuple(cfg["models"]),
                    max_instances=cfg.get("max_instances", 64)),
        seed=manifest["init_seed"])
    encoder = WindowEncoder(cfg["c"], seed=manifest["encoder_seed"])
    named = dict(params.named_parameters())
    named.update(encoder.named_parameters())
    _restore(named, arrays, path)
    return params, encoder, manifest


def save_implicit(path, params: ImplicitParams, encoder: WindowEncoder,
                  meta: dict) -> None:
    named = dict(params.named_parameters())
    named.update(encoder.named_parameters())
    manifest = dict(meta)
    manifest["model_kind"] = "implicit"
    manifest["config"] = {"c": params.c}
    manifest["init_seed"] = params.seed
    manifest["encoder_seed"] = encoder.seed
    save_hatp(path, named, manifest)


def load_implicit(path) -> tuple[ImplicitParams, WindowEncoder, dict]:
    manifest, arrays = load_hatp(path)
    if manifest.get("model_kind") != "implicit":
        raise ValidationError(f"{path}: expected an implicit parameter file")
    params = ImplicitParams(manifest["config"]["c"], seed=manifest["init_seed"])
    encoder = WindowEncoder(manifest["config"]["c"], seed=manifest["encoder_seed"])
    named = dict(params.named_parameters())
    named.update(encoder.named_parameters())
    _restore(named, arrays, path)
    return params, encoder, manifest


# -- scene sets ---------------------------------------------------------------------


def save_scenes(path, scenes, observations, meta: dict) -> None:
    """JSON-lines: a header object, then one line per (scene, frame)."""
    header = dict(meta)
    header["kind"] = "scenes"
    header["n_scenes"] = len(scenes)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(header) + "\n")
        for si, (scene, obs) in enumerate(zip(scenes, observations)):
            for f in range(scene.n_frames):
                pose = scene.poses[f]
                line = {
                    "scene": si,
                    "frame": f,
                    "dt": scene.dt,
                    "seed": scene.seed,
                    "obs_seed": obs.seed,
                    "ego": {"r": pose.r.reshape(-1).tolist(),
                            "t": pose.t.tolist()},
                    "objects": [
                        {"id": t.object_id,
                         "gt": t.anchors[f].tolist(),
                         "observed": obs.anchors[f, i].tolist(),
                         "regime": t.labels[f]}
                        for i, t in enumerate(scene.tracks)
                    ],
                }
                fh.write(canonical_json(line) + "\n")


def load_scenes(path) -> tuple[list, list, dict]:
    """Rebuild (scenes, observations, header) from a scene .jsonl file.

    Loaded tracks carry labels but not generator segments; everything the
    harness needs for training/evaluation round-trips exactly.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [json.loads(ln) for ln in fh if ln.strip()]
    if not lines or lines[0].get("kind") != "scenes":
        raise ValidationError(f"{path}: missing scenes header line")
    header = lines[0]
    frames: dict = {}
    for line in lines[1:]:
        frames.setdefault(line["scene"], []).append(line)
    scenes, observations = [], []
    for si in sorted(frames):
        chunk = sorted(frames[si], key=lambda l: l["frame"])
        poses = tuple(
            EgoTransform(np.array(l["ego"]["r"]).reshape(3, 3), np.array(l["ego"]["t"]))
        for l in chunk)
        n_frames = len(chunk)
        n_objects = len(chunk[0]["objects"])
        gt = np.array([[o["gt"] for o in l["objects"]] for l in chunk])
        observed = np.array([[o["observed"] for o in l["objects"]] for l in chunk])
        tracks = tuple(
            ObjectTrack(
                object_id=chunk[0]["objects"][i]["id"],
                anchors=gt[:, i],
                labels=tuple(l["objects"][i]["regime"] for l in chunk),
                segments=(),
            )
            for i in range(n_objects)
        )
        scenes.append(Scene(poses, tracks, float(chunk[0]["dt"]), int(chunk[0]["seed"])))
        observations.append(Observations(observed, int(chunk[0]["obs_seed"])))
    return scenes, observations, header


# -- reports ------------------------------------------------------------------------


def save_report_csv(path, report: EvalReport, meta: dict) -> None:
    rows = sorted(report.rows, key=lambda r: (r.method, r.regime))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_provenance_line(meta) + "\n")
        fh.write(REPORT_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.method},{r.regime},{r.pairs},{r.translation_mean!r},"
                     f"{r.translation_median!r},{r.yaw_mean!r},{r.velocity_mean!r}\n")


def save_report_json(path, report: EvalReport, meta: dict) -> None:
    doc = {
        "provenance": meta,
        "rows": [vars(r) for r in sorted(report.rows, key=lambda r: (r.method, r.regime))],
        "weights": report.weights,
        "model_names": report.model_names,
        "meta": report.meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(doc) + "\n")


def load_report_json(path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rows = [ReportRow(**r) for r in doc["rows"]]
    return EvalReport(rows=rows, weights=doc["weights"],
                      model_names=doc["model_names"], meta=doc.get("meta", {}))


def save_latency_json(path, latency_ms: dict, meta: dict) -> None:
    doc = {"provenance": meta, "latency_ms": latency_ms}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(doc) + "\n")


def save_loss_curve(path, curve, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_provenance_line(meta) + "\n")
        fh.write(LOSS_HEADER + "\n")
        for epoch, loss in enumerate(curve):
            fh.write(f"{epoch},{loss!r}\n")


# -- output locking -----------------------------------------------------------------


@contextmanager
def output_lock(directory):
    """Exclusive per-directory lock; a held lock means a concurrent run."""
    os.makedirs(directory, exist_ok=True)
    lock_path = os.path.join(directory, ".hypalign.lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(
            f"output directory {directory} is locked by another run "
            f"(remove {lock_path} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.remove(lock_path)
        except FileNotFoundError:
            pass
