#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Readers and writers of every artifact the pipeline exchanges between commands.

Binary formats share one layout: a magic line, `key=value` header lines, an `end_header`
line and a little-endian payload. Floats in headers are written with `repr` so that they
read back exactly.
"""

import csv
import io
import math
from pathlib import Path

import numpy as np
import yaml

from common.utils import WithLogging
from common.workload import AbstractWorkload
from constants import (
    CHECKPOINT_MAGIC,
    HEADER_END,
    NORMALIZED_UNITS,
    SLICE_MAGIC,
    VOLUME_MAGIC,
    VOXEL_UNITS,
)
from core.domain import (
    GapReport,
    ModelManifest,
    SliceDataset,
    SliceRecord,
    SurrogateSignal,
    TrainLog,
    VolumeGrid,
)
from core.errors import FormatError
from core.workload import PipelinePaths
from managers.nn import AdamState, Layer, MlpParams

HIDDEN = "hidden"


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _ints(values) -> str:
    return " ".join(str(int(v)) for v in values)


def _flat(weights: list[np.ndarray], biases: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(weights, biases)])


def encode_header(magic: bytes, fields: dict[str, str]) -> bytes:
    """Magic line, key=value lines and the end marker."""
    lines = AbstractWorkload.to_env(fields) + [HEADER_END]
    return magic + ("\n".join(lines) + "\n").encode("ascii")


def decode_header(content: bytes, magic: bytes, path: str) -> tuple[dict[str, str], bytes]:
    """Split a binary artifact into its header fields and payload."""
    if not content.startswith(magic):
        raise FormatError(f"{path}: expected magic {magic!r}")
    marker = f"\n{HEADER_END}\n".encode("ascii")
    end = content.find(marker, len(magic) - 1)
    if end < 0:
        raise FormatError(f"{path}: header is not terminated by {HEADER_END}")
    text = content[len(magic) : end + 1].decode("ascii")
    return AbstractWorkload.from_env(text.splitlines()), content[end + len(marker) :]


def _field(header: dict[str, str], key: str, path: str) -> str:
    try:
        return header[key]
    except KeyError:
        raise FormatError(f"{path}: missing header field {key}") from None


def _payload(payload: bytes, dtype: str, count: int, path: str) -> np.ndarray:
    expected = count * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype, count=count)


class ArtifactStore(WithLogging):
    """Serializes domain objects through a workload."""

    def __init__(self, workload: AbstractWorkload):
        self.workload = workload

    # ---------------
    # --- VOLUMES ---
    # ---------------

    def write_volume(self, grid: VolumeGrid, path: Path | str) -> None:
        """Write a CVOL file (float32, x fastest)."""
        header = encode_header(
            VOLUME_MAGIC,
            {
                "dims": _ints(grid.dims),
                "spacing": _floats(grid.spacing),
                "amplitude": repr(float(grid.amplitude)),
                "seed": str(int(grid.seed)),
            },
        )
        body = np.asarray(grid.data, dtype="<f4").tobytes(order="F")
        self.workload.write_bytes(header + body, str(path))
        self.logger.info(f"Wrote volume {path}")

    def read_volume(self, path: Path | str) -> VolumeGrid:
        """Read a CVOL file."""
        header, payload = decode_header(self.workload.read_bytes(str(path)), VOLUME_MAGIC, path)
        dims = tuple(int(v) for v in _field(header, "dims", path).split())
        if len(dims) != 3:
            raise FormatError(f"{path}: volume dims must have three entries")
        data = _payload(payload, "<f4", math.prod(dims), path).reshape(dims, order="F")
        return VolumeGrid(
            data=data.astype(np.float64),
            spacing=tuple(float(v) for v in _field(header, "spacing", path).split()),
            amplitude=float(header.get("amplitude", "0.0")),
            seed=int(header.get("seed", "0")),
        )

    # --------------
    # --- SLICES ---
    # --------------

    def write_slice(self, record: SliceRecord, path: Path | str) -> None:
        """Write a SLC file; the ground-truth amplitude is never stored with the pixels."""
        header = encode_header(
            SLICE_MAGIC,
            {
                "shape": _ints(record.pixels.shape),
                "index": str(record.index),
                "kind": record.kind,
                "plane_position": str(record.plane_position),
                "timestamp": repr(float(record.timestamp)),
            },
        )
        body = np.asarray(record.pixels, dtype="<f4").tobytes(order="F")
        self.workload.write_bytes(header + body, str(path))

    def read_slice(self, path: Path | str) -> SliceRecord:
        """Read a SLC file."""
        header, payload = decode_header(self.workload.read_bytes(str(path)), SLICE_MAGIC, path)
        shape = tuple(int(v) for v in _field(header, "shape", path).split())
        if len(shape) != 2:
            raise FormatError(f"{path}: slice shape must have two entries")
        pixels = _payload(payload, "<f4", math.prod(shape), path).reshape(shape, order="F")
        return SliceRecord(
            index=int(_field(header, "index", path)),
            kind=_field(header, "kind", path),
            plane_position=int(_field(header, "plane_position", path)),
            timestamp=float(_field(header, "timestamp", path)),
            pixels=pixels.astype(np.float64),
        )

    def write_dataset(self, dataset: SliceDataset, paths: PipelinePaths) -> None:
        """Write manifest, slice files and the hidden ground-truth sidecar.

        The manifest amplitude column only carries a placeholder; the amplitudes live in the
        sidecar, which only the evaluation command reads.
        """
        rows = io.StringIO()
        writer = csv.writer(rows, lineterminator="\n")
        writer.writerow(["index", "kind", "plane_position", "timestamp", "amplitude_gt", "file"])
        for record in dataset.records:
            target = paths.slice_file(record.index)
            self.write_slice(record, target)
            writer.writerow(
                [
                    record.index,
                    record.kind,
                    record.plane_position,
                    repr(float(record.timestamp)),
                    HIDDEN,
                    target.relative_to(paths.dataset).as_posix(),
                ]
            )
        self.workload.write(rows.getvalue(), str(paths.manifest))
        self.write_yaml(
            {
                "dims": list(dataset.dims),
                "spacing": [float(s) for s in dataset.spacing],
                "n_records": len(dataset),
                "split_index": dataset.split_index,
            },
            paths.dataset_meta,
        )
        self.logger.info(f"Wrote {len(dataset)} records to {paths.dataset}")

    def read_dataset(self, paths: PipelinePaths) -> SliceDataset:
        """Read a dataset written by `write_dataset`, without ground-truth amplitudes."""
        meta = self.read_yaml(paths.dataset_meta)
        records = []
        for row in csv.DictReader(self.workload.read(str(paths.manifest))):
            record = self.read_slice(paths.dataset / row["file"])
            if record.index != int(row["index"]) or record.kind != row["kind"]:
                raise FormatError(f"Slice file {row['file']} does not match its manifest row")
            records.append(record)
        return SliceDataset(
            records=records,
            dims=tuple(int(v) for v in meta["dims"]),
            spacing=tuple(float(v) for v in meta["spacing"]),
            split_index=meta.get("split_index"),
        )

    def write_ground_truth(self, dataset: SliceDataset, extra: dict, path: Path | str) -> None:
        """Write the hidden per-record amplitudes and the oracle parameters."""
        content = dict(extra)
        content["amplitudes"] = {r.index: float(r.amplitude_gt) for r in dataset.records}
        self.write_yaml(content, path)

    def read_ground_truth(self, path: Path | str) -> dict[int, float]:
        """Read the per-record hidden amplitudes."""
        content = self.read_yaml(path)
        return {int(k): float(v) for k, v in content["amplitudes"].items()}

    # ---------------
    # --- SIGNALS ---
    # ---------------

    def write_signal(self, signal: SurrogateSignal, meta: dict, csv_path, meta_path) -> None:
        """Write the signal CSV and its normalization metadata."""
        rows = io.StringIO()
        writer = csv.writer(rows, lineterminator="\n")
        writer.writerow(["timestamp", "raw", "norm01", "norm11"])
        for t, raw, n01, n11 in zip(signal.timestamps, signal.raw, signal.norm01, signal.norm11):
            writer.writerow([repr(float(v)) for v in (t, raw, n01, n11)])
        self.workload.write(rows.getvalue(), str(csv_path))
        content = dict(meta)
        content.update(
            {
                "raw_min": float(signal.raw_min),
                "raw_max": float(signal.raw_max),
                "landmark_columns": list(signal.landmark_columns),
                "roi": list(signal.roi),
            }
        )
        self.write_yaml(content, meta_path)
        self.logger.info(f"Wrote surrogate signal {csv_path}")

    def read_signal(self, csv_path, meta_path) -> tuple[SurrogateSignal, dict]:
        """Read the signal CSV and metadata."""
        meta = self.read_yaml(meta_path)
        rows = list(csv.DictReader(self.workload.read(str(csv_path))))
        signal = SurrogateSignal(
            timestamps=np.array([float(r["timestamp"]) for r in rows]),
            raw=np.array([float(r["raw"]) for r in rows]),
            raw_min=float(meta["raw_min"]),
            raw_max=float(meta["raw_max"]),
            landmark_columns=tuple(int(c) for c in meta["landmark_columns"]),
            roi=tuple(int(r) for r in meta["roi"]),
        )
        return signal, meta

    # -------------------
    # --- CHECKPOINTS ---
    # -------------------

    def encode_checkpoint(
        self, params: MlpParams, adam: AdamState | None = None, step: int = 0
    ) -> bytes:
        """Serialize parameters and optional Adam moments."""
        fields = {
            "dims": _ints(params.dims),
            "omegas": _floats(layer.omega for layer in params.layers),
            "activations": " ".join(layer.activation for layer in params.layers),
            "residual": _ints(layer.residual for layer in params.layers),
            "step": str(step),
            "moments": "1" if adam is not None else "0",
        }
        if adam is not None:
            fields.update(
                {
                    "lr": repr(float(adam.lr)),
                    "beta1": repr(float(adam.beta1)),
                    "beta2": repr(float(adam.beta2)),
                    "eps": repr(float(adam.eps)),
                    "t": str(adam.t),
                }
            )
        layers = params.layers
        chunks = [_flat([layer.weight for layer in layers], [layer.bias for layer in layers])]
        if adam is not None:
            chunks += [_flat(adam.m_weights, adam.m_biases), _flat(adam.v_weights, adam.v_biases)]
        body = np.concatenate(chunks).astype("<f8").tobytes()
        return encode_header(CHECKPOINT_MAGIC, fields) + body

    def write_checkpoint(
        self, params: MlpParams, path: Path | str, adam: AdamState | None = None, step: int = 0
    ) -> None:
        """Write a checkpoint file."""
        self.workload.write_bytes(self.encode_checkpoint(params, adam, step), str(path))
        self.logger.debug(f"Wrote checkpoint {path}")

    def read_checkpoint(self, path: Path | str) -> tuple[MlpParams, AdamState | None, int]:
        """Read parameters, optional Adam state and step of a checkpoint."""
        header, payload = decode_header(
            self.workload.read_bytes(str(path)), CHECKPOINT_MAGIC, path
        )
        dims = [int(v) for v in _field(header, "dims", path).split()]
        omegas = [float(v) for v in _field(header, "omegas", path).split()]
        activations = _field(header, "activations", path).split()
        residual = [bool(int(v)) for v in _field(header, "residual", path).split()]
        n_layers = len(dims) - 1
        if not (len(omegas) == len(activations) == len(residual) == n_layers):
            raise FormatError(f"{path}: per-layer header fields disagree on the depth")
        moments = _field(header, "moments", path) == "1"

        sizes = [dims[i + 1] * dims[i] + dims[i + 1] for i in range(n_layers)]
        values = _payload(payload, "<f8", sum(sizes) * (3 if moments else 1), path)
        values = values.astype(np.float64)

        def unpack(offset: int) -> tuple[list[np.ndarray], list[np.ndarray], int]:
            weights, biases = [], []
            for i in range(n_layers):
                n_w = dims[i + 1] * dims[i]
                weights.append(values[offset : offset + n_w].reshape(dims[i + 1], dims[i]).copy())
                biases.append(values[offset + n_w : offset + sizes[i]].copy())
                offset += sizes[i]
            return weights, biases, offset

        weights, biases, offset = unpack(0)
        params = MlpParams(
            [
                Layer(w, b, omegas[i], activations[i], residual[i])
                for i, (w, b) in enumerate(zip(weights, biases))
            ]
        )
        adam = None
        if moments:
            m_w, m_b, offset = unpack(offset)
            v_w, v_b, _ = unpack(offset)
            adam = AdamState(
                m_w,
                m_b,
                v_w,
                v_b,
                lr=float(_field(header, "lr", path)),
                beta1=float(_field(header, "beta1", path)),
                beta2=float(_field(header, "beta2", path)),
                eps=float(_field(header, "eps", path)),
                t=int(_field(header, "t", path)),
            )
        return params, adam, int(header.get("step", "0"))

    # -----------------------
    # --- MODEL MANIFEST ---
    # -----------------------

    def write_model_manifest(self, manifest: ModelManifest, path: Path | str, extra: dict) -> None:
        """Write the normalization constants and geometry of a trained model pair."""
        content = {
            "raw_min": float(manifest.raw_min),
            "raw_max": float(manifest.raw_max),
            "dims": list(manifest.dims),
            "spacing": [float(s) for s in manifest.spacing],
            "displacement_units": manifest.displacement_units,
            "tmn_checkpoint": manifest.tmn_checkpoint,
            "san_checkpoint": manifest.san_checkpoint,
        }
        content.update(extra)
        self.write_yaml(content, path)

    def read_model_manifest(self, path: Path | str) -> ModelManifest:
        """Read a model manifest."""
        content = self.read_yaml(path)
        try:
            manifest = ModelManifest(
                raw_min=float(content["raw_min"]),
                raw_max=float(content["raw_max"]),
                dims=tuple(int(v) for v in content["dims"]),
                spacing=tuple(float(v) for v in content["spacing"]),
                displacement_units=content.get("displacement_units", NORMALIZED_UNITS),
                tmn_checkpoint=content.get("tmn_checkpoint", "tmn.ckpt"),
                san_checkpoint=content.get("san_checkpoint", "san.ckpt"),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"{path}: incomplete model manifest ({e})") from None
        if manifest.displacement_units not in (NORMALIZED_UNITS, VOXEL_UNITS):
            raise FormatError(f"{path}: unknown displacement units {manifest.displacement_units}")
        return manifest

    # ---------------------
    # --- TABLES/TEXT ---
    # ---------------------

    def write_train_log(self, log: TrainLog, path: Path | str) -> None:
        """Write the per-step loss history; the header records cadence and template deltas."""
        rows = io.StringIO()
        rows.write(f"# checkpoint_every={log.checkpoint_every}\n")
        if log.template_deltas:
            deltas = ",".join(repr(float(d)) for d in log.template_deltas)
            rows.write(f"# template_deltas={deltas}\n")
        rows.write(f"# wall_s={log.wall_s:.3f}\n")
        for key, value in log.validation.items():
            rows.write(f"# validation_{key}={value!r}\n")
        writer = csv.writer(rows, lineterminator="\n")
        writer.writerow(["step", "l_photo", "l_jacdet", "l_total", "lambda", "wall_ms"])
        for row in log.rows:
            r = row.report
            writer.writerow(
                [row.step, repr(r.l_photo), repr(r.l_jacdet), repr(r.l_total), repr(r.lam)]
                + [f"{row.wall_ms:.3f}"]
            )
        self.workload.write(rows.getvalue(), str(path))

    def write_table(self, header: list[str], rows: list[list], path: Path | str) -> None:
        """Write a CSV table."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        self.workload.write(buffer.getvalue(), str(path))
        self.logger.info(f"Wrote table {path}")

    def read_table(self, path: Path | str) -> list[dict[str, str]]:
        """Read a CSV table into dict rows, skipping comment lines."""
        lines = [line for line in self.workload.read(str(path)) if not line.startswith("#")]
        return list(csv.DictReader(lines))

    def write_yaml(self, content: dict, path: Path | str) -> None:
        """Write a YAML document."""
        self.workload.write(yaml.safe_dump(content, sort_keys=False), str(path))

    def read_yaml(self, path: Path | str) -> dict:
        """Read a YAML document."""
        try:
            content = yaml.safe_load("\n".join(self.workload.read(str(path))))
        except yaml.YAMLError as e:
            raise FormatError(f"{path}: invalid YAML ({e})") from None
        if not isinstance(content, dict):
            raise FormatError(f"{path}: expected a mapping")
        return content

    def write_gap_report(self, reports: list[GapReport], note: str, path: Path | str) -> None:
        """Write the positions each bin had to borrow."""
        self.write_yaml(
            {
                "note": note,
                "bins": [
                    {
                        "bin_index": r.bin_index,
                        "bin_center": float(r.bin_center),
                        "borrowed": {int(p): float(s) for p, s in r.borrowed.items()},
                    }
                    for r in reports
                ],
            },
            path,
        )

    def write_graymap(self, image: np.ndarray, path: Path | str) -> None:
        """Write a binary 8-bit PGM; rows of `image` become image rows."""
        data = np.asarray(image, dtype=np.float64)
        if data.ndim != 2:
            raise FormatError("A graymap needs a 2D image")
        pixels = np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
        self.workload.write_bytes(header + pixels.tobytes(order="C"), str(path))
