"""Versioned policy checkpoint files.

A checkpoint is a JSON document carrying explicit layer dimensions,
row-major decimal weight lists for the actor and critic, the encoding
schema the policy was trained against, and an append-only provenance
chain. A content checksum detects corruption, and writes go through a
temporary file plus atomic rename so a reader never sees a partial file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, UnsupportedVersionError
from .network import ACTOR_HEAD, CRITIC_HEAD, NetworkParams

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncodingSchema:
    """State layout contract a policy was trained against."""

    resolution: int
    state_length: int
    layout_version: int


@dataclass(frozen=True)
class ProvenanceEntry:
    """One training stage: which scenario, for how long, under which seed."""

    scenario: str
    episodes: int
    rng_seed: int


@dataclass
class PolicyCheckpoint:
    """Actor and critic parameters plus the metadata needed to reuse them."""

    format_version: int
    schema: EncodingSchema
    actor: NetworkParams
    critic: NetworkParams
    provenance: tuple[ProvenanceEntry, ...]


def _params_to_jsonable(params: NetworkParams) -> dict:
    return {
        "layer_dims": list(params.layer_dims),
        "head": params.head,
        "weights": [w.reshape(-1).tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def _params_from_jsonable(data: dict) -> NetworkParams:
    try:
        dims = tuple(int(d) for d in data["layer_dims"])
        head = data["head"]
        weights = []
        biases = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = np.array(data["weights"][i], dtype=np.float64)
            if w.size != fan_in * fan_out:
                raise IntegrityError(
                    f"layer {i} weight count {w.size} does not match dims "
                    f"{fan_in}x{fan_out}")
            b = np.array(data["biases"][i], dtype=np.float64)
            if b.size != fan_out:
                raise IntegrityError(f"layer {i} bias count mismatch")
            weights.append(w.reshape(fan_in, fan_out))
            biases.append(b)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed network section: {exc}") from exc
    if head not in (ACTOR_HEAD, CRITIC_HEAD):
        raise IntegrityError(f"unknown head '{head}'")
    return NetworkParams(layer_dims=dims, weights=weights, biases=biases, head=head)


def _payload(ckpt: PolicyCheckpoint) -> dict:
    return {
        "encoding_schema": {
            "resolution": ckpt.schema.resolution,
            "state_length": ckpt.schema.state_length,
            "layout_version": ckpt.schema.layout_version,
        },
        "actor": _params_to_jsonable(ckpt.actor),
        "critic": _params_to_jsonable(ckpt.critic),
        "provenance": [
            {"scenario": p.scenario, "episodes": p.episodes, "rng_seed": p.rng_seed}
            for p in ckpt.provenance
        ],
    }


def _checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(ckpt: PolicyCheckpoint, path: str | Path) -> None:
    """Write a checkpoint atomically (temp file + rename in the target dir)."""
    path = Path(path)
    payload = _payload(ckpt)
    document = {
        "format_version": ckpt.format_version,
        "checksum": _checksum(payload),
        "payload": payload,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(document, fh)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> PolicyCheckpoint:
    """Read and verify a checkpoint; never returns a partially parsed one."""
    path = Path(path)
    if not path.is_file():
        raise IntegrityError(f"checkpoint file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise IntegrityError(f"checkpoint {path} has no top-level mapping")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint {path} has format version {version}; "
            f"this build reads version {FORMAT_VERSION}")
    payload = document.get("payload")
    if not isinstance(payload, dict):
        raise IntegrityError(f"checkpoint {path} is missing its payload")
    if document.get("checksum") != _checksum(payload):
        raise IntegrityError(f"checkpoint {path} failed its content checksum")
    try:
        schema_raw = payload["encoding_schema"]
        schema = EncodingSchema(
            resolution=int(schema_raw["resolution"]),
            state_length=int(schema_raw["state_length"]),
            layout_version=int(schema_raw["layout_version"]),
        )
        provenance = tuple(
            ProvenanceEntry(str(p["scenario"]), int(p["episodes"]), int(p["rng_seed"]))
            for p in payload["provenance"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"checkpoint {path} has malformed metadata: {exc}") from exc
    actor = _params_from_jsonable(payload["actor"])
    critic = _params_from_jsonable(payload["critic"])
    if actor.layer_dims[0] != schema.state_length or critic.layer_dims[0] != schema.state_length:
        raise IntegrityError(
            f"checkpoint {path}: network input dims do not match the declared "
            f"state length {schema.state_length}")
    return PolicyCheckpoint(
        format_version=version,
        schema=schema,
        actor=actor,
        critic=critic,
        provenance=provenance,
    )
