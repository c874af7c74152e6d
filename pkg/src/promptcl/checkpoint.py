"""Self-describing checkpoint containers with bit-exact round-trips.

A checkpoint is a single ``.npz`` holding every parameter array under its
canonical name plus a JSON metadata blob (model config, class registry,
frozen flags). Arrays are stored losslessly, so save -> load -> save
reproduces identical parameter bytes; tests hold the package to that.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile

import numpy as np
from numpy.lib import format as npy_format

from .adapters import AdapterStack, attach_adapters
from .model import ModelState, named_params
from .prompts import ClassifierBank, HeadEntry, PromptEntry, PromptPool
from .tensor import Tensor
from .vit import EncoderParams, ModelConfig

FORMAT = "promptcl-checkpoint-1"


def params_digest(named: dict[str, Tensor], names=None) -> str:
    """SHA-256 over the selected parameter arrays (sorted by name)."""
    h = hashlib.sha256()
    for name in sorted(named if names is None else names):
        t = named[name]
        h.update(name.encode("utf-8"))
        h.update(str(t.shape).encode("utf-8"))
        h.update(t.data.tobytes())
    return h.hexdigest()


def save_checkpoint(path, state: ModelState) -> None:
    meta = {
        "format": FORMAT,
        "config": state.config.to_dict(),
        "backbone_frozen": state.backbone.frozen,
        "has_adapters": state.adapters is not None,
        "adapters_frozen": (
            {str(k): v.frozen for k, v in state.adapters.layers.items()}
            if state.adapters is not None
            else {}
        ),
        "pool": [
            {"class_id": e.class_id, "stage_added": e.stage_added, "frozen": e.frozen}
            for e in state.pool.entries
        ],
        "bank": [
            {"class_id": e.class_id, "stage_added": e.stage_added, "frozen": e.frozen}
            for e in state.bank.entries
        ],
    }
    blobs = {name: t.data for name, t in named_params(state).items()}
    blobs["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    _write_npz(path, blobs)


def _write_npz(path, blobs: dict[str, np.ndarray]) -> None:
    """npz with sorted entries and a fixed zip timestamp.

    ``np.savez`` stamps each zip member with the wall clock, so two saves
    of identical arrays differ in bytes. Checkpoints feed content digests,
    hence the container itself must be a pure function of its contents.
    """
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED, allowZip64=True) as zf:
        for name in sorted(blobs):
            buf = io.BytesIO()
            npy_format.write_array(buf, np.asanyarray(blobs[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path) -> ModelState:
    with np.load(path) as bundle:
        if "__meta__" not in bundle:
            raise ValueError(f"load_checkpoint: {path} is not a checkpoint container (no metadata)")
        meta = json.loads(bundle["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"load_checkpoint: unsupported container format {meta.get('format')!r}")
        arrays = {k: bundle[k] for k in bundle.files if k != "__meta__"}

    config = ModelConfig(**meta["config"])
    backbone = EncoderParams(config)
    backbone.frozen = bool(meta["backbone_frozen"])

    adapters = None
    if meta["has_adapters"]:
        adapters = attach_adapters(config)
        for key, frozen in meta["adapters_frozen"].items():
            adapters.layers[int(key)].frozen = bool(frozen)

    def fetch(name: str) -> np.ndarray:
        if name not in arrays:
            raise ValueError(f"load_checkpoint: metadata promises array {name} but it is missing")
        return arrays[name]

    pool = PromptPool(config.embed_dim, seed=config.seed)
    bank = ClassifierBank(config.embed_dim, seed=config.seed)
    for rec in meta["pool"]:
        cid = int(rec["class_id"])
        vec = fetch(f"prompt.{cid:04d}")
        pool.entries.append(
            PromptEntry(cid, Tensor(vec, requires_grad=True), bool(rec["frozen"]), int(rec["stage_added"]))
        )
    for rec in meta["bank"]:
        cid = int(rec["class_id"])
        bank.entries.append(
            HeadEntry(
                cid,
                Tensor(fetch(f"head.{cid:04d}.w"), requires_grad=True),
                Tensor(fetch(f"head.{cid:04d}.b"), requires_grad=True),
                bool(rec["frozen"]),
                int(rec["stage_added"]),
            )
        )

    state = ModelState(config, backbone, adapters, pool, bank)
    named = named_params(state)
    missing = set(named) - set(arrays)
    extra = set(arrays) - set(named)
    if missing or extra:
        raise ValueError(
            f"load_checkpoint: parameter names disagree with metadata "
            f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})"
        )
    for name, arr in arrays.items():
        t = named[name]
        if t.data.shape != arr.shape:
            raise ValueError(
                f"load_checkpoint: array {name} has shape {arr.shape}, expected {t.data.shape}"
            )
        t.data = arr.astype(np.float64, copy=True)
    return state


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
