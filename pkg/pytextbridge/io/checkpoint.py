import json
import numpy as np
from . import iobase
from .. import utils
from ..model import ModelParams
from ..optim import AdamState
from ..training import Checkpoint

CHECKPOINT_MAGIC = b"TBGC"
FORMAT_VERSION = 1


def _meta(checkpoint: Checkpoint) -> dict:
    return {"stage": checkpoint.stage, "config": checkpoint.config, "fingerprints": checkpoint.fingerprints,
            "epoch": checkpoint.epoch, "history": checkpoint.history, "build_id": checkpoint.build_id,
            "config_hash": checkpoint.config_hash, "optimizer": checkpoint.optimizer_settings,
            "adam_step": checkpoint.optimizer.step, "frozen": sorted(checkpoint.params.frozen),
            "precision": str(checkpoint.params.dtype), "extra": checkpoint.extra}


def _tensors(checkpoint: Checkpoint) -> list:
    tensors = [("param/" + name, tensor) for name, tensor in checkpoint.params.tensors.items()]
    tensors += [("adam_m/" + name, tensor) for name, tensor in sorted(checkpoint.optimizer.m.items())]
    tensors += [("adam_v/" + name, tensor) for name, tensor in sorted(checkpoint.optimizer.v.items())]
    return tensors


def checkpoint_bytes(checkpoint: Checkpoint) -> bytes:
    """Serialises a checkpoint: canonical-JSON metadata, then named float64 tensors"""
    writer = iobase.BinaryWriter(CHECKPOINT_MAGIC, FORMAT_VERSION)
    writer.text(utils.canonical_json(_meta(checkpoint)))
    tensors = _tensors(checkpoint)
    writer.u32(len(tensors))
    for name, tensor in tensors:
        writer.text(name)
        writer.u32(tensor.ndim)
        for size in tensor.shape:
            writer.u64(size)
        writer.array(tensor, "<f8")
    return writer.content()


def write_checkpoint(filename: str, checkpoint: Checkpoint) -> None:
    """Writes a checkpoint atomically"""
    utils.atomic_write_bytes(filename, checkpoint_bytes(checkpoint))


def _section(tensors: dict, prefix: str, dtype) -> dict:
    return {name[len(prefix):]: tensor.astype(dtype) for name, tensor in tensors.items() if name.startswith(prefix)}


def read_checkpoint(filename: str) -> Checkpoint:
    """Reads a checkpoint; parameters come back in the precision they were trained in"""
    reader = iobase.read_binary(filename, CHECKPOINT_MAGIC, FORMAT_VERSION)
    meta_offset = reader.offset
    try:
        meta = json.loads(reader.text())
    except ValueError:
        raise reader.error("Invalid checkpoint metadata", meta_offset)
    tensors = {}
    for _ in range(reader.u32()):
        name = reader.text()
        shape = tuple(reader.u64() for _ in range(reader.u32()))
        tensors[name] = reader.array(int(np.prod(shape, dtype=np.int64)), "<f8").reshape(shape)
    reader.finish()

    dtype = np.dtype(meta.get("precision", "float64"))
    params = ModelParams(_section(tensors, "param/", dtype), meta.get("frozen", []))
    moments = _section(tensors, "adam_m/", dtype), _section(tensors, "adam_v/", dtype)
    state = AdamState(meta.get("adam_step", 0), *moments)
    return Checkpoint(meta["stage"], params, state, meta["config"], meta["fingerprints"], meta["epoch"],
                      meta["history"], meta.get("build_id", ""), meta.get("config_hash", ""), meta.get("optimizer"),
                      meta.get("extra"))
