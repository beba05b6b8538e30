"""Training checkpoints stored in the parameter container format."""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

from loguru import logger

from src.autodiff.params import ParamStore


@dataclass
class Checkpoint:
    """
    Everything needed to resume training.

    Randomness is derived statelessly from (seed, epoch, cloud index), so
    the seed and the completed epoch count are the whole RNG state.
    """
    store: ParamStore
    epoch: int
    fingerprint: str
    seed: int
    history: List[Dict[str, Any]] = field(default_factory=list)

    def meta(self) -> Dict[str, Any]:
        return {
            'epoch': self.epoch,
            'fingerprint': self.fingerprint,
            'seed': self.seed,
            'history': self.history,
        }


def config_fingerprint(config: Dict[str, Any]) -> str:
    """sha256 of a config mapping in canonical JSON form."""
    blob = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(blob.encode('utf-8')).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = ckpt.store.save(path, meta=ckpt.meta())
    logger.info(f"Checkpoint for epoch {ckpt.epoch} written to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    store, meta = ParamStore.load(path)
    return Checkpoint(
        store=store,
        epoch=int(meta.get('epoch', 0)),
        fingerprint=str(meta.get('fingerprint', '')),
        seed=int(meta.get('seed', 0)),
        history=list(meta.get('history', [])),
    )
