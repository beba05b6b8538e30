"""JSON-lines step metrics and CSV epoch summaries."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from src.system.errors import CloudIOError

STEP_FIELDS = ('epoch', 'step', 'lr', 'cg', 'cl', 'cl2g', 'recon', 'normal', 'total')
EPOCH_FIELDS = ('epoch', 'lr', 'bn_momentum', 'steps', 'cg', 'cl', 'cl2g', 'recon', 'normal', 'total')


def write_csv(rows: Sequence[Dict[str, Any]], path: Union[str, Path], fields: Optional[Sequence[str]] = None) -> Path:
    """Write dict rows as CSV; columns default to the keys in first-seen order."""
    path = Path(path)
    if fields is None:
        fields = []
        for row in rows:
            fields.extend(k for k in row if k not in fields)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=list(fields), extrasaction='ignore')
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise CloudIOError(f"cannot write {path}: {e}") from e
    return path


class MetricsWriter:
    """Appends one JSON record per step and rewrites the epoch CSV after each epoch."""

    def __init__(self, out_dir: Optional[Union[str, Path]]):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.epochs: List[Dict[str, Any]] = []
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def steps_path(self) -> Optional[Path]:
        return self.out_dir / 'steps.jsonl' if self.out_dir else None

    @property
    def epochs_path(self) -> Optional[Path]:
        return self.out_dir / 'epochs.csv' if self.out_dir else None

    def reset(self) -> None:
        if self.steps_path is not None and self.steps_path.exists():
            self.steps_path.unlink()

    def restore(self, epochs: Iterable[Dict[str, Any]], start_epoch: int) -> None:
        """Continue after ``start_epoch`` completed epochs, dropping later step records."""
        self.epochs = list(epochs)
        path = self.steps_path
        if path is None or not path.exists():
            return
        kept = [
            line for line in path.read_text(encoding='utf-8').splitlines()
            if line and json.loads(line)['epoch'] < start_epoch
        ]
        path.write_text(''.join(line + '\n' for line in kept), encoding='utf-8')

    def write_step(self, row: Dict[str, Any]) -> None:
        if self.steps_path is None:
            return
        try:
            with open(self.steps_path, 'a', encoding='utf-8') as f:
                f.write(json.dumps({k: row[k] for k in STEP_FIELDS}, separators=(',', ':')) + '\n')
        except OSError as e:
            raise CloudIOError(f"cannot append to {self.steps_path}: {e}") from e

    def write_epoch(self, row: Dict[str, Any]) -> None:
        self.epochs.append(row)
        if self.epochs_path is not None:
            write_csv(self.epochs, self.epochs_path, EPOCH_FIELDS)
