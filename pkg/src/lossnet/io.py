"""Output files with provenance.

JSON outputs embed the run manifest under ``"manifest"``; CSV outputs get a
sidecar ``<file>.manifest.json``. Manifests carry no timestamps, so two runs
with the same inputs differ only in ``duration_s``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__


@dataclass
class RunManifest:
    command: str
    params_file: str | None
    options: dict[str, Any]
    seeds: list[int] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    params: dict[str, Any] | None = None
    version: str = __version__
    _start: float = field(default_factory=time.perf_counter, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "params_file": self.params_file,
            "params": self.params,
            "options": self.options,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "version": self.version,
            "duration_s": round(time.perf_counter() - self._start, 6),
        }


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: str | Path, payload: dict, manifest: RunManifest) -> Path:
    path = Path(path)
    manifest.outputs.append(str(path))
    doc = dict(payload)
    doc["manifest"] = manifest.to_dict()
    path.write_text(json.dumps(doc, indent=2, default=_plain) + "\n")
    return path


def write_csv(path: str | Path, header: Sequence[str], rows, manifest: RunManifest) -> Path:
    path = Path(path)
    manifest.outputs.append(str(path))
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    sidecar = path.with_name(path.name + ".manifest.json")
    sidecar.write_text(json.dumps(manifest.to_dict(), indent=2, default=_plain) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
