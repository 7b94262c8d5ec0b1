"""Run manifests: reproducibility receipts written next to outputs.

Every CLI run that produces files also writes `<primary-output>.manifest.json`
recording the resolved arguments, a hash of the configuration, the seeds,
and SHA-256 digests of each input and output file.  Two runs with the same
inputs, flags, and seeds must produce outputs with identical digests; the
manifest is the evidence.  The manifest itself carries a wall-clock
timestamp, so manifests are compared by their digest maps, not by their
own bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone

from . import __version__


@dataclass(frozen=True)
class RunManifest:
    command: str
    version: str
    config_hash: str
    args: dict
    seeds: dict
    inputs: dict  # path -> sha256 hex digest
    outputs: dict  # path -> sha256 hex digest
    created_utc: str


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(command: str, args: dict, seeds: dict) -> str:
    """Hash of the canonical JSON form of a run's configuration."""
    canon = json.dumps(
        {"command": command, "args": args, "seeds": seeds},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def build_manifest(command: str, args: dict, seeds: dict,
                   inputs, outputs) -> RunManifest:
    """Digest the named input and output files into a manifest record."""
    return RunManifest(
        command=command,
        version=__version__,
        config_hash=config_hash(command, args, seeds),
        args=dict(args),
        seeds=dict(seeds),
        inputs={str(p): file_digest(p) for p in inputs},
        outputs={str(p): file_digest(p) for p in outputs},
        created_utc=datetime.now(timezone.utc).isoformat(),
    )


def manifest_path(primary_output) -> str:
    return f"{primary_output}.manifest.json"


def write_manifest(manifest: RunManifest, primary_output) -> str:
    """Write next to the primary output; returns the manifest path."""
    path = manifest_path(primary_output)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def read_manifest(path) -> RunManifest:
    with open(path, encoding="utf-8") as fh:
        return RunManifest(**json.load(fh))
