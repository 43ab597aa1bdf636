"""On-disk layout of a synthetic challenge dataset and run manifests.

::

    DATA/{split}/{case}/{modality}/ref_image.cxa
                                   full_kspace.cxa
                                   csm.cxa
                                   mask_{pattern}_af{af}.cxa (+ .json sidecar)
                                   kspace_{pattern}_af{af}.cxa
    PRED/{split}/{case}/{modality}/recon_{pattern}_af{af}.cxa
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import __version__

SPLITS = ("train", "val", "test")
SPLIT_WEIGHTS = (200, 60, 70)
MANIFEST = "manifest.json"
THREADS_ENV = "KSPACE_BENCH_THREADS"


def split_counts(n_cases: int, weights=SPLIT_WEIGHTS) -> dict:
    """Largest-remainder apportionment of ``n_cases`` over train/val/test.

    Remainder ties go to the earlier split.
    """
    total = sum(weights)
    quotas = [n_cases * w / total for w in weights]
    counts = [int(q) for q in quotas]
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n_cases - sum(counts)]:
        counts[i] += 1
    return dict(zip(SPLITS, counts))


def case_name(index: int) -> str:
    return f"case{index:04d}"


def case_seed(seed: int, index: int) -> int:
    """Per-case 64-bit seed derived from the run seed."""
    state = np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def mask_name(pattern: str, af: int) -> str:
    return f"mask_{pattern}_af{af}.cxa"


def kspace_name(pattern: str, af: int) -> str:
    return f"kspace_{pattern}_af{af}.cxa"


def recon_name(pattern: str, af: int) -> str:
    return f"recon_{pattern}_af{af}.cxa"


@dataclass(frozen=True)
class CaseDir:
    root: Path
    split: str
    case_id: str
    modality: str

    @property
    def path(self) -> Path:
        return self.root / self.split / self.case_id / self.modality

    def relative(self) -> Path:
        return Path(self.split) / self.case_id / self.modality

    def under(self, other_root) -> Path:
        return Path(other_root) / self.relative()


def iter_cases(root, split: Optional[str] = None) -> Iterator[CaseDir]:
    """All case/modality directories holding a reference image, in sorted order."""
    root = Path(root)
    splits = [split] if split else SPLITS
    for sp in splits:
        base = root / sp
        if not base.is_dir():
            continue
        for case in sorted(p for p in base.iterdir() if p.is_dir()):
            for mod in sorted(p for p in case.iterdir() if p.is_dir()):
                if (mod / "ref_image.cxa").is_file():
                    yield CaseDir(root, sp, case.name, mod.name)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digests(paths, root) -> dict:
    root = Path(root)
    out = {}
    for p in sorted(Path(p) for p in paths):
        if p.is_file():
            try:
                key = str(p.relative_to(root))
            except ValueError:
                key = str(p)
            out[key] = sha256(p)
    return out


def write_manifest(out_dir, subcommand: str, params: dict, seeds=None,
                   inputs=(), outputs=(), extra: Optional[dict] = None,
                   name: str = MANIFEST) -> Path:
    out_dir = Path(out_dir)
    manifest = dict(
        toolkit="kspace_bench",
        version=__version__,
        subcommand=subcommand,
        parameters=params,
        seeds=seeds or {},
        generator="numpy.random.Generator(PCG64)",
        numpy=np.__version__,
        python=platform.python_version(),
        inputs=digests(inputs, out_dir),
        outputs=digests(outputs, out_dir),
    )
    if extra:
        manifest.update(extra)
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
    return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def worker_count() -> int:
    """CPU count, capped by KSPACE_BENCH_THREADS when set."""
    n = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n
