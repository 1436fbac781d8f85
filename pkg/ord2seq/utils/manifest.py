"""
Output records of the CLI and the run manifest.

Every file the CLI writes is produced from one of these models, and each has a
JSON schema under schemas/ describing the same fields.
"""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field

from utils.checkpoint import atomic_write_text, compute_file_hash

TOOL_VERSION = "1.0.0"

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "schemas"
MANIFEST_NAME = "manifest.json"


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=0)
    loss: float
    val_accuracy: float = Field(..., ge=0.0, le=1.0)
    val_mae: float = Field(..., ge=0.0)


class AdjacencyRow(BaseModel):
    category: int = Field(..., ge=0)
    support: int = Field(..., ge=0)
    correct: Optional[float] = None
    adjacent: Optional[float] = None
    other: Optional[float] = None


class MetricsReport(BaseModel):
    variant: str
    categories: int = Field(..., ge=2)
    alpha: float
    seed: int
    split: str = "test"
    accuracy: float = Field(..., ge=0.0, le=1.0)
    mae: float = Field(..., ge=0.0)
    confusion_matrix: List[List[int]]
    adjacency: List[AdjacencyRow]
    best_epoch: Optional[int] = None
    parameter_count: int = Field(..., ge=0)
    oracle_accuracy: Optional[float] = None
    oracle_mae: Optional[float] = None


class TraceRecord(BaseModel):
    sample: int = Field(..., ge=0)
    category: int = Field(..., ge=0)
    t: int = Field(..., ge=1)
    y_out: List[float]
    mask: List[float]
    y_prob: List[float]
    p_left: float
    p_right: float
    bit: int = Field(..., ge=0, le=1)


class SweepRow(BaseModel):
    alpha: float = Field(..., ge=0.0, le=1.0)
    seed: int
    accuracy: float = Field(..., ge=0.0, le=1.0)
    mae: float = Field(..., ge=0.0)


class RunSummary(BaseModel):
    seed: int
    accuracy: float
    mae: float
    adjacency: List[AdjacencyRow]


class MeanStd(BaseModel):
    mean: float
    std: float


class VariantSummary(BaseModel):
    variant: str
    accuracy: MeanStd
    mae: MeanStd
    adjacency: List[AdjacencyRow]
    runs: List[RunSummary]


class AblationReport(BaseModel):
    categories: int = Field(..., ge=2)
    alpha: float
    seeds: List[int]
    complete: bool
    completed: List[str]
    failed: Optional[str] = None
    variants: List[VariantSummary]


class RunManifest(BaseModel):
    tool_version: str = TOOL_VERSION
    command: str
    argv: List[str]
    config: Dict
    seeds: List[int] = Field(default_factory=list)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    data_hash: Optional[str] = None
    duration_seconds: float = Field(0.0, ge=0.0)
    torch_threads: int = 1
    substitutions: List[Dict] = Field(default_factory=list)
    cwd: Optional[str] = None
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


OUTPUT_MODELS = {
    "run_manifest": RunManifest,
    "metrics": MetricsReport,
    "epoch_log": EpochRecord,
    "ablation": AblationReport,
    "trace": TraceRecord,
    "sweep_row": SweepRow,
}


def load_schema(name: str) -> Dict:
    with open(SCHEMA_DIR / f"{name}.schema.json", "r", encoding="utf-8") as f:
        return json.load(f)


def write_record(path: Union[str, Path], record: BaseModel) -> str:
    return atomic_write_text(path, record.model_dump_json(indent=2) + "\n")


def write_jsonl(path: Union[str, Path], records: List[BaseModel]) -> str:
    return atomic_write_text(path, "".join(r.model_dump_json() + "\n" for r in records))


def write_manifest(out_dir: Union[str, Path], manifest: RunManifest) -> str:
    return write_record(Path(out_dir) / MANIFEST_NAME, manifest)


def load_manifest(path: Union[str, Path]) -> RunManifest:
    with open(path, "r", encoding="utf-8") as f:
        return RunManifest(**json.load(f))


def hash_data_path(path: Union[str, Path, None]) -> Optional[str]:
    """
    SHA-256 of a data file, or of the sorted per-file hashes of a dataset directory.

    A directory's own manifest.json is left out so generate, train and replay agree.
    """
    if path is None:
        return None
    path = Path(path)
    if path.is_file():
        return compute_file_hash(path)
    if not path.is_dir():
        return None
    digest = hashlib.sha256()
    for child in sorted(p for p in path.iterdir()
                        if p.is_file() and not p.name.startswith(".") and p.name != MANIFEST_NAME):
        digest.update(child.name.encode("utf-8"))
        digest.update(compute_file_hash(child).encode("ascii"))
    return digest.hexdigest()
