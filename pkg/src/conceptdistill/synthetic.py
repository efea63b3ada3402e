"""Synthetic unpaired two-modality datasets with teacher-dominant structure.

Each class activates a fixed block of concepts. Concept activations map to
feature vectors through one mixing matrix per modality; a configurable
fraction of each class's concepts is attenuated in the student modality
only, so the teacher stream carries signal the student sees faintly. The
attenuation is 0.1 rather than 0: the student must retain a weak correlate
of every concept or no amount of guidance could transfer it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .concepts import Concept, ConceptPool

MODALITIES = ("student", "teacher")
SPLITS = ("train", "val", "test")

DEFAULT_CLASS_NAMES = [
    "normal", "dAMD", "CSC", "DR", "GLC", "MEM", "MYO", "RVO", "wAMD",
]

# per-class record counts, coarsely mirroring a long-tailed 9-class corpus
DEFAULT_COUNTS = {
    "student": {
        "train": [700, 90, 30, 480, 60, 30, 45, 45, 50],
        "val": [150, 25, 12, 110, 25, 12, 18, 18, 22],
        "test": [180, 30, 15, 130, 30, 15, 25, 25, 30],
    },
    "teacher": {
        "train": [650, 40, 90, 520, 30, 100, 40, 80, 60],
        "val": [150, 25, 12, 110, 25, 12, 18, 18, 22],
        "test": [180, 30, 15, 130, 30, 15, 25, 25, 30],
    },
}


@dataclass
class GeneratorConfig:
    num_classes: int = 9
    concepts_per_class: int = 10
    feature_dim: int = 32
    embed_dim: int = 16
    teacher_dominance: float = 0.6  # fraction of concepts attenuated for the student
    attenuation: float = 0.1
    noise_sigma: float = 0.55
    seed: int = 0
    class_names: list[str] = field(default_factory=lambda: list(DEFAULT_CLASS_NAMES))
    counts: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_COUNTS)))

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.concepts_per_class < 1:
            raise ValueError("concepts_per_class must be >= 1")
        if not 0.0 <= self.teacher_dominance <= 1.0:
            raise ValueError("teacher_dominance must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if len(self.class_names) != self.num_classes:
            raise ValueError(
                f"{len(self.class_names)} class names for {self.num_classes} classes"
            )
        for modality in MODALITIES:
            for split in SPLITS:
                counts = self.counts[modality][split]
                if len(counts) != self.num_classes:
                    raise ValueError(f"counts[{modality}][{split}] must list every class")
                if any(c < 0 for c in counts):
                    raise ValueError("negative sample count")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "concepts_per_class": self.concepts_per_class,
            "feature_dim": self.feature_dim,
            "embed_dim": self.embed_dim,
            "teacher_dominance": self.teacher_dominance,
            "attenuation": self.attenuation,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "class_names": list(self.class_names),
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GeneratorConfig":
        return cls(**payload)


@dataclass
class SampleRecord:
    modality: str
    features: np.ndarray
    label: int
    split: str
    index: int | None  # None for external files without explicit indices

    def __eq__(self, other):
        return (
            isinstance(other, SampleRecord)
            and self.modality == other.modality
            and self.label == other.label
            and self.split == other.split
            and self.index == other.index
            and np.array_equal(self.features, other.features)
        )


@dataclass
class GroundTruth:
    class_profiles: np.ndarray  # C x N binary activation patterns
    teacher_dominant: list[list[int]]  # per class, global concept indices
    mixing_student: np.ndarray  # N x F
    mixing_teacher: np.ndarray  # N x F

    def __eq__(self, other):
        return (
            isinstance(other, GroundTruth)
            and np.array_equal(self.class_profiles, other.class_profiles)
            and self.teacher_dominant == other.teacher_dominant
            and np.array_equal(self.mixing_student, other.mixing_student)
            and np.array_equal(self.mixing_teacher, other.mixing_teacher)
        )


@dataclass
class SyntheticDataset:
    config: GeneratorConfig
    records: list[SampleRecord]
    ground_truth: GroundTruth

    def split_arrays(self, modality: str, split: str) -> tuple[np.ndarray, np.ndarray]:
        """(features, labels) for one modality and split, in record order."""
        rows = [r for r in self.records if r.modality == modality and r.split == split]
        if not rows:
            return np.zeros((0, self.config.feature_dim)), np.zeros(0, dtype=np.int64)
        x = np.stack([r.features for r in rows])
        y = np.array([r.label for r in rows], dtype=np.int64)
        return x, y

    def __eq__(self, other):
        return (
            isinstance(other, SyntheticDataset)
            and self.config.to_dict() == other.config.to_dict()
            and self.records == other.records
            and self.ground_truth == other.ground_truth
        )


def generate(cfg: GeneratorConfig) -> tuple[SyntheticDataset, ConceptPool]:
    """Deterministically build (dataset, pool) from the config and its seed."""
    rng = np.random.default_rng(cfg.seed)
    c, k = cfg.num_classes, cfg.concepts_per_class
    n = c * k

    embeddings = rng.standard_normal((n, cfg.embed_dim))
    embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
    concepts = []
    for d, name in enumerate(cfg.class_names):
        for j in range(k):
            concepts.append(
                Concept(
                    id=f"{name}.concept{j}",
                    class_hint=name,
                    text=f"synthetic marker {j} associated with {name}",
                    embedding=embeddings[d * k + j],
                )
            )
    pool = ConceptPool(concepts, cfg.embed_dim)

    profiles = np.zeros((c, n))
    for d in range(c):
        profiles[d, d * k:(d + 1) * k] = 1.0

    n_dom = int(round(cfg.teacher_dominance * k))
    dominant: list[list[int]] = []
    for d in range(c):
        local = rng.choice(k, size=n_dom, replace=False)
        dominant.append(sorted(int(d * k + j) for j in local))

    # one anatomy, two views: the same concept rows drive both modalities,
    # but teacher-dominant rows reach the student 10x attenuated
    mixing_teacher = rng.standard_normal((n, cfg.feature_dim)) / np.sqrt(cfg.feature_dim)
    mixing_student = mixing_teacher.copy()
    for rows in dominant:
        mixing_student[rows] *= cfg.attenuation

    mixing = {"student": mixing_student, "teacher": mixing_teacher}
    records: list[SampleRecord] = []
    index = 0
    for modality in MODALITIES:
        for split in SPLITS:
            for d in range(c):
                count = cfg.counts[modality][split][d]
                if count == 0:
                    continue
                clean = profiles[d] @ mixing[modality]
                noise = cfg.noise_sigma * rng.standard_normal((count, cfg.feature_dim))
                feats = clean[None, :] + noise
                for i in range(count):
                    records.append(
                        SampleRecord(
                            modality=modality,
                            features=feats[i],
                            label=d,
                            split=split,
                            index=index,
                        )
                    )
                    index += 1

    ground_truth = GroundTruth(
        class_profiles=profiles,
        teacher_dominant=dominant,
        mixing_student=mixing_student,
        mixing_teacher=mixing_teacher,
    )
    return SyntheticDataset(config=cfg, records=records, ground_truth=ground_truth), pool


# --- directory format -------------------------------------------------------


def write_dataset(ds: SyntheticDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": ds.config.to_dict(),
        "ground_truth": {
            "class_profiles": ds.ground_truth.class_profiles.tolist(),
            "teacher_dominant": ds.ground_truth.teacher_dominant,
            "mixing_student": ds.ground_truth.mixing_student.tolist(),
            "mixing_teacher": ds.ground_truth.mixing_teacher.tolist(),
        },
    }
    with open(directory / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    for split in SPLITS:
        with open(directory / f"{split}.jsonl", "w", encoding="utf-8") as f:
            for r in ds.records:
                if r.split != split:
                    continue
                f.write(json.dumps({
                    "modality": r.modality,
                    "features": r.features.tolist(),
                    "label": r.label,
                    "index": r.index,
                }))
                f.write("\n")


def _parse_record(line: str, lineno: int, split: str, path: Path) -> SampleRecord:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}:{lineno}: malformed JSONL record: {e}") from e
    try:
        modality = payload["modality"]
        features = np.asarray(payload["features"], dtype=np.float64)
        label = int(payload["label"])
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"{path}:{lineno}: record violates schema: {e}") from e
    if modality not in MODALITIES:
        raise ValueError(f"{path}:{lineno}: unknown modality {modality!r}")
    if features.ndim != 1 or not np.all(np.isfinite(features)):
        raise ValueError(f"{path}:{lineno}: features must be a finite 1-D vector")
    index = payload.get("index")
    return SampleRecord(
        modality=modality,
        features=features,
        label=label,
        split=split,
        index=int(index) if index is not None else None,
    )


def read_dataset(directory) -> SyntheticDataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing dataset file: {meta_path}")
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    cfg = GeneratorConfig.from_dict(meta["config"])
    gt = meta["ground_truth"]
    ground_truth = GroundTruth(
        class_profiles=np.asarray(gt["class_profiles"], dtype=np.float64),
        teacher_dominant=[[int(i) for i in row] for row in gt["teacher_dominant"]],
        mixing_student=np.asarray(gt["mixing_student"], dtype=np.float64),
        mixing_teacher=np.asarray(gt["mixing_teacher"], dtype=np.float64),
    )
    records: list[SampleRecord] = []
    seen: dict[int, str] = {}
    for split in SPLITS:
        path = directory / f"{split}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing dataset file: {path}")
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                rec = _parse_record(line, lineno, split, path)
                if rec.label < 0 or rec.label >= cfg.num_classes:
                    raise ValueError(f"{path}:{lineno}: label outside [0, {cfg.num_classes})")
                if rec.index is not None:
                    if rec.index in seen and seen[rec.index] != split:
                        raise ValueError(
                            f"record index {rec.index} appears in splits "
                            f"{seen[rec.index]!r} and {split!r}"
                        )
                    seen[rec.index] = split
                records.append(rec)
    if all(r.index is not None for r in records):
        records.sort(key=lambda r: r.index)  # restore generation order
    return SyntheticDataset(config=cfg, records=records, ground_truth=ground_truth)


def pool_embeddings_from_dataset(ds: SyntheticDataset) -> np.ndarray:
    """Regenerate the pool deterministically; used where only the dataset dir is at hand."""
    rng = np.random.default_rng(ds.config.seed)
    emb = rng.standard_normal((ds.config.num_classes * ds.config.concepts_per_class,
                               ds.config.embed_dim))
    return emb / np.linalg.norm(emb, axis=1, keepdims=True)
