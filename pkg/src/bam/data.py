"""Dataset ingestion, the binary feature format, and synthetic data.

The on-disk layout mirrors common moment-retrieval releases: a JSON-lines
annotation file plus per-sample video/text feature files in a simple
binary format (magic "BAMF", u32 rows, u32 cols, float32 row-major,
little-endian).
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .intervals import MomentSpan

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"BAMF"


@dataclass
class Sample:
    """One video-sentence pair with precomputed features."""

    qid: str
    duration: float  # seconds
    video_feats: np.ndarray  # (N_v, D_v) float32
    text_feats: np.ndarray   # (N_t, D_t) float32
    gt_spans: list[MomentSpan]  # normalized by duration
    saliency_labels: np.ndarray | None = None  # (N_v,)

    def __post_init__(self):
        if self.video_feats.ndim != 2 or self.video_feats.shape[0] < 1:
            raise ValueError(f"sample {self.qid}: video features must be a nonempty matrix")
        if self.text_feats.ndim != 2 or self.text_feats.shape[0] < 1:
            raise ValueError(f"sample {self.qid}: text features must be a nonempty matrix")
        if not self.gt_spans:
            raise ValueError(f"sample {self.qid}: needs at least one ground-truth span")
        if self.saliency_labels is not None and len(self.saliency_labels) != self.num_clips:
            raise ValueError(
                f"sample {self.qid}: {len(self.saliency_labels)} saliency labels "
                f"for {self.num_clips} clips")

    @property
    def num_clips(self) -> int:
        return self.video_feats.shape[0]


@dataclass
class Dataset:
    samples: list[Sample]
    name: str = "synthetic"
    split: str = "train"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def has_saliency_labels(self) -> bool:
        return all(s.saliency_labels is not None for s in self.samples)


def write_feature_file(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim != 2:
        raise ValueError("feature arrays must be 2-dimensional")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", array.shape[0], array.shape[1]))
        fh.write(array.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated feature file")
    return data.reshape(rows, cols).copy()


def _subsample_indices(n: int, max_clips: int) -> np.ndarray:
    return np.round(np.linspace(0, n - 1, max_clips)).astype(int)


def load_dataset(annotations_path: str | Path, features_dir: str | Path,
                 max_clips: int | None = None, name: str = "dataset",
                 split: str = "train") -> Dataset:
    """Load a JSON-lines annotation file plus its BAMF feature files."""
    annotations_path = Path(annotations_path)
    features_dir = Path(features_dir)
    samples = []
    for lineno, line in enumerate(annotations_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            qid = str(record["qid"])
            duration = float(record["duration"])
            windows = record["relevant_windows"]
            vid = record["vid"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{annotations_path}:{lineno}: malformed annotation: {exc}") from exc

        video_path = features_dir / f"{vid}.video.bamf"
        text_path = features_dir / f"{vid}.text.bamf"
        for path in (video_path, text_path):
            if not path.exists():
                raise FileNotFoundError(f"sample {qid}: missing feature file {path}")
        video_feats = read_feature_file(video_path)
        text_feats = read_feature_file(text_path)

        saliency = record.get("saliency_scores")
        if saliency is not None:
            saliency = np.asarray(saliency, dtype=np.float32)
        if max_clips is not None and video_feats.shape[0] > max_clips:
            idx = _subsample_indices(video_feats.shape[0], max_clips)
            video_feats = video_feats[idx]
            if saliency is not None:
                saliency = saliency[idx]

        spans = []
        for start, end in windows:
            if end > duration:
                log.warning("sample %s: window end %.3f exceeds duration %.3f, clamping",
                            qid, end, duration)
                end = duration
            start = max(0.0, min(start, duration))
            spans.append(MomentSpan(start / duration, end / duration))
        samples.append(Sample(qid=qid, duration=duration, video_feats=video_feats,
                              text_feats=text_feats, gt_spans=spans,
                              saliency_labels=saliency))
    return Dataset(samples=samples, name=name, split=split)


def write_dataset(dataset: Dataset, out_dir: str | Path, clip_stride: float | None = None) -> None:
    """Serialize a dataset to annotations.jsonl plus a features/ directory."""
    out_dir = Path(out_dir)
    features = out_dir / "features"
    features.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "annotations.jsonl", "w") as fh:
        for sample in dataset.samples:
            record = {
                "qid": sample.qid,
                "duration": sample.duration,
                "relevant_windows": [
                    [span.t_s * sample.duration, span.t_e * sample.duration]
                    for span in sample.gt_spans],
                "vid": sample.qid,
            }
            if sample.saliency_labels is not None:
                record["saliency_scores"] = [float(x) for x in sample.saliency_labels]
            fh.write(json.dumps(record) + "\n")
            write_feature_file(features / f"{sample.qid}.video.bamf", sample.video_feats)
            write_feature_file(features / f"{sample.qid}.text.bamf", sample.text_feats)


@dataclass
class SyntheticSpec:
    """Difficulty knobs for the synthetic benchmark generator."""

    n_clips_range: tuple[int, int] = (40, 80)
    n_moments_range: tuple[int, int] = (1, 2)
    noise_level: float = 0.3
    feat_dim: int = 32
    text_len_range: tuple[int, int] = (4, 8)
    clip_stride: float = 2.0
    center_dip: float = 0.4  # saliency/feature dip at moment centers
    with_saliency: bool = True


def generate_synthetic(n_samples: int, seed: int,
                       spec: SyntheticSpec | None = None) -> Dataset:
    """Plant 1-3 signal-bearing moments per video; text carries the signal.

    Video features are background noise outside the ground truths and a
    sample-specific signal pattern inside them; moment centers optionally
    dip back toward background to emulate center ambiguity. Deterministic
    given the seed.
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        n_v = int(rng.integers(spec.n_clips_range[0], spec.n_clips_range[1] + 1))
        duration = n_v * spec.clip_stride
        n_m = int(rng.integers(spec.n_moments_range[0], spec.n_moments_range[1] + 1))

        signal = rng.normal(size=spec.feat_dim)
        background = rng.normal(size=spec.feat_dim)

        chunk = n_v // n_m
        spans_clips = []
        for k in range(n_m):
            max_len = max(3, chunk // 2)
            min_len = min(max(2, chunk // 8), max_len)
            length = int(rng.integers(min_len, max_len + 1))
            start = k * chunk + int(rng.integers(0, chunk - length + 1))
            spans_clips.append((start, start + length))

        video = background + rng.normal(scale=spec.noise_level, size=(n_v, spec.feat_dim))
        labels = np.zeros(n_v, dtype=np.float32)
        for start, end in spans_clips:
            inside = slice(start, end)
            video[inside] = signal + rng.normal(
                scale=spec.noise_level, size=(end - start, spec.feat_dim))
            labels[inside] = 1.0
            if spec.center_dip > 0.0 and end - start >= 3:
                mid = (start + end) // 2
                video[mid] = ((1.0 - spec.center_dip) * signal
                              + spec.center_dip * background
                              + rng.normal(scale=spec.noise_level, size=spec.feat_dim))
                labels[mid] = 1.0 - spec.center_dip

        n_t = int(rng.integers(spec.text_len_range[0], spec.text_len_range[1] + 1))
        text = signal + rng.normal(scale=0.1, size=(n_t, spec.feat_dim))

        samples.append(Sample(
            qid=f"synth_{i:04d}",
            duration=float(duration),
            video_feats=video.astype(np.float32),
            text_feats=text.astype(np.float32),
            gt_spans=[MomentSpan(s / n_v, e / n_v) for s, e in spans_clips],
            saliency_labels=labels if spec.with_saliency else None,
        ))
    return Dataset(samples=samples, name="synthetic", split="train")
