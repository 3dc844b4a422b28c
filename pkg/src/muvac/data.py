"""Synthetic sarcasm corpus, dataset files and the feature-directory format.

Matrix files come in two flavours, detected by content:

* raw binary: the 4-byte magic ``MVFM``, little-endian uint32 row and
  column counts, then row-major little-endian float32 values;
* dense text: comma-separated rows (``.csv``).

A feature directory holds ``manifest.csv`` with header
``id,label,expl_tokens,path_T,path_V,path_A`` (explanation ids space
separated, paths relative to the directory).  ``path_T`` is either an
n x 1 matrix of token ids or an n x d_in_t matrix of text features.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import BOS, EOS, NUM_SPECIAL, SPECIAL_TOKENS, MultimodalSample, Vocabulary

MAGIC = b"MVFM"
MANIFEST_HEADER = ["id", "label", "expl_tokens", "path_T", "path_V", "path_A"]

DEFAULT_TEMPLATES = {
    1: ("{S} mocks {T} by praising", "{S} ridicules {T} with fake enthusiasm"),
    0: ("{S} sincerely asks {T} for help", "{S} plainly tells {T} the fact"),
}


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_samples: int = 64
    sarcasm_rate: float = 0.5
    marker_token_id: int = NUM_SPECIAL
    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    noise_scale: float = 1.0
    seed: int = 0
    prototype_seed: int = 1234  # shared by every split drawn from this generator
    vocab_size: int = 128
    min_text_len: int = 6
    max_text_len: int = 16
    min_frames: int = 2
    max_frames: int = 8
    d_in_v: int = 16
    d_in_a: int = 16
    n_speakers: int = 8
    n_targets: int = 8

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("invalid corpus spec: " + "; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        if not 0.0 < self.sarcasm_rate < 1.0:
            errors.append("sarcasm_rate must lie in (0, 1)")
        if not self.templates.get(0) or not self.templates.get(1):
            errors.append("templates for both labels must be non-empty")
        if not 3 <= self.min_text_len <= self.max_text_len:
            errors.append("need 3 <= min_text_len <= max_text_len")
        if not 1 <= self.min_frames <= self.max_frames:
            errors.append("need 1 <= min_frames <= max_frames")
        if self.num_samples < 0:
            errors.append("num_samples must be >= 0")
        try:
            build_vocabulary(self)
        except ValueError as exc:
            errors.append(str(exc))
        return errors


def _template_words(templates) -> list[str]:
    words = []
    for label in (1, 0):
        for tpl in templates[label]:
            for w in tpl.split():
                if w not in ("{S}", "{T}") and w not in words:
                    words.append(w)
    return words


def build_vocabulary(spec: SyntheticCorpusSpec) -> Vocabulary:
    """Specials, marker, speakers, targets, template words, then filler up to vocab_size."""
    tokens = list(SPECIAL_TOKENS)
    if spec.marker_token_id != len(tokens):
        raise ValueError(f"marker_token_id must be {len(tokens)} (first free id)")
    tokens.append("<sarcasm-cue>")
    tokens += [f"spk{i}" for i in range(spec.n_speakers)]
    tokens += [f"tgt{i}" for i in range(spec.n_targets)]
    tokens += [w for w in _template_words(spec.templates) if w not in tokens]
    if len(tokens) >= spec.vocab_size:
        raise ValueError(f"vocab_size {spec.vocab_size} leaves no filler tokens")
    tokens += [f"w{i}" for i in range(spec.vocab_size - len(tokens))]
    return Vocabulary(tokens)


def _prototypes(spec: SyntheticCorpusSpec):
    rng = np.random.default_rng(spec.prototype_seed)
    return (rng.standard_normal((2, spec.d_in_v)).astype(np.float32),
            rng.standard_normal((2, spec.d_in_a)).astype(np.float32))


def generate_synthetic_dataset(spec: SyntheticCorpusSpec) -> list[MultimodalSample]:
    """Labels follow the marker rule; explanations fill a class template."""
    vocab = build_vocabulary(spec)
    rng = np.random.default_rng(spec.seed)
    proto_v, proto_a = _prototypes(spec)
    filler = [i for i, t in enumerate(vocab.tokens) if t[0] == "w" and t[1:].isdigit()]
    samples = []
    for idx in range(spec.num_samples):
        label = int(rng.random() < spec.sarcasm_rate)
        n = int(rng.integers(spec.min_text_len, spec.max_text_len + 1))
        speaker = int(rng.integers(spec.n_speakers))
        target = int(rng.integers(spec.n_targets))
        s_id, t_id = vocab.id(f"spk{speaker}"), vocab.id(f"tgt{target}")
        body = [int(x) for x in rng.choice(filler, size=n - 2)]
        if label:
            body[int(rng.integers(len(body)))] = spec.marker_token_id
        text = tuple([s_id, t_id] + body)
        # Template choice is a function of the input, so explanations are learnable.
        options = spec.templates[label]
        words = options[speaker % len(options)].replace("{S}", f"spk{speaker}") \
                                               .replace("{T}", f"tgt{target}").split()
        expl = (BOS, *(vocab.id(w) for w in words), EOS)
        frames = int(rng.integers(spec.min_frames, spec.max_frames + 1))
        visual = proto_v[label] + spec.noise_scale * rng.standard_normal(
            (frames, spec.d_in_v)).astype(np.float32)
        acoustic = proto_a[label] + spec.noise_scale * rng.standard_normal(
            (1, spec.d_in_a)).astype(np.float32)
        samples.append(MultimodalSample(text, visual.astype(np.float32),
                                        acoustic.astype(np.float32), label, expl,
                                        sample_id=f"s{spec.seed}-{idx:05d}"))
    return samples


# -- dataset files -------------------------------------------------------------


def save_dataset(samples: Iterable[MultimodalSample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            row = {"id": s.sample_id, "label": s.label, "text": list(s.text_tokens),
                   "visual": np.asarray(s.visual).tolist(),
                   "acoustic": np.asarray(s.acoustic).tolist(),
                   "explanation": list(s.gt_explanation)}
            if s.text_features is not None:
                row["text_features"] = np.asarray(s.text_features).tolist()
            fh.write(json.dumps(row) + "\n")


def load_dataset(path: str | Path) -> list[MultimodalSample]:
    path = Path(path)
    if path.is_dir():
        return ingest_features(path)
    samples = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        tf = row.get("text_features")
        samples.append(MultimodalSample(
            tuple(row["text"]), np.asarray(row["visual"], dtype=np.float32),
            np.asarray(row["acoustic"], dtype=np.float32), int(row["label"]),
            tuple(row["explanation"]), sample_id=row["id"],
            text_features=None if tf is None else np.asarray(tf, dtype=np.float32)))
    return samples


def save_spec(spec: SyntheticCorpusSpec, path: str | Path) -> None:
    d = asdict(spec)
    d["templates"] = {str(k): list(v) for k, v in spec.templates.items()}
    Path(path).write_text(json.dumps(d, indent=2))


# -- matrix files --------------------------------------------------------------


def write_matrix(path: str | Path, array: np.ndarray) -> None:
    array = np.atleast_2d(np.asarray(array, dtype=np.float32))
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, array, delimiter=",", fmt="%.9g")
        return
    rows, cols = array.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", rows, cols))
        fh.write(array.astype("<f4").tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        rows, cols = struct.unpack("<II", raw[4:12])
        data = np.frombuffer(raw[12:], dtype="<f4")
        if data.size != rows * cols:
            raise ValueError(f"{path}: header says {rows}x{cols}, found {data.size} values")
        return data.reshape(rows, cols).astype(np.float32)
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2))


# -- feature directories ------------------------------------------------------


class FeatureIngestError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("feature ingest failed:\n  " + "\n  ".join(self.errors))


def export_features(samples: Sequence[MultimodalSample], directory: str | Path,
                    suffix: str = ".bin") -> Path:
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for i, s in enumerate(samples):
            sid = s.sample_id or f"sample{i:05d}"
            paths = [f"features/{sid}_{m}{suffix}" for m in "TVA"]
            text = (s.text_features if s.text_features is not None
                    else np.asarray(s.text_tokens, dtype=np.float32)[:, None])
            for rel, arr in zip(paths, (text, s.visual, s.acoustic)):
                write_matrix(directory / rel, arr)
            writer.writerow([sid, s.label, " ".join(map(str, s.gt_explanation)), *paths])
    return directory / "manifest.csv"


def ingest_features(directory: str | Path, d_in_v: Optional[int] = None,
                    d_in_a: Optional[int] = None, d_in_t: int = 0) -> list[MultimodalSample]:
    """Load a feature directory; every problem is collected before raising.

    ``d_in_t == 0`` means path_T holds token ids (an n x 1 integer matrix).
    """
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise FeatureIngestError([f"{manifest}: missing manifest"])
    errors: list[str] = []
    samples = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise FeatureIngestError([f"{manifest}: header must be {','.join(MANIFEST_HEADER)}"])
        for lineno, row in enumerate(reader, start=2):
            missing = [k for k in MANIFEST_HEADER if not (row.get(k) or "").strip()]
            if missing:
                errors.append(f"manifest line {lineno}: missing {', '.join(missing)}")
                continue
            mats = {}
            before = len(errors)
            for key, want in (("path_T", d_in_t if d_in_t else 1), ("path_V", d_in_v),
                              ("path_A", d_in_a)):
                path = directory / row[key]
                if not path.exists():
                    errors.append(f"{path}: file not found")
                    continue
                try:
                    mats[key] = read_matrix(path)
                except ValueError as exc:
                    errors.append(str(exc))
                    continue
                if want is not None and mats[key].shape[1] != want:
                    errors.append(f"{path}: width {mats[key].shape[1]} != declared {want}")
            if len(errors) > before:
                continue
            t = mats["path_T"]
            if d_in_t:
                tokens, features = (), t
            else:
                if not np.all(t == np.round(t)):
                    errors.append(f"{directory / row['path_T']}: token ids must be integers")
                    continue
                tokens, features = tuple(int(x) for x in t[:, 0]), None
            try:
                samples.append(MultimodalSample(
                    tokens, mats["path_V"], mats["path_A"], int(row["label"]),
                    tuple(int(x) for x in row["expl_tokens"].split()),
                    sample_id=row["id"], text_features=features))
            except ValueError as exc:
                errors.append(f"manifest line {lineno}: {exc}")
    if errors:
        raise FeatureIngestError(errors)
    return samples
