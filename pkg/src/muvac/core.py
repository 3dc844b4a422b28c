"""Shared domain types, configuration and seeded randomness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch
import yaml

PAD, BOS, EOS, CLS = 0, 1, 2, 3
NUM_SPECIAL = 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<cls>")


@dataclass(frozen=True)
class ModelConfig:
    # model
    d: int = 64
    d_F: int = 32
    d_c: Optional[int] = None  # context width; None means d
    n_heads: int = 2
    vocab_size: int = 128
    max_text_len: int = 16
    max_frames: int = 8
    max_expl_len: int = 10
    d_in_v: int = 16
    d_in_a: int = 16
    d_in_t: int = 0  # >0 when text arrives as precomputed feature rows
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    n_latent_layers: int = 2
    atf_insertion_layer: int = 2
    # causal inference
    epsilon: float = 0.1
    H: int = 1
    decode_mode: str = "greedy"
    beam_width: int = 4
    cache_generated: bool = False
    # optimisation
    lr_base: float = 1e-4
    lr_new: float = 1e-3
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0

    @property
    def context_dim(self) -> int:
        return self.d if self.d_c is None else self.d_c

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def validate_config(cfg: ModelConfig) -> list[str]:
    """Return every violated invariant of ``cfg``; an empty list means ok."""
    errors = []
    dims = ("d", "d_F", "n_heads", "vocab_size", "max_text_len", "max_frames",
            "max_expl_len", "d_in_v", "d_in_a", "n_decoder_layers",
            "n_latent_layers", "beam_width", "batch_size")
    for name in dims:
        if getattr(cfg, name) < 1:
            errors.append(f"{name} must be >= 1")
    if cfg.d_c is not None and cfg.d_c < 1:
        errors.append("d_c must be >= 1")
    if cfg.d_in_t < 0:
        errors.append("d_in_t must be >= 0")
    if cfg.n_heads >= 1 and cfg.d % cfg.n_heads != 0:
        errors.append(f"d not divisible by n_heads ({cfg.d} % {cfg.n_heads})")
    if not 0.0 <= cfg.epsilon <= 1.0:
        errors.append(f"epsilon out of range [0, 1]: {cfg.epsilon}")
    if cfg.H < 1:
        errors.append(f"H must be >= 1, got {cfg.H}")
    if cfg.n_encoder_layers < 0:
        errors.append("n_encoder_layers must be >= 0")
    if not 0 <= cfg.atf_insertion_layer <= cfg.n_encoder_layers:
        errors.append("atf_insertion_layer must lie in [0, n_encoder_layers]")
    if cfg.vocab_size <= NUM_SPECIAL:
        errors.append(f"vocab_size must exceed the {NUM_SPECIAL} reserved ids")
    if cfg.decode_mode not in ("greedy", "beam"):
        errors.append(f"unknown decode_mode {cfg.decode_mode!r}")
    if cfg.lr_base < 0 or cfg.lr_new < 0:
        errors.append("learning rates must be non-negative")
    if cfg.epochs < 0:
        errors.append("epochs must be >= 0")
    return errors


def check_config(cfg: ModelConfig) -> ModelConfig:
    errors = validate_config(cfg)
    if errors:
        raise ValueError("invalid config: " + "; ".join(errors))
    return cfg


def _coerce(value: str) -> Any:
    return yaml.safe_load(value)


def load_config(path: Optional[str | Path] = None,
                overrides: Sequence[str] = ()) -> ModelConfig:
    """Read a flat YAML mapping, then apply ``key=value`` overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a flat mapping")
        values.update(loaded)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(raw.strip())
    known = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    # YAML reads "1e-4" (no dot) as a string; float fields take it anyway.
    for f in fields(ModelConfig):
        if isinstance(f.default, float) and isinstance(values.get(f.name), (str, int)):
            try:
                values[f.name] = float(values[f.name])
            except ValueError:
                raise ValueError(f"{f.name} must be a number, got {values[f.name]!r}") from None
    return check_config(ModelConfig(**values))


def save_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def seeded_rng(seed: int) -> torch.Generator:
    """The one random stream a run draws from."""
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def split_rng(gen: torch.Generator, n: int) -> list[torch.Generator]:
    seeds = torch.randint(0, 2**62, (n,), generator=gen)
    return [seeded_rng(int(s)) for s in seeds]


@dataclass(frozen=True, eq=False)
class MultimodalSample:
    text_tokens: tuple[int, ...]
    visual: np.ndarray  # frames x d_in_v
    acoustic: np.ndarray  # 1 x d_in_a
    label: int
    gt_explanation: tuple[int, ...]  # BOS ... EOS
    sample_id: str = ""
    text_features: Optional[np.ndarray] = None  # n x d_in_t, replaces tokens

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError(f"sample {self.sample_id!r}: " + "; ".join(errors))

    def validate(self, vocab_size: Optional[int] = None) -> list[str]:
        errors = []
        if len(self.text_tokens) == 0 and self.text_features is None:
            errors.append("empty text")
        if self.label not in (0, 1):
            errors.append(f"label must be 0 or 1, got {self.label}")
        if np.ndim(self.visual) != 2 or len(self.visual) == 0:
            errors.append("visual must be a non-empty frames x features matrix")
        if np.ndim(self.acoustic) != 2 or np.shape(self.acoustic)[0] != 1:
            errors.append("acoustic must be a 1 x features matrix")
        if len(self.gt_explanation) < 2 or self.gt_explanation[0] != BOS:
            errors.append("explanation must start with BOS and hold at least one more token")
        if vocab_size is not None:
            ids = list(self.text_tokens) + list(self.gt_explanation)
            if any(t < 0 or t >= vocab_size for t in ids):
                errors.append("token id outside vocabulary")
        return errors

    @property
    def text_length(self) -> int:
        if self.text_features is not None:
            return len(self.text_features)
        return len(self.text_tokens)


@dataclass(frozen=True)
class ExplanationSequence:
    tokens: tuple[int, ...]
    is_ground_truth: bool = False

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != BOS:
            raise ValueError("explanation must begin with BOS")

    @property
    def content(self) -> tuple[int, ...]:
        """Tokens between BOS and the first EOS."""
        out = []
        for t in self.tokens[1:]:
            if t == EOS:
                break
            out.append(t)
        return tuple(out)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, eq=False)
class LatentGaussian:
    """N(mu, diag(exp(log_var))); the last axis is the latent dimension."""

    mu: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ValueError(f"mu {tuple(self.mu.shape)} and log_var "
                             f"{tuple(self.log_var.shape)} differ in shape")

    @property
    def var(self) -> torch.Tensor:
        return self.log_var.exp()

    @property
    def std(self) -> torch.Tensor:
        return (0.5 * self.log_var).exp()

    def validate(self) -> list[str]:
        errors = []
        if not bool(torch.isfinite(self.mu).all()):
            errors.append("non-finite mu")
        if not bool(torch.isfinite(self.log_var).all()):
            errors.append("non-finite log_var")
        return errors

    def select(self, mask: torch.Tensor, other: "LatentGaussian") -> "LatentGaussian":
        """Row-wise choice: rows where ``mask`` is true come from ``self``."""
        m = mask.unsqueeze(-1)
        return LatentGaussian(torch.where(m, self.mu, other.mu),
                              torch.where(m, self.log_var, other.log_var))

    def __getitem__(self, idx) -> "LatentGaussian":
        return LatentGaussian(self.mu[idx], self.log_var[idx])


SOURCES = ("generated", "ground_truth_intervened", "noise_intervened")


@dataclass(frozen=True)
class DetectionOutput:
    probs: tuple[float, float]
    explanation_used: Optional[ExplanationSequence]
    source: str = "generated"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if min(self.probs) < 0 or abs(sum(self.probs) - 1.0) > 1e-6:
            raise ValueError(f"probs must be a distribution, got {self.probs}")

    @property
    def predicted_label(self) -> int:
        return int(self.probs[1] > self.probs[0])


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=lambda: list(SPECIAL_TOKENS))

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index[token]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls([line for line in Path(path).read_text().splitlines() if line])
