"""Variational causal inference for multimodal sarcasm detection and explanation."""

from .core import (BOS, CLS, EOS, PAD, DetectionOutput, ExplanationSequence, LatentGaussian,
                   ModelConfig, MultimodalSample, Vocabulary, load_config, seeded_rng,
                   validate_config)
from .data import SyntheticCorpusSpec, generate_synthetic_dataset
from .keyframes import select_keyframes
from .latent import InterventionPolicy, kl_diag_gaussians, sample_latent
from .metrics import classification_report, generation_report
from .model import MuVaC, collate
from .train import run_intervention_experiment, train

__version__ = "0.1.0"
