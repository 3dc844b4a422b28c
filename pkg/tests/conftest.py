import os
from pathlib import Path

import pytest
import torch
from hypothesis import HealthCheck, settings

from muvac.core import ModelConfig, load_config, seeded_rng
from muvac.data import SyntheticCorpusSpec, generate_synthetic_dataset
from muvac.model import MuVaC, collate

ROOT = Path(__file__).resolve().parent.parent
DATA = Path(__file__).resolve().parent / "data"

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)


# -- shared objects ------------------------------------------------------------


@pytest.fixture(scope="session")
def overfit_cfg() -> ModelConfig:
    return load_config(ROOT / "configs" / "overfit.yaml")


@pytest.fixture(scope="session")
def train_set():
    return generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=64, seed=0))


@pytest.fixture(scope="session")
def held_out_set():
    return generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=64, seed=1))


@pytest.fixture(scope="session")
def trained(overfit_cfg, train_set):
    """The 100-epoch overfit run shared by every test that needs a trained model."""
    from muvac.train import train

    return train(overfit_cfg, train_set)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(d=8, d_F=4, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
                       n_latent_layers=1, atf_insertion_layer=1, max_expl_len=8, batch_size=4)


@pytest.fixture
def tiny_model(tiny_cfg):
    return MuVaC(tiny_cfg, seeded_rng(0)).double()


@pytest.fixture
def tiny_batch(train_set):
    return collate(train_set[:4], torch.float64)


# -- acceptance summary ------------------------------------------------------------

_CRITERIA = {
    "a1": "A1 KL closed form vs Monte-Carlo",
    "a2": "A2 gradient audit",
    "a3": "A3 overfit",
    "a4": "A4 causal-effect direction",
    "a5": "A5 intervention rate",
    "a6": "A6 reparameterisation statistics",
    "a7": "A7 ELBO sanity",
    "a8": "A8 keyframe algorithm",
    "a9": "A9 metrics oracle",
    "a10": "A10 determinism and persistence",
}
_results: dict[str, list] = {}


def _criterion(nodeid: str):
    if "test_acceptance.py::test_" not in nodeid:
        return None
    key = nodeid.split("::test_", 1)[1].split("_", 1)[0]
    return key if key in _CRITERIA else None


def pytest_runtest_logreport(report):
    key = _criterion(report.nodeid)
    if key is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        _results.setdefault(key, []).append((report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key, title in _CRITERIA.items():
        runs = _results.get(key)
        if runs is None:
            continue
        ok = all(outcome == "passed" for outcome, _ in runs)
        details = "; ".join(d for _, d in runs if d)
        line = f"{'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  [{details}]" if details else line)
