import os
from pathlib import Path

import pytest
import torch
from hypothesis import HealthCheck, settings

from fgscodec import ModelConfig, ScalableCodec

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=20, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


def tiny_config(**kw) -> ModelConfig:
    base = dict(C1=4, C2=4, N_hidden=8, hyper_channels=4)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed: int = 0, **kw) -> ScalableCodec:
    torch.manual_seed(seed)
    return ScalableCodec(tiny_config(**kw)).eval()


@pytest.fixture
def tiny():
    return tiny_model()


@pytest.fixture
def image():
    g = torch.Generator().manual_seed(3)
    return torch.rand(1, 3, 32, 48, generator=g)


# Filled by the acceptance module, one line per criterion.
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for code in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
            terminalreporter.write_line(ACCEPTANCE[code])
