"""Shared pytest fixtures."""

import pytest

from typegram.config import CONFIG_ENV_VAR
from typegram.corpus.types import TypeLibrary

from tests.factories import make_type_library


@pytest.fixture(autouse=True)
def _no_config_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)


@pytest.fixture
def type_library() -> TypeLibrary:
    """Type library with every kind the metrics distinguish."""
    return make_type_library()
