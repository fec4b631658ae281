from __future__ import annotations

import pytest

from buffered_pst.config import CONFIG_KEYS, ENV_PREFIX


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    # setenv first so teardown also removes anything load_dotenv adds
    for key in CONFIG_KEYS:
        monkeypatch.setenv(ENV_PREFIX + key.upper(), "")
        monkeypatch.delenv(ENV_PREFIX + key.upper())
