from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from modelbackend.config import BackendConfig
from modelbackend.server import create_app


@pytest.fixture(scope="session")
def client() -> TestClient:
    return TestClient(create_app(BackendConfig()))
