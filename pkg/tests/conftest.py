from __future__ import annotations

import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
CAMERA = FIXTURES / "camera"


@pytest.fixture
def camera_dir(tmp_path: Path) -> Path:
    """A writable copy of the camera fixture directory."""
    dst = tmp_path / "camera"
    shutil.copytree(CAMERA, dst)
    return dst
