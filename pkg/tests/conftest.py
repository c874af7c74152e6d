import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from promptcl import reset_tape


@pytest.fixture(autouse=True)
def clean_tape():
    reset_tape()
    yield
    reset_tape()
