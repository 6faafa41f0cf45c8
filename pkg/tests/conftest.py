import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from speechrl import synth
from speechrl.dataset import subset_spec


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory) -> Path:
    """Small deterministic binary corpus: 10 'left' + 12 'right' clips."""
    root = tmp_path_factory.mktemp("corpus")
    synth.make_corpus(root, ["left"], files_per_class=10, seed=101)
    synth.make_corpus(root, ["right"], files_per_class=12, seed=101)
    return root


@pytest.fixture(scope="session")
def binary_subset():
    return subset_spec("binary")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return Path(__file__).parent / "fixtures"
