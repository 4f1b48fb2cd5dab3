import hashlib
import json
import os
from pathlib import Path

import pytest

_RESULTS = []


class CriterionLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _RESULTS.append(line)
        print(line)
        return passed


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


@pytest.fixture(scope="session")
def train_cache(tmp_path_factory):
    """Directory for trained acceptance networks.

    Set ``CNRE_ACCEPTANCE_CACHE`` to reuse checkpoints across sessions; entries
    are keyed by a hash of the full training config.
    """
    root = os.environ.get("CNRE_ACCEPTANCE_CACHE")
    path = Path(root) if root else tmp_path_factory.mktemp("acceptance")
    path.mkdir(parents=True, exist_ok=True)
    return path


def config_key(cfg_dict):
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:16]


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
