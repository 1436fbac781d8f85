"""
Shared pytest configuration: backend directory on sys.path and the `slow`
marker for the long acceptance runs (enabled with ORD2SEQ_RUN_SLOW=1).
"""

import os
import sys

import pytest

BACKEND_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if BACKEND_DIR not in sys.path:
    sys.path.insert(0, BACKEND_DIR)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute acceptance runs (set ORD2SEQ_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ORD2SEQ_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow acceptance run; set ORD2SEQ_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
