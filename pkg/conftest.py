import pytest


def pytest_configure(config):
    """Register the markers used by the suite."""
    config.addinivalue_line("markers", "asyncio: mark a test as an async test")
    config.addinivalue_line("markers", "slow: long statistical runs (deselect with -m 'not slow')")
