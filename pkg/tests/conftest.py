import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from icechron._kernels import available_backends


@pytest.fixture(params=sorted(available_backends()))
def kernel_backend(request, monkeypatch):
    """Run a test under each built kernel backend."""
    backend = available_backends()[request.param]
    import icechron._kernels as kmod
    import icechron.hmm as hmod

    monkeypatch.setattr(kmod, "kernels", backend)
    monkeypatch.setattr(hmod, "kernels", backend)
    return backend
