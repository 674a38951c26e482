import os
import stat
from pathlib import Path

import pytest

from gpu_tier_bench.device import NVIDIA_SMI_ENV, simulated_device
from gpu_tier_bench.model import load_spec_db

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def db():
    return load_spec_db()


@pytest.fixture(scope="session")
def host(db):
    return db.host


@pytest.fixture
def sim_device(host):
    return simulated_device(host)


@pytest.fixture
def fake_nvidia_smi(tmp_path, monkeypatch):
    """Install a scripted stand-in for nvidia-smi and return its call log path.

    The factory writes a shell script that appends its arguments to a log and
    behaves per the requested mode: 'ok', 'fail' (exit 1 with a permission
    message), or a custom body.
    """
    log = tmp_path / "smi_calls.log"

    def install(mode="ok", body=None):
        script = tmp_path / "fake-nvidia-smi"
        if body is None:
            if mode == "ok":
                body = 'echo "$@" >> %s\nexit 0\n' % log
            elif mode == "fail":
                body = ('echo "$@" >> %s\n'
                        'echo "Insufficient Permissions" >&2\nexit 1\n' % log)
            else:
                raise ValueError(mode)
        script.write_text("#!/bin/sh\n" + body)
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        monkeypatch.setenv(NVIDIA_SMI_ENV, str(script))
        return log

    return install
