"""Shared fixtures and the acceptance summary printed at the end of a run."""

from pathlib import Path

import numpy as np
import pytest

from shmrom.fem import CONCRETE, PortalGeometry, build_fom, generate_portal_mesh

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS = {}

PORTAL = PortalGeometry(span=5.4, height=5.5, column_width=0.24, deck_depth=0.48, thickness=0.1,
                        damage_box_height=0.5)


@pytest.fixture(scope="session")
def coarse_mesh():
    return generate_portal_mesh(PORTAL, 0.4)


@pytest.fixture(scope="session")
def coarse_fom(coarse_mesh):
    return build_fom(coarse_mesh, CONCRETE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
