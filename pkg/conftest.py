"""
Root-level pytest configuration for the psmamba monorepo.

Puts both package roots on ``sys.path`` so the suites under
packages/core/tests/ and packages/cli/tests/ import ``psmamba_core`` and
``psmamba_cli`` without an editable install. The two ``tests`` directories
are plain directories (no ``__init__.py``) so their conftest modules get
distinct path-derived names under ``--import-mode=importlib``.
"""

from __future__ import annotations

import sys
from pathlib import Path

root = Path(__file__).parent
for package in ("core", "cli"):
    package_path = root / "packages" / package
    if str(package_path) not in sys.path:
        sys.path.insert(0, str(package_path))
