#!/usr/bin/env python3
"""Fail if plain-text `name(...)` mentions in docs are not links."""

from __future__ import annotations

import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FILES = [*sorted((ROOT / "docs").rglob("*.md"))]

MENTION = re.compile(r"`([A-Za-z_][\w.]*)\(\.\.\.\)`")
LINKED = re.compile(r"\[`([A-Za-z_][\w.]*)\(\.\.\.\)`\]\([^)]+\)")


def _scan_file(path: Path) -> list[str]:
    violations: list[str] = []
    in_fence = False
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.lstrip()
        if stripped.startswith("```"):
            in_fence = not in_fence
            continue
        if in_fence or stripped.startswith("#"):
            continue
        linked = {match.group(1) for match in LINKED.finditer(line)}
        for match in MENTION.finditer(line):
            if match.group(1) not in linked:
                violations.append(f"{path.relative_to(ROOT)}:{lineno}: unlinked `{match.group(1)}(...)`")
    return violations


def main() -> int:
    violations: list[str] = []
    for path in FILES:
        if path.exists():
            violations.extend(_scan_file(path))

    if not violations:
        print("doc-link check passed")
        return 0

    print("doc-link check failed:")
    for violation in violations:
        print(f"  - {violation}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
