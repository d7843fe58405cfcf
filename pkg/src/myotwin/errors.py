"""Toolkit exception with a machine-readable category.

The CLI maps every ToolkitError to a nonzero exit code and a JSON record
on stderr, so downstream tooling can branch on ``category`` instead of
parsing prose.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Error with a stable kebab-case category string."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category
        self.message = message

    def __str__(self) -> str:
        return f"[{self.category}] {self.message}"
