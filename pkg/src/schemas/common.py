"""
Common Pydantic schemas shared by the CLI commands.
"""
from typing import Any, Optional

from pydantic import BaseModel


class ErrorDetail(BaseModel):
    """Detailed information about an error."""

    field: Optional[str] = None
    reason: Optional[str] = None


class ErrorResponse(BaseModel):
    """
    Standard error body printed on stderr when a command fails.

    Example:
        {
            "error": {
                "code": "CONFIG_ERROR",
                "message": "obstacle.toml: run.beta: Value error, beta must lie strictly between 0.5 and 1",
                "details": {
                    "field": "run.beta",
                    "reason": "ConfigError"
                }
            }
        }
    """

    error: dict[str, Any]  # Contains: code, message, details (optional)
