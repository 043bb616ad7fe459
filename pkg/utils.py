"""Shared formatting helpers."""

import logging
import math
import os
import re
import subprocess

logger = logging.getLogger(__name__)

VERSION = "1.0.0"

FLOAT_FORMAT = ".17g"


def sanitize_label(name):
    """Reduce a series label to characters safe in a file name."""
    name = re.sub(r"[^A-Za-z0-9_.=-]+", "_", str(name))
    name = name.replace("..", "").strip("._")
    return name or "series"


def format_float(value):
    """Render a float with 17 significant digits; NaN is spelled 'nan'."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, FLOAT_FORMAT)


def parse_float(text):
    return float(text)


def format_duration(seconds):
    """Human-readable wall time (ms, s, min)."""
    if seconds < 0:
        return ""
    if seconds < 1.0:
        return f"{seconds * 1000:.1f} ms"
    if seconds < 120.0:
        return f"{seconds:.2f} s"
    return f"{seconds / 60:.1f} min"


def version_string():
    """git describe of the source tree, or the release version.

    Falls back silently when git or the repository metadata is missing,
    e.g. inside the container image.
    """
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug(f"git describe unavailable: {e}")
        return VERSION
    described = result.stdout.strip()
    if result.returncode != 0 or not described:
        return VERSION
    return f"{VERSION}+{described}"
