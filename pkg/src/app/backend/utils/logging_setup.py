import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_configured = False


def configure_logging(level: Optional[str] = None, console: Optional[Console] = None) -> None:
    """Install a single RichHandler on the root logger."""
    global _configured
    if level is None:
        from mimo_pipeline.config import get_settings
        level = get_settings().log_level

    root = logging.getLogger()
    root.setLevel(level)
    if _configured:
        return

    handler = RichHandler(console=console or Console(stderr=True), show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    root.addHandler(handler)
    _configured = True
