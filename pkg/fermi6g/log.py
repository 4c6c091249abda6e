import logging
import os

LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_level(name=None):
    """Map a FERMI_LOG_LEVEL value to a logging level; unknown names fall back to info."""
    if name is None:
        name = os.environ.get("FERMI_LOG_LEVEL", "info")
    return LEVELS.get(name.strip().lower(), logging.INFO)


def configure_logging(name=None):
    root = logging.getLogger("fermi6g")
    root.setLevel(resolve_level(name))
    if not any(getattr(h, "_fermi6g", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._fermi6g = True
        root.addHandler(handler)
    return root
