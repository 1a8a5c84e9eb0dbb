from __future__ import annotations


class TomocertError(Exception):
    """Base class of every error raised by the tomocert backend"""

    pass
