"""Channel-MoE attention toolkit: sparse channel routing, patch-channel
cross-attention, and the analytic attention cost model."""

try:
    from ._moevit import *  # noqa: F401,F403
    from . import _moevit as _core
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _moevit import *  # noqa: F401,F403
    import _moevit as _core

__all__ = [name for name in dir(_core) if not name.startswith("_")]
