"""Record/replay checkpoint-restore for a miniature state-machine graphics API."""

from glckpt.errors import GLCkptError
from glckpt.minigl import BindTarget, Kind, StateKey, create_driver
from glckpt.splitproc import Session, Tag, checkpoint, restore

__all__ = [
    "BindTarget",
    "GLCkptError",
    "Kind",
    "Session",
    "StateKey",
    "Tag",
    "checkpoint",
    "create_driver",
    "restore",
]

__version__ = "0.1.0"
