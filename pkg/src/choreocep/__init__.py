"""Distributed complex event processing with choreographed load balancing."""

from .definitions import ContextSpec, EventTypeDefinition, Operator, WindowSpec
from .engine import evaluate, new_state
from .events import Event

__version__ = "0.1.0"

__all__ = ["ContextSpec", "Event", "EventTypeDefinition", "Operator", "WindowSpec", "evaluate", "new_state"]
