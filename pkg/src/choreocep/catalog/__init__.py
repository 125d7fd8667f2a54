from .registry import (
    Catalog,
    CatalogError,
    CatalogRecord,
    ConflictError,
    DependencyError,
    DependencyGraph,
    NotFoundError,
    ValidationError,
    topological_order,
)
from .service import CatalogService
from .webhooks import Delivery, DeliveryReport, WebhookDispatcher

__all__ = [
    "Catalog",
    "CatalogError",
    "CatalogRecord",
    "CatalogService",
    "ConflictError",
    "Delivery",
    "DeliveryReport",
    "DependencyError",
    "DependencyGraph",
    "NotFoundError",
    "ValidationError",
    "WebhookDispatcher",
    "topological_order",
]
