"""Web-hook delivery with bounded exponential backoff."""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Iterable

log = logging.getLogger(__name__)

Transport = Callable[[str, bytes], int]


def http_post(url: str, body: bytes, timeout: float = 5.0) -> int:
    req = urllib.request.Request(
        url, data=body, method="POST", headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status
    except urllib.error.HTTPError as exc:
        return exc.code


@dataclass
class Delivery:
    url: str
    attempts: int
    delivered: bool
    errors: list[str] = field(default_factory=list)


@dataclass
class DeliveryReport:
    event_id: str
    deliveries: list[Delivery] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return bool(self.deliveries) and all(d.delivered for d in self.deliveries)

    @property
    def dropped(self) -> int:
        return sum(not d.delivered for d in self.deliveries)


class WebhookDispatcher:
    """POSTs detected events to web-hook URLs.

    Each URL gets up to ``attempts`` tries; the wait before retry ``k`` is
    ``base_delay_ms * 2**(k-1)``. Failures are reported, never raised.
    """

    def __init__(
        self,
        transport: Transport = http_post,
        attempts: int = 3,
        base_delay_ms: int = 100,
        sleep: Callable[[float], None] | None = None,
    ) -> None:
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        self.transport = transport
        self.attempts = attempts
        self.base_delay_ms = base_delay_ms
        self.sleep = sleep if sleep is not None else (lambda ms: time.sleep(ms / 1000))
        self.delivered = 0
        self.dropped = 0

    def dispatch(self, urls: Iterable[str], event) -> DeliveryReport:
        body = json.dumps(event.to_dict(), sort_keys=True).encode()
        report = DeliveryReport(event_id=event.event_id)
        for url in urls:
            d = Delivery(url=url, attempts=0, delivered=False)
            for attempt in range(self.attempts):
                if attempt:
                    self.sleep(self.base_delay_ms * 2 ** (attempt - 1))
                d.attempts += 1
                try:
                    status = self.transport(url, body)
                except Exception as exc:  # unreachable endpoint, timeout, ...
                    d.errors.append(f"{type(exc).__name__}: {exc}")
                    continue
                if 200 <= status < 300:
                    d.delivered = True
                    break
                d.errors.append(f"HTTP {status}")
            if d.delivered:
                self.delivered += 1
            else:
                self.dropped += 1
                log.warning("web-hook %s dropped after %d attempts", url, d.attempts)
            report.deliveries.append(d)
        return report
