"""In-memory message fabric between the control plane and the workers.

Lockstep delivery contract: a message sent at tick ``t`` becomes visible
to :meth:`Bus.drain` from tick ``t + 1`` and is delivered in
``(tick, sender, seq)`` order. Endpoints are integers: agents use their
index, the control plane uses :data:`CONTROL`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .resources import TaskObject, resource_to_dict

__all__ = [
    "CONTROL",
    "BROADCAST",
    "Heartbeat",
    "IntentionClaim",
    "Directive",
    "Message",
    "Bus",
    "UnknownSender",
    "UnknownRecipient",
    "payload_to_dict",
]

CONTROL = -1
BROADCAST = None


class UnknownSender(KeyError):
    pass


class UnknownRecipient(KeyError):
    pass


@dataclass(frozen=True)
class Heartbeat:
    agent: int


@dataclass(frozen=True)
class IntentionClaim:
    agent: int
    objects: tuple = ()


@dataclass(frozen=True)
class Directive:
    """Assign or evict one task. Assign carries the task's current view."""

    op: str
    task: int
    agent: int
    view: TaskObject | None = None


@dataclass(frozen=True)
class Message:
    seq: int
    tick: int
    sender: int
    recipient: int | None
    payload: Any

    @property
    def order_key(self) -> tuple:
        return (self.tick, self.sender, self.seq)


class Bus:
    def __init__(self) -> None:
        self._queues: dict[int, list[Message]] = {}
        self._seq: dict[int, int] = {}
        self._dropped: set[int] = set()

    @property
    def endpoints(self) -> list[int]:
        return sorted(self._queues)

    def register(self, endpoint: int) -> None:
        if endpoint in self._dropped:
            raise ValueError(f"endpoint {endpoint} was dropped")
        self._queues.setdefault(endpoint, [])
        self._seq.setdefault(endpoint, 0)

    def drop(self, endpoint: int) -> None:
        """Disconnect an endpoint: pending and future messages to it vanish."""
        self._queues.pop(endpoint, None)
        self._dropped.add(endpoint)

    def send(self, sender: int, payload: Any, tick: int,
             recipient: int | None = BROADCAST) -> Message:
        if sender not in self._queues:
            raise UnknownSender(sender)
        if recipient is not BROADCAST and recipient not in self._queues \
                and recipient not in self._dropped:
            raise UnknownRecipient(recipient)
        self._seq[sender] += 1
        msg = Message(self._seq[sender], tick, sender, recipient, payload)
        if recipient is BROADCAST:
            for ep, q in self._queues.items():
                if ep != sender:
                    q.append(msg)
        elif recipient in self._queues:
            self._queues[recipient].append(msg)
        return msg

    def drain(self, recipient: int, now: int) -> list[Message]:
        """Remove and return the messages for ``recipient`` sent before ``now``."""
        if recipient not in self._queues:
            if recipient in self._dropped:
                return []
            raise UnknownRecipient(recipient)
        q = self._queues[recipient]
        ready = [m for m in q if m.tick < now]
        self._queues[recipient] = [m for m in q if m.tick >= now]
        return sorted(ready, key=lambda m: m.order_key)


def payload_to_dict(payload: Any) -> dict[str, Any]:
    name = type(payload).__name__
    if isinstance(payload, Directive):
        d = {"op": payload.op, "task": payload.task, "agent": payload.agent}
        if payload.view is not None:
            d["view"] = resource_to_dict(payload.view)
    elif hasattr(payload, "to_dict"):
        d = payload.to_dict()
    else:
        d = dict(payload.__dict__)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
    return {"type": name, **d}
