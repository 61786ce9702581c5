"""Bracha-style reliable broadcast with totality (PREPARE / ECHO / READY).

Echo and Ready carry only the payload digest.  A replica that completes the
Ready quorum without ever having seen the payload pulls it from the Ready
senders.  Deliveries from one source happen in slot order.
"""

from __future__ import annotations

from typing import Dict, Tuple

from ..messages import Echo, PayloadRequest, PayloadResponse, Prepare, Ready, Slot


class EchoInstance:
    __slots__ = ("payloads", "echoed", "echoes", "readies", "readied", "complete",
                 "delivered", "requested")

    def __init__(self) -> None:
        self.payloads: Dict[bytes, object] = {}
        self.echoed = None  # digest we echoed
        self.echoes: Dict[bytes, set] = {}
        self.readies: Dict[bytes, set] = {}
        self.readied = False
        self.complete = None  # digest with a 2f+1 Ready quorum
        self.delivered = False
        self.requested = False


class EchoBrb:
    def __init__(self, host) -> None:
        self.host = host
        self.instances: Dict[Slot, EchoInstance] = {}
        self.next_k: Dict[Tuple[int, int], int] = {}
        self.counter: Dict[int, int] = {}

    def _inst(self, slot: Slot) -> EchoInstance:
        inst = self.instances.get(slot)
        if inst is None:
            inst = self.instances[slot] = EchoInstance()
        return inst

    def broadcast(self, payload) -> Slot:
        view = self.host.view.vid
        k = self.counter.get(view, 0)
        self.counter[view] = k + 1
        slot = (view, self.host.id, k)
        self.host.multicast(Prepare(view, slot, payload))
        return slot

    def on_prepare(self, src: int, m: Prepare) -> None:
        slot = m.slot
        if slot[1] != src:
            self.host.misbehavior("prepare-wrong-source", src, slot)
            return
        inst = self._inst(slot)
        d = m.payload.digest
        if inst.echoed is not None:
            if inst.echoed != d:
                self.host.misbehavior("conflicting-prepare", src, slot)
            return
        if not self.host.validate(m.payload, src):
            self.host.misbehavior("rejected-prepare", src, slot)
            return
        inst.echoed = d
        inst.payloads[d] = m.payload
        self.host.multicast(Echo(m.view, slot, d))
        self._maybe_deliver(slot, inst)

    def on_echo(self, src: int, m: Echo) -> None:
        inst = self._inst(m.slot)
        senders = inst.echoes.get(m.digest)
        if senders is None:
            senders = inst.echoes[m.digest] = set()
        senders.add(src)
        if not inst.readied and len(senders) >= self.host.view.quorum:
            self._send_ready(m.view, m.slot, inst, m.digest)

    def on_ready(self, src: int, m: Ready) -> None:
        inst = self._inst(m.slot)
        senders = inst.readies.get(m.digest)
        if senders is None:
            senders = inst.readies[m.digest] = set()
        senders.add(src)
        f = self.host.view.f
        if not inst.readied and len(senders) >= f + 1:
            self._send_ready(m.view, m.slot, inst, m.digest)
        if inst.complete is None and len(senders) >= 2 * f + 1:
            inst.complete = m.digest
            self._maybe_deliver(m.slot, inst)

    def _send_ready(self, view: int, slot: Slot, inst: EchoInstance, d: bytes) -> None:
        inst.readied = True
        self.host.multicast(Ready(view, slot, d))

    def on_payload_request(self, src: int, m: PayloadRequest) -> None:
        payload = self._inst(m.slot).payloads.get(m.digest)
        if payload is not None:
            self.host.send(src, PayloadResponse(m.view, m.slot, payload))

    def on_payload_response(self, src: int, m: PayloadResponse) -> None:
        inst = self.instances.get(m.slot)
        if inst is None or inst.complete != m.payload.digest:
            return
        inst.payloads.setdefault(inst.complete, m.payload)
        self._maybe_deliver(m.slot, inst)

    def _maybe_deliver(self, slot: Slot, inst: EchoInstance) -> None:
        if inst.complete is None or inst.delivered:
            return
        if inst.complete not in inst.payloads:
            if not inst.requested:
                inst.requested = True
                senders = [r for r in sorted(inst.readies[inst.complete]) if r != self.host.id]
                req = PayloadRequest(slot[0], slot, inst.complete)
                for r in senders[: self.host.view.f + 1]:
                    self.host.send(r, req)
            return
        self._drain(slot[0], slot[1])

    def _drain(self, view: int, source: int) -> None:
        key = (view, source)
        k = self.next_k.get(key, 0)
        while True:
            inst = self.instances.get((view, source, k))
            if inst is None or inst.complete is None or inst.complete not in inst.payloads:
                break
            inst.delivered = True
            k += 1
            self.next_k[key] = k
            self.host.brb_deliver((view, source, k - 1), inst.payloads[inst.complete])

    def delivered(self, slot: Slot) -> bool:
        inst = self.instances.get(slot)
        return bool(inst and inst.delivered)

    handlers = {
        "PREPARE": on_prepare,
        "ECHO": on_echo,
        "READY": on_ready,
        "PAYLOAD_REQ": on_payload_request,
        "PAYLOAD_RESP": on_payload_response,
    }
