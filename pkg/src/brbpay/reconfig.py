"""Join-only asynchronous reconfiguration.

One join at a time.  The joiner first collects join grants from a quorum of
the current view (members grant to one joiner until the next view installs),
then broadcasts an install record for ``view + 1`` through the signature
broadcast, addressed to the old members.  A member that delivers the record
pauses payment processing, ships its logs to the joiner and announces its
progress to the new view.  Everyone resumes after a new-view quorum of
resume announcements; representatives then re-broadcast payments the slowest
announcer has not settled yet.

The joiner adopts, per client, the longest log prefix that at least f+1 of
the snapshot senders agree on, and replays it through its own engine, so
balances and sequence registers are recomputed rather than copied.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .messages import (
    MEMBERSHIP,
    JoinRelease,
    JoinReply,
    JoinReq,
    ResumeAck,
    StateRequest,
    StateSnapshot,
)
from .model import ConfigError, Payment, byzantine_quorum, max_faults


class ReconfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class View:
    vid: int
    members: Tuple[int, ...]
    f: int

    def __post_init__(self) -> None:
        if len(set(self.members)) != len(self.members):
            raise ConfigError("duplicate view members")
        if len(self.members) < 3 * self.f + 1:
            raise ConfigError(f"view of {len(self.members)} cannot tolerate f={self.f}")

    @property
    def quorum(self) -> int:
        return byzantine_quorum(len(self.members), self.f)

    def extended(self, joiner: int) -> "View":
        members = tuple(sorted(set(self.members) | {joiner}))
        return View(self.vid + 1, members, max_faults(len(members)))


@dataclass(frozen=True, eq=False)
class InstallRecord:
    """Payload of the membership broadcast: view ``vid`` replaces ``vid - 1``."""

    vid: int
    members: Tuple[int, ...]
    joiner: int
    broadcaster: int
    digest: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        h = hashlib.sha256(b"INSTALL" + struct.pack("<qq", self.vid, self.joiner))
        for m in self.members:
            h.update(struct.pack("<q", m))
        object.__setattr__(self, "digest", h.digest())


def adopt_logs(snapshots: Sequence[Dict[int, Sequence[Payment]]], f: int) -> Dict[int, List[Payment]]:
    """Longest per-client prefix vouched for by at least f+1 snapshots."""
    clients = sorted({c for snap in snapshots for c in snap})
    adopted: Dict[int, List[Payment]] = {}
    for c in clients:
        logs = [list(snap.get(c, ())) for snap in snapshots]
        prefix: List[Payment] = []
        agreeing = list(range(len(logs)))
        k = 0
        while True:
            votes: Dict[bytes, List[int]] = {}
            for i in agreeing:
                if len(logs[i]) > k:
                    votes.setdefault(logs[i][k].digest, []).append(i)
            winner = None
            for d in sorted(votes):
                if len(votes[d]) >= f + 1:
                    winner = d
                    break
            if winner is None:
                break
            agreeing = votes[winner]
            prefix.append(logs[agreeing[0]][k])
            k += 1
        adopted[c] = prefix
    return adopted


def vouched_pending(snapshots: Sequence[Dict[int, Sequence[Payment]]], f: int) -> List[Payment]:
    """Delivered-but-unsettled payments reported by at least f+1 snapshots."""
    counts: Dict[bytes, List[Payment]] = {}
    for snap in snapshots:
        seen = set()
        for c in sorted(snap):
            for p in snap[c]:
                if p.digest not in seen:
                    seen.add(p.digest)
                    counts.setdefault(p.digest, []).append(p)
    out = [ps[0] for d, ps in sorted(counts.items()) if len(ps) >= f + 1]
    out.sort(key=lambda p: (p.spender, p.seq))
    return out


class Reconfig:
    """Reconfiguration state attached to one replica (member or joiner)."""

    RETRY_MS = 200.0

    def __init__(self, replica, joining: bool = False) -> None:
        self.r = replica
        self.joining = joining
        self.lock: Optional[int] = None  # joiner currently granted by this member
        self.grants: Dict[int, set] = {}
        self.refusals: Dict[int, set] = {}
        self.join_started: Optional[float] = None
        self.join_done: Optional[float] = None
        self.installing: Optional[View] = None
        self.snapshots: Dict[int, StateSnapshot] = {}
        self.state_adopted = False
        self.resume_acks: Dict[int, ResumeAck] = {}
        self.sent_resume = False
        self.history: List[View] = [replica.view]
        self.attempt = 0
        self.install_slot_sent: Optional[int] = None
        self.adopted: Optional[Dict[int, List[Payment]]] = None

    # joiner side ------------------------------------------------------------

    def start_join(self) -> None:
        r = self.r
        if self.join_started is None:
            self.join_started = r.net.now
        self.attempt += 1
        self.grants = {}
        self.refusals = {}
        msg = JoinReq(r.view.vid, r.id)
        for m in r.view.members:
            r.send(m, msg)

    def on_join_reply(self, src: int, m: JoinReply) -> None:
        r = self.r
        if not self.joining or self.install_slot_sent is not None:
            return
        if m.status == "amend":
            if m.view > r.view.vid:
                new_view = View(m.view, tuple(m.members), max_faults(len(m.members)))
                r.view = new_view
                self.history.append(new_view)
                self._retry(0.0)
            return
        if m.view != r.view.vid or src not in r.view.members:
            return
        if m.status == "granted":
            self.grants.setdefault(m.view, set()).add(src)
            if len(self.grants[m.view]) >= r.view.quorum:
                self._broadcast_install()
        elif m.status in ("busy", "reject"):
            self.refusals.setdefault(m.view, set()).add(src)
            if len(self.refusals[m.view]) > len(r.view.members) - r.view.quorum:
                # a quorum of grants is out of reach in this round; back off
                rel = JoinRelease(r.view.vid, r.id)
                for mem in r.view.members:
                    r.send(mem, rel)
                self._retry(self.RETRY_MS * (1 + r.rng.random()) * (1 + self.attempt % 4))

    def _retry(self, delay: float) -> None:
        r = self.r
        r.net.at(r.net.now + delay, r.id, self.start_join)

    def _broadcast_install(self) -> None:
        r = self.r
        new = r.view.extended(r.id)
        self.install_slot_sent = new.vid
        rec = InstallRecord(new.vid, new.members, r.id, r.id)
        r.install_brb.broadcast(rec, slot=(r.view.vid, MEMBERSHIP, new.vid))

    # member side ------------------------------------------------------------

    def on_join_req(self, src: int, m: JoinReq) -> None:
        r = self.r
        if self.joining:
            return
        view = r.view
        if m.joiner != src:
            return
        if src in view.members:
            r.send(src, JoinReply(view.vid, "reject", view.members))
            return
        if m.view < view.vid:
            r.send(src, JoinReply(view.vid, "amend", view.members))
            return
        if m.view > view.vid or r.paused:
            r.send(src, JoinReply(view.vid, "busy", view.members, self.lock))
            return
        if self.lock is None or self.lock == src:
            self.lock = src
            r.send(src, JoinReply(view.vid, "granted", view.members))
        else:
            r.send(src, JoinReply(view.vid, "busy", view.members, self.lock))

    def on_join_release(self, src: int, m: JoinRelease) -> None:
        if self.lock == src and m.view == self.r.view.vid and self.installing is None:
            self.lock = None

    def validate_install(self, rec: InstallRecord, src: int) -> bool:
        r = self.r
        if self.joining or not isinstance(rec, InstallRecord):
            return False
        return (rec.joiner == src and rec.vid == r.view.vid + 1 and self.lock == src
                and tuple(rec.members) == r.view.extended(src).members)

    def install_group(self, slot) -> View:
        # the membership broadcast runs among the members of the view it replaces
        for v in reversed(self.history):
            if v.vid == slot[0]:
                return v
        return self.r.view

    def on_install(self, slot, rec: InstallRecord) -> None:
        r = self.r
        new = View(rec.vid, tuple(rec.members), max_faults(len(rec.members)))
        if self.joining:
            if r.id != rec.joiner:
                return
            self.installing = new
            r.pause(new)
            self._request_state()
            return
        if new.vid != r.view.vid + 1 or self.installing is not None:
            return
        self.installing = new
        r.pause(new)
        xlogs, pending = r.snapshot_state()
        r.send(rec.joiner, StateSnapshot(r.view.vid, xlogs, pending))
        self._announce()

    # state transfer -----------------------------------------------------------

    def _request_state(self) -> None:
        r = self.r
        if self.state_adopted:
            return
        old = self.history[-1]
        for m in old.members:
            if m not in self.snapshots:
                r.send(m, StateRequest(old.vid))
        r.net.at(r.net.now + self.RETRY_MS * 5, r.id, self._request_state)

    def on_state_request(self, src: int, m: StateRequest) -> None:
        r = self.r
        if self.joining or self.installing is None or src not in self.installing.members:
            return
        xlogs, pending = r.snapshot_state()
        r.send(src, StateSnapshot(m.view, xlogs, pending))

    def on_snapshot(self, src: int, m: StateSnapshot) -> None:
        r = self.r
        old = self.history[-1]
        if not self.joining or self.state_adopted or src not in old.members or src in self.snapshots:
            return
        self.snapshots[src] = m
        if len(self.snapshots) >= old.quorum:
            self.transfer_state(old)

    def transfer_state(self, old: View) -> None:
        r = self.r
        if len(self.snapshots) < old.quorum:
            raise ReconfigError("insufficient snapshot responders")
        senders = sorted(self.snapshots)
        logs = adopt_logs([self.snapshots[s].xlogs for s in senders], old.f)
        pending = vouched_pending([self.snapshots[s].pending for s in senders], old.f)
        r.adopt_state(logs, pending)
        self.adopted = logs
        self.state_adopted = True
        self._announce()

    # resume -------------------------------------------------------------------

    def _announce(self) -> None:
        r = self.r
        if self.sent_resume:
            return
        self.sent_resume = True
        new = self.installing
        ack = ResumeAck(new.vid, tuple(sorted(r.engine.next_seq.items())))
        for m in new.members:
            r.send(m, ack)
        self._maybe_resume()

    def on_resume_ack(self, src: int, m: ResumeAck) -> None:
        new = self.installing
        r = self.r
        if new is None:
            if m.view == r.view.vid and not r.paused and r.installed:
                # late announcer: make sure it gets what it has not settled
                r.rebroadcast_from(dict(m.next_seq))
            elif m.view > r.view.vid:
                # may arrive before our own install delivery; keep it
                self.resume_acks[src] = m
            return
        if m.view != new.vid or src not in new.members:
            return
        self.resume_acks[src] = m
        self._maybe_resume()

    def _maybe_resume(self) -> None:
        r = self.r
        new = self.installing
        if new is None or not self.sent_resume:
            return
        valid = {s: a for s, a in self.resume_acks.items() if a.view == new.vid and s in new.members}
        if len(valid) < new.quorum:
            return
        self.resume(valid)

    def resume(self, acks: Dict[int, ResumeAck]) -> None:
        r = self.r
        new = self.installing
        if new is None or len(acks) < new.quorum:
            raise ReconfigError("resume requires a quorum of new-view announcements")
        floor: Dict[int, int] = {}
        for a in acks.values():
            for c, n in a.next_seq:
                floor[c] = min(floor.get(c, n), n)
        self.installing = None
        self.lock = None
        self.resume_acks = {}
        self.sent_resume = False
        self.snapshots = {}
        self.install_slot_sent = None
        self.history.append(new)
        was_joining = self.joining
        self.joining = False
        if was_joining:
            self.join_done = r.net.now
        r.resume(new, floor)

    handlers = {
        "JOIN_REQ": on_join_req,
        "JOIN_REPLY": on_join_reply,
        "JOIN_RELEASE": on_join_release,
        "STATE_REQ": on_state_request,
        "STATE_SNAPSHOT": on_snapshot,
        "RESUME_ACK": on_resume_ack,
    }
