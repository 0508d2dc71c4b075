"""Execution-trace primitives: addresses, entry records, weights, JSONL io.

An address identifies one random-choice site structurally: the path of site
identifiers, the distribution family drawn there, and an instance counter that
disambiguates repeated visits within a single execution. The rendered form is

    path[0]/path[1]/...:FamilyTag#instance

Site identifiers may not contain "/", ":" or "#", which keeps the rendered
form parseable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import AddressFamilyMismatch, MalformedTrace, ParameterError

_SITE_FORBIDDEN = frozenset("/:#")

# The same few hundred addresses recur across every trace of a model; interning
# keeps large particle sets from holding millions of identical objects.
_INTERN: dict = {}


class Address:
    __slots__ = ("path", "family_tag", "instance", "rendered")

    def __init__(self, path, family_tag, instance):
        self.path = tuple(path)
        self.family_tag = family_tag
        self.instance = instance
        self.rendered = "/".join(self.path) + ":" + family_tag + "#" + str(instance)

    @property
    def head_key(self):
        """Rendered form with the instance counter stripped."""
        return "/".join(self.path) + ":" + self.family_tag

    def __eq__(self, other):
        return isinstance(other, Address) and self.rendered == other.rendered

    def __hash__(self):
        return hash(self.rendered)

    def __repr__(self):
        return f"Address({self.rendered!r})"


def intern_address(path, family_tag, instance):
    key = (path, family_tag, instance)
    addr = _INTERN.get(key)
    if addr is None:
        # setdefault is atomic under the GIL; a racing thread at worst builds
        # a duplicate that loses and is dropped.
        addr = _INTERN.setdefault(key, Address(path, family_tag, instance))
    return addr


def parse_address(text):
    """Inverse of Address.rendered."""
    try:
        head, inst = text.rsplit("#", 1)
        prefix, family = head.rsplit(":", 1)
        instance = int(inst)
    except ValueError as exc:
        raise ValueError(f"unparseable address {text!r}") from exc
    return intern_address(tuple(prefix.split("/")), family, instance)


class AddressTable:
    """Per-execution counter table mapping structural slots to instances.

    Each slot (full path including the site id) is bound to a single family
    for the whole execution; revisiting it with another family is an
    instrumentation bug and raises AddressFamilyMismatch.
    """

    __slots__ = ("_slots",)

    def __init__(self):
        self._slots = {}

    def extend(self, parent_path, site_id, family_tag):
        if not site_id or not _SITE_FORBIDDEN.isdisjoint(site_id):
            raise ParameterError(
                f"invalid site id {site_id!r}: must be non-empty without '/', ':', '#'"
            )
        path = parent_path + (site_id,)
        slot = self._slots.get(path)
        if slot is None:
            self._slots[path] = [family_tag, 1]
            instance = 0
        else:
            if slot[0] != family_tag:
                raise AddressFamilyMismatch(
                    f"site {'/'.join(path)} was {slot[0]}, now sampled as {family_tag}"
                )
            instance = slot[1]
            slot[1] = instance + 1
        return intern_address(path, family_tag, instance)

    def snapshot(self):
        return {k: list(v) for k, v in self._slots.items()}

    def restore(self, snap):
        self._slots = {k: list(v) for k, v in snap.items()}


def address_extend(parent_path, site_id, family_tag, counters):
    """Functional form of AddressTable.extend."""
    return counters.extend(tuple(parent_path), site_id, family_tag)


@dataclass(slots=True)
class TraceEntry:
    """One executed sample statement.

    log_p is the prior density of the drawn value, log_q the density under
    the distribution it was actually drawn from; they are equal whenever the
    proposal is the prior.
    """

    address: Address
    params: tuple
    value: object
    log_p: float
    log_q: float
    scope_id: str | None = None
    iteration: int = 0
    accepted: bool = True


@dataclass(slots=True)
class ObserveEntry:
    """One conditioning statement.

    value is kept in memory so Record-mode traces carry their synthetic
    observation (training data), but it is not part of the file schema.
    """

    address: Address
    log_likelihood: float
    value: object = None


@dataclass
class Trace:
    entries: list = field(default_factory=list)
    observes: list = field(default_factory=list)
    predicts: dict = field(default_factory=dict)
    log_weight: float = 0.0
    trace_id: int = 0
    proposal_fallbacks: int = 0
    finalized: bool = False

    @property
    def length(self):
        """Number of sample entries; observes do not count."""
        return len(self.entries)

    def finalize(self):
        self.log_weight = trace_log_weight(self)
        self.finalized = True
        return self


def trace_log_weight(trace):
    """log w = sum of observe log-likelihoods + sum over entries of log_p - log_q.

    Entries' densities are finite by construction; observe likelihoods may be
    -inf, which propagates to a -inf weight (a zero-weight particle).
    """
    terms = [o.log_likelihood for o in trace.observes]
    terms.extend(e.log_p - e.log_q for e in trace.entries)
    if any(t == -math.inf for t in terms):
        return -math.inf
    return math.fsum(terms)


def trace_to_obj(trace):
    return {
        "trace_id": trace.trace_id,
        "entries": [
            {
                "addr": e.address.rendered,
                "family": e.address.family_tag,
                "params": list(e.params),
                "value": e.value,
                "log_p": e.log_p,
                "log_q": e.log_q,
                "scope_id": e.scope_id,
                "iteration": e.iteration,
                "accepted": e.accepted,
            }
            for e in trace.entries
        ],
        "observes": [
            {"addr": o.address.rendered, "log_likelihood": o.log_likelihood}
            for o in trace.observes
        ],
        "predicts": trace.predicts,
        "log_weight": trace.log_weight,
    }


def obj_to_trace(obj):
    trace = Trace(
        predicts=dict(obj["predicts"]),
        log_weight=obj["log_weight"],
        trace_id=obj["trace_id"],
        finalized=True,
    )
    for e in obj["entries"]:
        addr = parse_address(e["addr"])
        if addr.family_tag != e["family"]:
            raise ValueError(f"family field {e['family']!r} disagrees with {e['addr']!r}")
        trace.entries.append(
            TraceEntry(
                address=addr,
                params=tuple(e["params"]),
                value=e["value"],
                log_p=e["log_p"],
                log_q=e["log_q"],
                scope_id=e["scope_id"],
                iteration=e["iteration"],
                accepted=e["accepted"],
            )
        )
    for o in obj["observes"]:
        trace.observes.append(ObserveEntry(parse_address(o["addr"]), o["log_likelihood"]))
    return trace


def trace_to_line(trace):
    return json.dumps(trace_to_obj(trace), separators=(",", ":"))


def write_traces(path_or_file, traces):
    """Write traces as JSONL, one object per line."""
    if hasattr(path_or_file, "write"):
        for t in traces:
            path_or_file.write(trace_to_line(t) + "\n")
    else:
        with open(path_or_file, "w") as fh:
            for t in traces:
                fh.write(trace_to_line(t) + "\n")


def iter_traces(path):
    """Yield traces from a JSONL file; raises MalformedTrace with the line number."""
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield obj_to_trace(obj)
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedTrace(line_no, str(exc)) from exc
