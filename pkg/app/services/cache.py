import hashlib
import json
from collections import OrderedDict

from app.core.config import settings
from app.services.forward import NoiseSchedule, build_perm_transition, build_token_transition
from app.services.permcore import SequenceSpec

_store: OrderedDict | None = None


def get_store() -> OrderedDict:
    global _store
    if _store is None:
        _store = OrderedDict()
    return _store


def make_key(kind: str, params: dict) -> str:
    h = hashlib.sha256(json.dumps(params, sort_keys=True).encode("utf-8")).hexdigest()
    return f"{kind}:{h}"


def get_cached(key: str):
    store = get_store()
    value = store.get(key)
    if value is not None:
        store.move_to_end(key)
    return value


def set_cached(key: str, value, max_entries: int | None = None):
    store = get_store()
    store[key] = value
    store.move_to_end(key)
    limit = max_entries or settings.transition_cache_size
    while len(store) > limit:
        store.popitem(last=False)


def clear_cache():
    get_store().clear()


def get_perm_transition(spec: SequenceSpec, sched: NoiseSchedule):
    key = make_key("perm", {"l_o": spec.l_o, "beta": sched.beta, "T": sched.T})
    tm = get_cached(key)
    if tm is None:
        tm = build_perm_transition(spec, sched)
        set_cached(key, tm)
    return tm


def get_token_transition(l_s: int, sched: NoiseSchedule):
    key = make_key("token", {"l_s": l_s, "beta": sched.beta, "T": sched.T})
    tm = get_cached(key)
    if tm is None:
        tm = build_token_transition(SequenceSpec(l_s=l_s, l_o=min(l_s, 8)), sched)
        set_cached(key, tm)
    return tm


def get_transition(op: str, spec: SequenceSpec, sched: NoiseSchedule):
    if op == "perm":
        return get_perm_transition(spec, sched)
    return get_token_transition(spec.l_s, sched)
