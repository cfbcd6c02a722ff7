"""Blinded visual-study backend: mix fake images with reals, serve them to
participants in per-participant random order, and record real/fake calls
with revision support.

An append-only JSON-lines log (one object per line, monotone "seq") is the
single source of truth; all in-memory views are rebuilt by replaying it, so
any prefix of the log is a consistent state and a crash mid-append loses at
most the in-flight response. Item and participant ids are opaque hex drawn
from seeded streams; ground truth never leaves the store except through the
operator export. Served assets are decoded and re-encoded pixel-only, so no
source filename or metadata survives into what participants download.
"""

import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class VttError(ValueError):
    pass


class NotFoundError(VttError):
    pass


ROLES = ("DLE", "ED", "other")
LABEL_NAMES = {1: "real", 0: "fake"}


@dataclass
class StudyConfig:
    n_real: int = 50
    n_fake: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_real < 1 or self.n_fake < 1:
            raise VttError("study needs at least one image of each kind")
        if self.seed < 0:
            raise VttError("seed must be non-negative")


@dataclass
class StudyItem:
    id: str
    truth: str
    asset: str


@dataclass
class Study:
    id: str
    created: float
    config: StudyConfig
    items: list

    @property
    def truth_map(self):
        return {it.id: it.truth for it in self.items}

    @property
    def item_ids(self):
        return [it.id for it in self.items]


@dataclass
class Participant:
    id: str
    study_id: str
    role: str
    order: list
    responses: dict = field(default_factory=dict)   # item -> response dict


def reencode_png(path):
    """Re-encode an image file as a pixels-only PNG (drops all metadata)."""
    with Image.open(path) as img:
        clean = Image.fromarray(np.asarray(img.convert("RGB")))
    buf = io.BytesIO()
    clean.save(buf, format="PNG")
    return buf.getvalue()


def _opaque_id(rng, nbytes=8):
    return rng.bytes(nbytes).hex()


class StudyStore:
    """Durable study state over a directory: log.jsonl plus an assets/ tree.

    clock is injectable so tests can freeze timestamps.
    """

    def __init__(self, root, clock=time.time):
        self.root = Path(root)
        self.assets_dir = self.root / "assets"
        self.assets_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "log.jsonl"
        self._clock = clock
        self._lock = threading.Lock()
        self._seq = 0
        self.studies = {}
        self.participants = {}
        self._items = {}                  # item id -> (study id, StudyItem)
        self._replay()

    # -- log machinery ------------------------------------------------------

    def _replay(self):
        if not self.log_path.exists():
            return
        raw = self.log_path.read_bytes()
        good_end = 0
        lines = raw.split(b"\n")
        for i, line in enumerate(lines):
            if not line:
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    log.warning("dropping torn final log line (%d bytes)",
                                len(line))
                    break
                raise VttError(f"corrupt log line {i + 1}")
            if event.get("seq") != self._seq + 1:
                raise VttError(f"log sequence broken at line {i + 1}: "
                               f"expected {self._seq + 1}, got {event.get('seq')}")
            self._apply(event)
            self._seq = event["seq"]
            good_end += len(line) + 1
        if good_end < len(raw):
            with open(self.log_path, "r+b") as fh:
                fh.truncate(good_end)

    def _append(self, event_type, payload):
        # caller holds the lock
        self._seq += 1
        event = {"seq": self._seq, "at": self._clock(), "event": event_type}
        event.update(payload)
        with open(self.log_path, "ab") as fh:
            fh.write(json.dumps(event, sort_keys=True).encode() + b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._apply(event)
        return event

    def _apply(self, event):
        kind = event["event"]
        if kind == "study_created":
            doc = event["study"]
            items = [StudyItem(id=d["id"], truth=d["truth"], asset=d["asset"])
                     for d in doc["items"]]
            study = Study(id=doc["id"], created=event["at"],
                          config=StudyConfig(n_real=doc["n_real"],
                                             n_fake=doc["n_fake"],
                                             seed=doc["seed"]),
                          items=items)
            self.studies[study.id] = study
            for it in items:
                self._items[it.id] = (study.id, it)
        elif kind == "participant_enrolled":
            doc = event["participant"]
            p = Participant(id=doc["id"], study_id=event["study"],
                            role=doc["role"], order=list(doc["order"]))
            self.participants[p.id] = p
        elif kind == "response_recorded":
            p = self.participants[event["participant"]]
            prev = p.responses.get(event["item"])
            p.responses[event["item"]] = {
                "label": event["label"],
                "revisions": 0 if prev is None else prev["revisions"] + 1,
                "first_at": event["at"] if prev is None else prev["first_at"],
                "last_at": event["at"],
            }
        else:
            raise VttError(f"unknown log event {kind!r}")

    # -- operations ---------------------------------------------------------

    def create_study(self, real_paths, fake_paths, config=None):
        config = config or StudyConfig()
        real_paths = [Path(p) for p in real_paths]
        fake_paths = [Path(p) for p in fake_paths]
        if len(real_paths) < config.n_real:
            raise VttError(f"need {config.n_real} real images, "
                           f"have {len(real_paths)}")
        if len(fake_paths) < config.n_fake:
            raise VttError(f"need {config.n_fake} fake images, "
                           f"have {len(fake_paths)}")
        sel = np.random.default_rng([config.seed, 20])
        reals = [real_paths[i] for i in
                 sel.choice(len(real_paths), size=config.n_real, replace=False)]
        fakes = [fake_paths[i] for i in
                 sel.choice(len(fake_paths), size=config.n_fake, replace=False)]
        mixed = [(p, "real") for p in reals] + [(p, "fake") for p in fakes]
        mixed = [mixed[i] for i in sel.permutation(len(mixed))]
        ids = np.random.default_rng([config.seed, 21])
        study_id = _opaque_id(ids)
        with self._lock:
            if study_id in self.studies:
                raise VttError(f"study {study_id} already exists "
                               f"(same seed reused in this store)")
            items = []
            for path, truth in mixed:
                iid = _opaque_id(ids)
                (self.assets_dir / f"{iid}.png").write_bytes(reencode_png(path))
                items.append({"id": iid, "truth": truth, "asset": f"{iid}.png"})
            self._append("study_created", {"study": {
                "id": study_id, "n_real": config.n_real,
                "n_fake": config.n_fake, "seed": config.seed, "items": items}})
        return self.studies[study_id]

    def _study(self, study_id):
        if study_id not in self.studies:
            raise NotFoundError(f"unknown study {study_id!r}")
        return self.studies[study_id]

    def _participant(self, study_id, participant_id):
        study = self._study(study_id)
        p = self.participants.get(participant_id)
        if p is None or p.study_id != study.id:
            raise NotFoundError(f"unknown participant {participant_id!r}")
        return p

    def enroll(self, study_id, role):
        if role not in ROLES:
            raise VttError(f"role must be one of {ROLES}, got {role!r}")
        with self._lock:
            study = self._study(study_id)
            k = sum(1 for p in self.participants.values()
                    if p.study_id == study_id)
            seed = study.config.seed
            pid = _opaque_id(np.random.default_rng([seed, 22, k]))
            perm = np.random.default_rng([seed, 23, k]).permutation(
                len(study.items))
            order = [study.items[i].id for i in perm]
            self._append("participant_enrolled", {
                "study": study_id,
                "participant": {"id": pid, "role": role, "order": order}})
        return self.participants[pid]

    def record_response(self, study_id, participant_id, item_id, label):
        if not isinstance(label, int) or isinstance(label, bool) or \
                label not in (0, 1):
            raise VttError(f"label must be 0 (fake) or 1 (real), got {label!r}")
        with self._lock:
            p = self._participant(study_id, participant_id)
            if item_id not in self._items or \
                    self._items[item_id][0] != study_id:
                raise NotFoundError(f"unknown item {item_id!r}")
            self._append("response_recorded", {
                "study": study_id, "participant": participant_id,
                "item": item_id, "label": label})
        return dict(p.responses[item_id], item=item_id)

    def items_for(self, study_id, participant_id):
        p = self._participant(study_id, participant_id)
        return {"participant": p.id, "role": p.role,
                "items": list(p.order),
                "current": {item: {"label": r["label"],
                                   "revisions": r["revisions"]}
                            for item, r in p.responses.items()}}

    def image_bytes(self, item_id):
        if item_id not in self._items:
            raise NotFoundError(f"unknown item {item_id!r}")
        _, item = self._items[item_id]
        path = self.assets_dir / item.asset
        if not path.exists():
            raise VttError(f"asset for item {item_id!r} missing")
        return path.read_bytes()

    def export(self, study_id):
        study = self._study(study_id)
        truth = study.truth_map
        rows = []
        participants = []
        for p in sorted((p for p in self.participants.values()
                         if p.study_id == study_id), key=lambda p: p.id):
            for item in sorted(p.responses):
                r = p.responses[item]
                rows.append({"participant": p.id, "role": p.role,
                             "item": item, "truth": truth[item],
                             "label": LABEL_NAMES[r["label"]],
                             "revisions": r["revisions"],
                             "first_at": r["first_at"],
                             "last_at": r["last_at"]})
            participants.append({"id": p.id, "role": p.role,
                                 "answered": len(p.responses),
                                 "complete": len(p.responses) == len(study.items)})
        return {"study": study_id, "n_items": len(study.items),
                "rows": rows, "participants": participants}


def export_jsonl(doc):
    return "".join(json.dumps(row, sort_keys=True) + "\n"
                   for row in doc["rows"])


def export_csv(doc):
    cols = ("participant", "role", "item", "truth", "label", "revisions")
    lines = [",".join(cols)]
    lines += [",".join(str(row[c]) for c in cols) for row in doc["rows"]]
    return "\n".join(lines) + "\n"
