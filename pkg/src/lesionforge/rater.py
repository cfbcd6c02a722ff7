"""Per-rater confusion metrics and Fleiss' kappa agreement analysis.

The positive class is "real": TPR counts real images identified as real,
FPR counts fake images classified as real. Reported rates are truncated to
three decimals using exact integer arithmetic (floor of 1000*num/den), and
rates whose truth class is empty surface as an explicit "undefined" marker
rather than NaN. Kappa follows Fleiss' formulation over an items-by-
categories count table with a constant number of raters per item.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


class RaterError(ValueError):
    pass


UNDEFINED = "undefined"
CATEGORIES = ("real", "fake")


def _check_label(value, what):
    if value not in CATEGORIES:
        raise RaterError(f"{what} must be one of {CATEGORIES}, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# confusion and rates


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def n_real(self):
        return self.tp + self.fn

    @property
    def n_fake(self):
        return self.fp + self.tn

    @property
    def total(self):
        return self.n_real + self.n_fake


@dataclass
class RaterMetrics:
    accuracy: float
    tpr: float
    tnr: float
    fpr: float


def confusion(responses, truth):
    """Tally one rater's labels against the truth map.

    responses: iterable of (item_id, label) pairs or an item->label dict.
    """
    pairs = responses.items() if isinstance(responses, dict) else responses
    cm = ConfusionMatrix()
    for item, label in pairs:
        if item not in truth:
            raise RaterError(f"item {item!r} has no recorded truth")
        t = _check_label(truth[item], "truth")
        l = _check_label(label, "label")
        if t == "real":
            if l == "real":
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if l == "real":
                cm.fp += 1
            else:
                cm.tn += 1
    return cm


def _ratio(num, den):
    return None if den == 0 else num / den


def rater_metrics(cm):
    """Raw rate values; None where the truth class is empty."""
    return RaterMetrics(
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        tpr=_ratio(cm.tp, cm.n_real),
        tnr=_ratio(cm.tn, cm.n_fake),
        fpr=_ratio(cm.fp, cm.n_fake),
    )


def trunc3(num, den):
    """num/den truncated to 3 decimals, computed exactly on integers."""
    if den == 0:
        return UNDEFINED
    if num < 0 or den < 0:
        raise RaterError("rates are ratios of non-negative counts")
    v = (1000 * num) // den
    return f"{v // 1000}.{v % 1000:03d}"


def metrics_display(cm):
    """Three-decimal truncated strings for the report tables."""
    return {
        "accuracy": trunc3(cm.tp + cm.tn, cm.total),
        "tpr": trunc3(cm.tp, cm.n_real),
        "tnr": trunc3(cm.tn, cm.n_fake),
        "fpr": trunc3(cm.fp, cm.n_fake),
    }


def aggregate_rates(cms):
    """Pooled error rates over raters: fakes taken for real, reals for fake."""
    cms = list(cms)
    fp = sum(c.fp for c in cms)
    fn = sum(c.fn for c in cms)
    n_fake = sum(c.n_fake for c in cms)
    n_real = sum(c.n_real for c in cms)
    return {"fake_as_real": _ratio(fp, n_fake), "real_as_fake": _ratio(fn, n_real)}


# ---------------------------------------------------------------------------
# Fleiss' kappa


@dataclass
class RatingsTable:
    counts: np.ndarray                     # items x categories
    categories: tuple = CATEGORIES

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] < 1:
            raise RaterError(f"expected items x categories counts, "
                             f"got shape {self.counts.shape}")
        if np.any(self.counts < 0):
            raise RaterError("negative rating counts")
        sums = self.counts.sum(axis=1)
        if not np.all(sums == sums[0]):
            raise RaterError("every item must be rated by the same number of raters")
        if sums[0] < 2:
            raise RaterError("Fleiss' kappa needs at least 2 raters per item")

    @property
    def n_raters(self):
        return int(self.counts.sum(axis=1)[0])

    @property
    def n_items(self):
        return self.counts.shape[0]


@dataclass
class KappaResult:
    kappa: float                            # None when chance agreement is 1
    n_items: int
    n_raters: int
    p_categories: list

    def display(self):
        return UNDEFINED if self.kappa is None else f"{self.kappa:.3f}"


def fleiss_kappa(table):
    """kappa = (P_bar - P_e) / (1 - P_e) with
    P_i = (sum_j n_ij^2 - n) / (n (n-1)) and P_e = sum_j p_j^2."""
    c = table.counts.astype(np.float64)
    n = table.n_raters
    p_i = (np.sum(c * c, axis=1) - n) / (n * (n - 1))
    p_bar = float(np.mean(p_i))
    p_j = c.sum(axis=0) / (table.n_items * n)
    p_e = float(np.sum(p_j * p_j))
    kappa = None if p_e >= 1.0 else (p_bar - p_e) / (1.0 - p_e)
    return KappaResult(kappa=kappa, n_items=table.n_items, n_raters=n,
                       p_categories=[float(x) for x in p_j])


# ---------------------------------------------------------------------------
# export parsing


EXPORT_FIELDS = ("participant", "role", "item", "truth", "label")


def _check_row(row):
    missing = [k for k in EXPORT_FIELDS if k not in row or row[k] in (None, "")]
    if missing:
        raise RaterError(f"export row missing fields {missing}: {row}")
    _check_label(row["truth"], "truth")
    _check_label(row["label"], "label")
    return {k: row[k] for k in EXPORT_FIELDS}


def load_export_jsonl(text):
    """One JSON object per line with participant,role,item,truth,label."""
    rows = []
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RaterError(f"line {ln}: not valid JSON: {exc}") from None
        rows.append(_check_row(doc))
    return rows


def load_export_csv(text):
    """CSV with header participant,role,item,truth,label."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or \
            set(EXPORT_FIELDS) - set(reader.fieldnames):
        raise RaterError(f"CSV header must include {EXPORT_FIELDS}, "
                         f"got {reader.fieldnames}")
    return [_check_row(row) for row in reader]


# ---------------------------------------------------------------------------
# grouped agreement report


def build_ratings_table(rows, raters, subset="all"):
    """Counts table over the group's raters for one item subset.

    Items not rated by every rater in the group are dropped; the drop
    count is returned alongside the table (None when nothing survives).
    """
    raters = sorted(set(raters))
    if len(raters) < 2:
        raise RaterError(f"agreement needs at least 2 raters, got {raters}")
    truth = {}
    by_item = {}
    seen = set()
    for row in rows:
        if row["participant"] not in raters:
            continue
        key = (row["participant"], row["item"])
        if key in seen:
            raise RaterError(f"duplicate response for {key}")
        seen.add(key)
        truth.setdefault(row["item"], row["truth"])
        if truth[row["item"]] != row["truth"]:
            raise RaterError(f"conflicting truth for item {row['item']!r}")
        by_item.setdefault(row["item"], []).append(row["label"])
    counts = []
    dropped = 0
    for item in sorted(by_item):
        if subset != "all" and truth[item] != subset:
            continue
        labels = by_item[item]
        if len(labels) != len(raters):
            dropped += 1
            continue
        counts.append([labels.count(c) for c in CATEGORIES])
    if not counts:
        return None, dropped
    return RatingsTable(np.array(counts)), dropped


SUBSETS = ("real", "fake", "all")


@dataclass
class KappaGrid:
    cells: dict                              # (group, subset) -> KappaResult
    dropped: dict = field(default_factory=dict)

    def to_json(self):
        doc = {}
        for (group, subset), res in sorted(self.cells.items()):
            doc.setdefault(group, {})[subset] = {
                "kappa": res.kappa, "n_items": res.n_items,
                "n_raters": res.n_raters}
        return json.dumps({"grid": doc, "dropped": {f"{g}/{s}": v for (g, s), v
                                                    in sorted(self.dropped.items())}},
                          sort_keys=True)


def kappa_report(rows, groups=None):
    """Kappa per (rater group) x (real | fake | all item subsets).

    groups defaults to one group per role present in the export plus "All".
    """
    if groups is None:
        groups = {}
        for row in rows:
            groups.setdefault(row["role"], set()).add(row["participant"])
        groups["All"] = {row["participant"] for row in rows}
    cells = {}
    dropped = {}
    for group, raters in groups.items():
        for subset in SUBSETS:
            table, n_dropped = build_ratings_table(rows, raters, subset)
            if table is None:
                raise RaterError(f"group {group!r} has no complete items "
                                 f"for subset {subset!r}")
            cells[(group, subset)] = fleiss_kappa(table)
            dropped[(group, subset)] = n_dropped
    return KappaGrid(cells=cells, dropped=dropped)


# ---------------------------------------------------------------------------
# text reports


def confusion_text_table(per_rater):
    """Rows TP/FP/FN/TN plus truncated ACC/TPR/TNR, one column per rater."""
    names = list(per_rater)
    width = max(8, *(len(n) + 2 for n in names)) if names else 8
    head = "        " + "".join(f"{n:>{width}}" for n in names)
    lines = [head]
    for row, get in (("TP", lambda c: str(c.tp)), ("FP", lambda c: str(c.fp)),
                     ("FN", lambda c: str(c.fn)), ("TN", lambda c: str(c.tn)),
                     ("ACC", lambda c: metrics_display(c)["accuracy"]),
                     ("TPR", lambda c: metrics_display(c)["tpr"]),
                     ("TNR", lambda c: metrics_display(c)["tnr"])):
        cells = "".join(f"{get(per_rater[n]):>{width}}" for n in names)
        lines.append(f"{row:<8}" + cells)
    return "\n".join(lines)


def kappa_text_table(grid):
    """Groups down the side, item subsets across the top."""
    groups = sorted({g for g, _ in grid.cells})
    head = "        " + "".join(f"{s:>12}" for s in SUBSETS)
    lines = [head]
    for g in groups:
        cells = "".join(f"{grid.cells[(g, s)].display():>12}" for s in SUBSETS)
        lines.append(f"{g:<8}" + cells)
    return "\n".join(lines)
