import json

import numpy as np
import pytest

import lesionforge.rater as R


def independent_kappa(counts):
    """Straight-from-the-formula reference, plain loops only."""
    counts = [list(map(int, row)) for row in counts]
    big_n = len(counts)
    n = sum(counts[0])
    agree = []
    for row in counts:
        s = 0
        for c in row:
            s += c * c
        agree.append((s - n) / (n * (n - 1)))
    p_bar = sum(agree) / big_n
    k = len(counts[0])
    p_e = 0.0
    for j in range(k):
        col = sum(row[j] for row in counts) / (big_n * n)
        p_e += col * col
    if p_e >= 1.0:
        return None
    return (p_bar - p_e) / (1.0 - p_e)


# hand-checked count columns: (tp, fp, fn, tn, acc, tpr, tnr)
REFERENCE_RATERS = [
    (50, 26, 0, 4, "0.675", "1.000", "0.133"),
    (30, 10, 20, 20, "0.625", "0.600", "0.666"),
    (36, 9, 14, 21, "0.712", "0.720", "0.700"),
    (26, 16, 24, 14, "0.500", "0.520", "0.466"),
    (26, 20, 24, 10, "0.450", "0.520", "0.333"),
    (27, 11, 23, 19, "0.575", "0.540", "0.633"),
    (35, 18, 15, 12, "0.587", "0.700", "0.400"),
    (29, 17, 21, 13, "0.525", "0.580", "0.433"),
]


class TestConfusion:
    def test_tally(self):
        truth = {"a": "real", "b": "real", "c": "fake", "d": "fake"}
        cm = R.confusion([("a", "real"), ("b", "fake"),
                          ("c", "real"), ("d", "fake")], truth)
        assert (cm.tp, cm.fn, cm.fp, cm.tn) == (1, 1, 1, 1)
        assert cm.n_real == 2 and cm.n_fake == 2 and cm.total == 4

    def test_dict_input(self):
        truth = {"a": "real", "b": "fake"}
        cm = R.confusion({"a": "real", "b": "fake"}, truth)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (1, 1, 0, 0)

    def test_empty_is_zero(self):
        cm = R.confusion([], {"a": "real"})
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (0, 0, 0, 0)

    def test_missing_truth_raises(self):
        with pytest.raises(R.RaterError, match="no recorded truth"):
            R.confusion([("ghost", "real")], {"a": "real"})

    def test_bad_label_raises(self):
        with pytest.raises(R.RaterError, match="label"):
            R.confusion([("a", "maybe")], {"a": "real"})
        with pytest.raises(R.RaterError, match="truth"):
            R.confusion([("a", "real")], {"a": "genuine"})


class TestTruncation:
    def test_thirds_truncate_not_round(self):
        assert R.trunc3(20, 30) == "0.666"
        assert R.trunc3(14, 30) == "0.466"
        assert R.trunc3(47, 80) == "0.587"

    def test_exact_decimals_survive(self):
        # 21/30 is 0.7 but floats put it a hair below; integer math must not
        assert R.trunc3(21, 30) == "0.700"
        assert R.trunc3(7, 10) == "0.700"
        assert R.trunc3(3, 5) == "0.600"
        assert R.trunc3(1, 1) == "1.000"
        assert R.trunc3(0, 7) == "0.000"

    def test_zero_denominator_is_undefined(self):
        assert R.trunc3(0, 0) == R.UNDEFINED

    def test_negative_rejected(self):
        with pytest.raises(R.RaterError):
            R.trunc3(-1, 5)


class TestRaterMetrics:
    @pytest.mark.parametrize("tp,fp,fn,tn,acc,tpr,tnr", REFERENCE_RATERS)
    def test_reference_columns(self, tp, fp, fn, tn, acc, tpr, tnr):
        cm = R.ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
        assert cm.n_real == 50 and cm.n_fake == 30
        disp = R.metrics_display(cm)
        assert disp["accuracy"] == acc
        assert disp["tpr"] == tpr
        assert disp["tnr"] == tnr
        m = R.rater_metrics(cm)
        assert m.accuracy == pytest.approx((tp + tn) / 80, abs=1e-12)
        assert m.tpr == pytest.approx(tp / 50, abs=1e-12)
        assert m.tnr == pytest.approx(tn / 30, abs=1e-12)
        assert m.fpr == pytest.approx(1.0 - m.tnr, abs=1e-12)
        # displayed (truncated) values sit within a half-thousandth of the raw
        for shown, raw in ((acc, m.accuracy), (tpr, m.tpr), (tnr, m.tnr)):
            assert float(shown) <= raw < float(shown) + 1e-3

    def test_undefined_when_class_empty(self):
        cm = R.ConfusionMatrix(tp=3, fn=1)       # no fake items seen
        m = R.rater_metrics(cm)
        assert m.tnr is None and m.fpr is None
        assert m.tpr == 0.75
        disp = R.metrics_display(cm)
        assert disp["tnr"] == R.UNDEFINED and disp["fpr"] == R.UNDEFINED
        assert disp["tpr"] == "0.750"

    def test_empty_matrix_all_undefined(self):
        m = R.rater_metrics(R.ConfusionMatrix())
        assert m.accuracy is None and m.tpr is None and m.tnr is None

    def test_aggregate_rates(self):
        cms = [R.ConfusionMatrix(tp=t, fp=f, fn=n, tn=u)
               for t, f, n, u, *_ in REFERENCE_RATERS]
        agg = R.aggregate_rates(cms)
        assert agg["fake_as_real"] == pytest.approx(127 / 240)
        assert agg["real_as_fake"] == pytest.approx(141 / 400)


class TestRatingsTable:
    def test_unequal_rater_counts_rejected(self):
        with pytest.raises(R.RaterError, match="same number"):
            R.RatingsTable(np.array([[2, 0], [2, 1]]))

    def test_single_rater_rejected(self):
        with pytest.raises(R.RaterError, match="at least 2"):
            R.RatingsTable(np.array([[1, 0], [0, 1]]))

    def test_negative_rejected(self):
        with pytest.raises(R.RaterError, match="negative"):
            R.RatingsTable(np.array([[3, -1], [1, 1]]))

    def test_shape_properties(self):
        t = R.RatingsTable(np.array([[2, 1], [0, 3], [1, 2]]))
        assert t.n_items == 3 and t.n_raters == 3


class TestFleissKappa:
    def test_unanimous_is_one(self):
        t = R.RatingsTable(np.array([[3, 0], [0, 3], [3, 0], [0, 3]]))
        assert R.fleiss_kappa(t).kappa == 1.0

    def test_one_third_case(self):
        # two raters on three items: agree real, split, agree fake
        t = R.RatingsTable(np.array([[2, 0], [1, 1], [0, 2]]))
        assert R.fleiss_kappa(t).kappa == pytest.approx(1 / 3, abs=1e-12)

    def test_full_disagreement_is_minus_one(self):
        t = R.RatingsTable(np.array([[1, 1], [1, 1], [1, 1]]))
        assert R.fleiss_kappa(t).kappa == -1.0

    def test_single_category_undefined(self):
        t = R.RatingsTable(np.array([[2, 0], [2, 0]]))
        res = R.fleiss_kappa(t)
        assert res.kappa is None
        assert res.display() == R.UNDEFINED

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(7)
        counts = rng.multinomial(4, [0.5, 0.5], size=12)
        k1 = R.fleiss_kappa(R.RatingsTable(counts)).kappa
        k2 = R.fleiss_kappa(R.RatingsTable(counts[:, ::-1])).kappa
        assert k1 == pytest.approx(k2, abs=1e-12)

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n_items = int(rng.integers(2, 20))
            n = int(rng.integers(2, 7))
            k = int(rng.integers(2, 5))
            counts = rng.multinomial(n, np.ones(k) / k, size=n_items)
            res = R.fleiss_kappa(R.RatingsTable(counts, tuple(range(k))))
            if res.kappa is not None:
                assert res.kappa <= 1.0 + 1e-12

    def test_matches_independent_implementation(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            n_items = int(rng.integers(2, 25))
            n = int(rng.integers(2, 7))
            k = int(rng.integers(2, 5))
            p = rng.dirichlet(np.ones(k))
            counts = rng.multinomial(n, p, size=n_items)
            ours = R.fleiss_kappa(R.RatingsTable(counts, tuple(range(k)))).kappa
            ref = independent_kappa(counts)
            if ref is None:
                assert ours is None
            else:
                assert ours == pytest.approx(ref, abs=1e-12)


def make_export(seed, raters=None, n_real=50, n_fake=30):
    """Synthetic study export: every rater labels every item."""
    if raters is None:
        raters = [("d1", "DLE"), ("d2", "DLE"), ("d3", "DLE"),
                  ("e1", "ED"), ("e2", "ED")]
    rng = np.random.default_rng(seed)
    items = [(f"item{i:03d}", "real") for i in range(n_real)] + \
            [(f"item{i + n_real:03d}", "fake") for i in range(n_fake)]
    rows = []
    for pid, role in raters:
        skill = rng.uniform(0.55, 0.9)
        for item, truth in items:
            correct = rng.random() < skill
            label = truth if correct else ("fake" if truth == "real" else "real")
            rows.append({"participant": pid, "role": role, "item": item,
                         "truth": truth, "label": label})
    return rows


class TestExportParsing:
    def test_jsonl_roundtrip(self):
        rows = make_export(3)
        text = "\n".join(json.dumps(r) for r in rows) + "\n\n"
        assert R.load_export_jsonl(text) == rows

    def test_csv_roundtrip(self):
        rows = make_export(4)
        lines = [",".join(R.EXPORT_FIELDS)]
        lines += [",".join(r[k] for k in R.EXPORT_FIELDS) for r in rows]
        assert R.load_export_csv("\n".join(lines)) == rows

    def test_csv_header_checked(self):
        with pytest.raises(R.RaterError, match="header"):
            R.load_export_csv("who,what\nx,y")

    def test_jsonl_bad_line(self):
        with pytest.raises(R.RaterError, match="line 1"):
            R.load_export_jsonl("{nope")

    def test_missing_field(self):
        with pytest.raises(R.RaterError, match="missing"):
            R.load_export_jsonl(json.dumps({"participant": "p", "item": "i",
                                            "truth": "real", "label": "real"}))

    def test_bad_label_value(self):
        row = {"participant": "p", "role": "DLE", "item": "i",
               "truth": "real", "label": "dunno"}
        with pytest.raises(R.RaterError, match="label"):
            R.load_export_jsonl(json.dumps(row))


class TestBuildRatingsTable:
    def test_counts_and_subsets(self):
        rows = make_export(5)
        raters = ["d1", "d2", "d3"]
        t_all, d_all = R.build_ratings_table(rows, raters, "all")
        t_real, d_real = R.build_ratings_table(rows, raters, "real")
        t_fake, d_fake = R.build_ratings_table(rows, raters, "fake")
        assert (d_all, d_real, d_fake) == (0, 0, 0)
        assert t_all.n_items == 80 and t_real.n_items == 50
        assert t_fake.n_items == 30
        assert t_all.n_raters == 3
        # all-items table is exactly the two subsets stacked
        merged = np.concatenate([t_real.counts, t_fake.counts])
        assert sorted(map(tuple, merged)) == sorted(map(tuple, t_all.counts))

    def test_incomplete_items_dropped_and_counted(self):
        rows = make_export(6)
        rows = [r for r in rows
                if not (r["participant"] == "d2" and r["item"] == "item000")]
        table, dropped = R.build_ratings_table(rows, ["d1", "d2", "d3"], "all")
        assert dropped == 1
        assert table.n_items == 79

    def test_duplicate_response_rejected(self):
        rows = make_export(7)
        rows.append(dict(rows[0]))
        with pytest.raises(R.RaterError, match="duplicate"):
            R.build_ratings_table(rows, ["d1", "d2", "d3"], "all")

    def test_conflicting_truth_rejected(self):
        rows = make_export(8)
        rows[0] = dict(rows[0], truth="fake", label="fake")
        with pytest.raises(R.RaterError, match="conflicting truth"):
            R.build_ratings_table(rows, ["d1", "d2", "d3"], "all")

    def test_too_few_raters_rejected(self):
        with pytest.raises(R.RaterError, match="at least 2"):
            R.build_ratings_table(make_export(9), ["d1"], "all")


class TestKappaReport:
    def test_grid_shape_and_groups(self):
        grid = R.kappa_report(make_export(10))
        groups = {g for g, _ in grid.cells}
        assert groups == {"DLE", "ED", "All"}
        for g in groups:
            for s in R.SUBSETS:
                assert (g, s) in grid.cells

    def test_unanimous_export_gives_one(self):
        rows = []
        for pid in ("a", "b", "c"):
            for i in range(10):
                truth = "real" if i < 6 else "fake"
                rows.append({"participant": pid, "role": "DLE",
                             "item": f"i{i}", "truth": truth, "label": truth})
        grid = R.kappa_report(rows, groups={"DLE": {"a", "b", "c"}})
        assert grid.cells[("DLE", "all")].kappa == 1.0
        # within one truth class everyone used a single label
        assert grid.cells[("DLE", "real")].kappa is None

    def test_matches_independent_formula(self):
        raters = [(f"d{i}", "DLE") for i in range(4)] + \
                 [(f"e{i}", "ED") for i in range(4)]
        rows = make_export(12, raters=raters, n_real=50, n_fake=30)
        grid = R.kappa_report(rows)
        for (group, subset), res in grid.cells.items():
            ids = {r["participant"] for r in rows
                   if group == "All" or r["role"] == group}
            table, _ = R.build_ratings_table(rows, ids, subset)
            ref = independent_kappa(table.counts)
            assert res.kappa == pytest.approx(ref, abs=1e-12)

    def test_deterministic_json(self):
        a = R.kappa_report(make_export(13)).to_json()
        b = R.kappa_report(make_export(13)).to_json()
        assert a == b
        doc = json.loads(a)
        assert set(doc["grid"]) == {"DLE", "ED", "All"}
        assert set(doc["grid"]["DLE"]) == set(R.SUBSETS)

    def test_explicit_groups_validated(self):
        with pytest.raises(R.RaterError, match="at least 2"):
            R.kappa_report(make_export(14), groups={"solo": {"d1"}})


class TestTextTables:
    def test_confusion_table_layout(self):
        per = {"d1": R.ConfusionMatrix(tp=50, fp=26, fn=0, tn=4),
               "e1": R.ConfusionMatrix(tp=35, fp=18, fn=15, tn=12)}
        text = R.confusion_text_table(per)
        lines = text.splitlines()
        assert lines[0].split() == ["d1", "e1"]
        assert len(lines) == 8
        assert "0.675" in text and "0.587" in text
        assert "1.000" in text and "0.400" in text

    def test_kappa_table_layout(self):
        grid = R.kappa_report(make_export(15))
        text = R.kappa_text_table(grid)
        lines = text.splitlines()
        assert lines[0].split() == list(R.SUBSETS)
        assert [ln.split()[0] for ln in lines[1:]] == ["All", "DLE", "ED"]
