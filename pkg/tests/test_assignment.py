"""Sample selection against an independent brute-force transcription."""

import math

import numpy as np
import pytest

from smokewatch.assignment import (
    IGN,
    NEG,
    POS,
    AssignmentResult,
    CandidateSample,
    NoCandidatesError,
    assign,
    assign_arrays,
    candidate_points,
    modified_atss,
    original_atss_baseline,
    sample_score,
)
from smokewatch.geometry import BoundingBox, GridLocation, locations_for_map


# --- independent oracle: a direct transcription of the selection rules ---

def oracle_modified_atss(candidates, gt):
    """Plain-python re-derivation of the score-threshold selection."""
    scores = [c.iou_with_gt * c.confidence for c in candidates]
    n = len(scores)
    mean = sum(scores) / n
    std = math.sqrt(sum((s - mean) ** 2 for s in scores) / n)
    thr = mean + std
    positives = {c.location for c, s in zip(candidates, scores) if s >= thr}
    if not positives:
        cx, cy = gt.center
        best = max(
            zip(candidates, scores),
            key=lambda cs: (
                cs[1],
                -math.hypot(cs[0].location.x - cx, cs[0].location.y - cy),
                -cs[0].location.iy,
                -cs[0].location.ix,
            ),
        )
        positives = {best[0].location}
    ignored = {c.location for c in candidates} - positives
    return positives, ignored, thr


def make_candidates(rng, gt, stride=4, grid=16):
    locs = candidate_points(gt, locations_for_map(grid, grid, stride))
    out = []
    for loc in locs:
        out.append(
            CandidateSample(
                location=loc,
                confidence=float(rng.uniform(0, 1)),
                box=BoundingBox(loc.x - 1, loc.y - 1, loc.x + 1, loc.y + 1),
                iou_with_gt=float(rng.uniform(0, 1)),
            )
        )
    return out


class TestCandidatePoints:
    def test_full_map_box(self):
        locs = locations_for_map(4, 4, 4)
        gt = BoundingBox(0, 0, 16, 16)
        assert candidate_points(gt, locs) == locs

    def test_tiny_box_between_centers_is_empty(self):
        locs = locations_for_map(4, 4, 8)  # centers at 4, 12, 20, 28
        assert candidate_points(BoundingBox(0, 0, 3, 3), locs) == []

    def test_matches_containment_scan(self):
        rng = np.random.default_rng(0)
        locs = locations_for_map(12, 12, 4)
        for _ in range(100):
            x0, y0 = rng.uniform(0, 30, 2)
            gt = BoundingBox(x0, y0, x0 + rng.uniform(1, 20), y0 + rng.uniform(1, 20))
            expected = [p for p in locs if gt.x0 < p.x < gt.x1 and gt.y0 < p.y < gt.y1]
            assert candidate_points(gt, locs) == expected


class TestSampleScore:
    def test_values(self):
        assert sample_score(1.0, 1.0) == 1.0
        assert sample_score(0.0, 0.73) == 0.0
        assert sample_score(0.6, 0.5) == pytest.approx(0.30)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            sample_score(1.2, 0.5)


class TestModifiedAtss:
    def test_single_candidate_is_positive(self):
        gt = BoundingBox(0, 0, 8, 8)
        c = CandidateSample(
            location=GridLocation(0, 0, 8), confidence=0.3,
            box=BoundingBox(1, 1, 5, 5), iou_with_gt=0.4,
        )
        res = modified_atss([c], gt)
        assert res.positives == {c.location}
        assert res.ignored == frozenset()

    def test_known_scores(self):
        # scores [0.9, 0.8, 0.1, 0.2]: mean 0.5, pop-std ~0.35355 -> only 0.9 passes
        gt = BoundingBox(0, 0, 32, 32)
        locs = locations_for_map(2, 2, 16)
        scores = [0.9, 0.8, 0.1, 0.2]
        cands = [
            CandidateSample(location=l, confidence=s, box=BoundingBox(1, 1, 31, 31), iou_with_gt=1.0)
            for l, s in zip(locs, scores)
        ]
        res = modified_atss(cands, gt)
        assert res.threshold == pytest.approx(0.5 + math.sqrt(0.125), abs=1e-12)
        assert res.positives == {locs[0]}
        assert res.ignored == set(locs[1:])

    def test_uniform_scores_select_everything(self):
        gt = BoundingBox(0, 0, 32, 32)
        locs = locations_for_map(2, 2, 16)
        cands = [
            CandidateSample(location=l, confidence=0.5, box=BoundingBox(1, 1, 31, 31), iou_with_gt=1.0)
            for l in locs
        ]
        res = modified_atss(cands, gt)
        assert res.threshold == pytest.approx(0.5)
        assert res.positives == set(locs)

    def test_empty_candidates_raise(self):
        with pytest.raises(NoCandidatesError):
            modified_atss([], BoundingBox(0, 0, 4, 4))

    def test_forced_max_when_threshold_above_all(self):
        # {1, 1, 0}-like scores give mean+std > max, so the guard must fire
        gt = BoundingBox(0, 0, 24, 24)
        locs = locations_for_map(1, 3, 8)
        confs = [1.0, 1.0, 0.0]
        cands = [
            CandidateSample(location=l, confidence=c, box=BoundingBox(1, 1, 23, 23), iou_with_gt=1.0)
            for l, c in zip(locs, confs)
        ]
        res = modified_atss(cands, gt)
        assert res.threshold > 1.0
        # ties on score 1.0 break to the candidate nearest the center (12, 12)
        assert res.positives == {locs[1]}

    def test_oracle_equivalence_1000_instances(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 1000:
            x0, y0 = rng.uniform(0, 20, 2)
            gt = BoundingBox(x0, y0, x0 + rng.uniform(4, 40), y0 + rng.uniform(4, 40))
            cands = make_candidates(rng, gt)
            if not cands:
                continue
            res = modified_atss(cands, gt)
            exp_pos, exp_ign, exp_thr = oracle_modified_atss(cands, gt)
            assert res.positives == exp_pos
            assert res.ignored == exp_ign
            assert res.threshold == pytest.approx(exp_thr, rel=1e-12)
            checked += 1

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        gt = BoundingBox(2, 2, 40, 40)
        cands = make_candidates(rng, gt)
        res = modified_atss(cands, gt)
        shuffled = list(cands)
        rng.shuffle(shuffled)
        res2 = modified_atss(shuffled, gt)
        assert res.positives == res2.positives and res.ignored == res2.ignored

    def test_raising_confidence_keeps_positive(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            gt = BoundingBox(0, 0, 33, 33)
            cands = make_candidates(rng, gt, stride=8, grid=4)
            if not cands:
                continue
            res = modified_atss(cands, gt)
            positive = [c for c in cands if c.location in res.positives]
            target = positive[int(rng.integers(len(positive)))]
            boosted = [
                CandidateSample(
                    location=c.location,
                    confidence=min(1.0, c.confidence + float(rng.uniform(0, 1 - c.confidence + 1e-12)))
                    if c is target else c.confidence,
                    box=c.box,
                    iou_with_gt=c.iou_with_gt,
                )
                for c in cands
            ]
            res2 = modified_atss(boosted, gt)
            assert target.location in res2.positives


class TestOriginalAtssBaseline:
    def test_k_one_selects_nearest(self):
        gt = BoundingBox(0, 0, 32, 32)
        locs = locations_for_map(4, 4, 8)
        cands = [
            CandidateSample(location=l, confidence=0.5, box=BoundingBox(1, 1, 31, 31),
                            iou_with_gt=float(i) / 16)
            for i, l in enumerate(locs)
        ]
        res = original_atss_baseline(cands, gt, k=1)
        cx, cy = gt.center
        nearest = min(locs, key=lambda l: (math.hypot(l.x - cx, l.y - cy), l.iy, l.ix))
        assert res.positives == {nearest}

    def test_k_at_least_count_thresholds_all(self):
        rng = np.random.default_rng(9)
        gt = BoundingBox(0, 0, 33, 33)
        cands = make_candidates(rng, gt, stride=8, grid=4)
        res = original_atss_baseline(cands, gt, k=100)
        ious = np.array([c.iou_with_gt for c in cands])
        thr = ious.mean() + ious.std()
        expected = {c.location for c in cands if c.iou_with_gt >= thr}
        assert res.positives == expected

    def test_modified_selects_superset_on_contrast_instance(self):
        """Off-center candidates with excellent predictions: the score-based
        selector keeps them plus everything the center-based one picks."""
        gt = BoundingBox(0, 0, 16, 16)
        locs = locations_for_map(8, 8, 2)
        cx, cy = gt.center
        cands = []
        for loc in locs:
            dist = math.hypot(loc.x - cx, loc.y - cy)
            if dist <= math.sqrt(10):  # the 12 cells closest to the center
                conf, iou_v = 0.8, 0.7
            elif loc.ix <= 2 and loc.iy <= 1:  # off-center cluster tracking the object
                conf, iou_v = 0.95, 0.95
            else:
                conf, iou_v = 0.1, 0.1
            cands.append(
                CandidateSample(location=loc, confidence=conf,
                                box=BoundingBox(1, 1, 15, 15), iou_with_gt=iou_v)
            )
        modified = modified_atss(cands, gt)
        original = original_atss_baseline(cands, gt, k=9)
        print(f"\nmodified selection ({len(modified.positives)}): "
              f"{sorted((l.ix, l.iy) for l in modified.positives)}")
        print(f"original selection ({len(original.positives)}): "
              f"{sorted((l.ix, l.iy) for l in original.positives)}")
        assert original.positives < modified.positives  # strict superset
        off_center = {c.location for c in cands if c.confidence == 0.95}
        assert off_center <= modified.positives
        assert not (off_center & original.positives)


def oracle_assign(h, w, stride, gt_boxes, confidences, pred_boxes):
    """Rule-by-rule merge of per-box selections, written independently."""
    from smokewatch.geometry import iou as iou_fn

    locs = locations_for_map(h, w, stride)
    per_box = []
    for gt in gt_boxes:
        cands = []
        for i, loc in enumerate(locs):
            if gt.contains(loc.x, loc.y):
                x0, y0, x1, y1 = pred_boxes[i]
                cands.append(
                    CandidateSample(
                        location=loc, confidence=float(confidences[i]),
                        box=BoundingBox(max(x0, 0), max(y0, 0), x1, y1),
                        iou_with_gt=iou_fn(BoundingBox(max(x0, 0), max(y0, 0), x1, y1), gt),
                    )
                )
        if cands:
            pos, ign, _ = oracle_modified_atss(cands, gt)
        else:
            pos, ign = set(), set()
        per_box.append((pos, ign))

    roles = {}
    chosen = {}
    for i, loc in enumerate(locs):
        pos_boxes = [bi for bi, (p, _) in enumerate(per_box) if loc in p]
        ign_boxes = [bi for bi, (_, g) in enumerate(per_box) if loc in g]
        if pos_boxes:
            roles[loc] = POS
            chosen[loc] = min(pos_boxes, key=lambda bi: gt_boxes[bi].area)
        elif ign_boxes:
            roles[loc] = IGN
        else:
            roles[loc] = NEG
    return roles, chosen


class TestAssign:
    def _uniform_maps(self, n):
        conf = np.full(n, 0.5)
        boxes = np.tile(np.array([1.0, 1.0, 31.0, 31.0]), (n, 1))
        return conf, boxes

    def test_single_box_uniform_scores(self):
        locs = locations_for_map(8, 8, 4)
        gt = BoundingBox(4, 4, 20, 20)
        conf, boxes = self._uniform_maps(64)
        res = assign(locs, [gt], conf, boxes, grid_shape=(8, 8))
        inside = set(candidate_points(gt, locs))
        assert res.positives == inside
        assert res.negatives == set(locs) - inside
        assert res.ignored == frozenset()

    def test_disjoint_boxes_are_independent(self):
        locs = locations_for_map(8, 8, 4)
        a = BoundingBox(0, 0, 12, 12)
        b = BoundingBox(20, 20, 32, 32)
        conf, boxes = self._uniform_maps(64)
        res_both = assign(locs, [a, b], conf, boxes, grid_shape=(8, 8))
        res_a = assign(locs, [a], conf, boxes, grid_shape=(8, 8))
        res_b = assign(locs, [b], conf, boxes, grid_shape=(8, 8))
        assert res_both.positives == res_a.positives | res_b.positives
        for loc in res_a.positives:
            assert res_both.box_index[loc] == 0
        for loc in res_b.positives:
            assert res_both.box_index[loc] == 1

    def test_nested_boxes_resolve_to_smaller(self):
        locs = locations_for_map(8, 8, 4)
        outer = BoundingBox(0, 0, 32, 32)
        inner = BoundingBox(8, 8, 20, 20)
        conf, boxes = self._uniform_maps(64)
        res = assign(locs, [outer, inner], conf, boxes, grid_shape=(8, 8))
        for loc in candidate_points(inner, locs):
            assert loc in res.positives
            assert res.box_index[loc] == 1

    def test_matches_rule_by_rule_oracle(self):
        rng = np.random.default_rng(33)
        h = w = 8
        stride = 4
        locs = locations_for_map(h, w, stride)
        for _ in range(200):
            n_boxes = int(rng.integers(1, 4))
            gt_boxes = []
            for _ in range(n_boxes):
                x0, y0 = rng.uniform(0, 16, 2)
                gt_boxes.append(
                    BoundingBox(x0, y0, x0 + rng.uniform(5, 16), y0 + rng.uniform(5, 16))
                )
            conf = rng.uniform(0, 1, h * w)
            centers_x = np.tile(stride / 2 + np.arange(w) * stride, h)
            centers_y = np.repeat(stride / 2 + np.arange(h) * stride, w)
            l = rng.uniform(0.5, 10, h * w)
            t = rng.uniform(0.5, 10, h * w)
            r = rng.uniform(0.5, 10, h * w)
            b = rng.uniform(0.5, 10, h * w)
            pred = np.stack([centers_x - l, centers_y - t, centers_x + r, centers_y + b], axis=1)
            pred = np.clip(pred, 0, None)

            res = assign(locs, gt_boxes, conf, pred, grid_shape=(h, w))
            exp_roles, exp_chosen = oracle_assign(h, w, stride, gt_boxes, conf, pred)
            got_roles = {}
            for loc in locs:
                if loc in res.positives:
                    got_roles[loc] = POS
                elif loc in res.ignored:
                    got_roles[loc] = IGN
                else:
                    got_roles[loc] = NEG
            assert got_roles == exp_roles
            assert res.box_index == exp_chosen
            # partition sanity
            assert len(res.positives) + len(res.ignored) + len(res.negatives) == h * w

    def test_warmup_center_sampling(self):
        h = w = 8
        stride = 4
        gt = BoundingBox(4, 4, 28, 28)  # center (16, 16)
        conf = np.zeros(h * w)
        pred = np.tile(np.array([1.0, 1.0, 2.0, 2.0]), (h * w, 1))
        roles, gt_idx, thr = assign_arrays(h, w, stride, [gt], conf, pred, warmup=True)
        locs = locations_for_map(h, w, stride)
        for i, loc in enumerate(locs):
            if not gt.contains(loc.x, loc.y):
                assert roles[i] == NEG
            elif math.hypot(loc.x - 16, loc.y - 16) <= 1.5 * stride:
                assert roles[i] == POS
            else:
                assert roles[i] == IGN
        assert thr == [None]
