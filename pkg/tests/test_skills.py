import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oneshot_lfd.harness import shipped_trace_path
from oneshot_lfd.segmentation import segment_demonstration
from oneshot_lfd.skills import (
    CONTACT_MAKERS, ContradictoryLabels, Policy, PolicyStep, SegmentFeatureVector, SkillClass, TransitionTable,
    UnknownTransition, build_policy, canonical_vectors, default_transitions, default_tree, insert_transitions,
    load_label_table, train_tree,
)
from oneshot_lfd.trace import load_trace

S = SkillClass


def step_of(cls, start="a", goal="b"):
    return PolicyStep(cls, goal, start, 1, "cucumber", 0, 10, np.zeros((2, 3)))


def test_default_tree_fits_labels_and_ignores_object_id():
    tree = default_tree()
    assert tree.train_accuracy == 1.0
    for cls, v in canonical_vectors().items():
        for oid in (1, 3, 5, 42):
            x = SegmentFeatureVector(v.phi, v.psi, v.uX, v.prev_class, oid)
            assert tree.predict(x) is cls
    assert all(n.feature != 4 for n in _internal(tree.root))


def _internal(node):
    if node.is_leaf:
        return []
    return [node, *_internal(node.left), *_internal(node.right)]


def test_every_class_reachable():
    assert {leaf.label for leaf in default_tree().leaves()} == set(SkillClass)


def test_contradictory_rows_rejected():
    x = SegmentFeatureVector(0, 1, 0, None, 1)
    with pytest.raises(ContradictoryLabels, match="Approach / Grasp"):
        train_tree([(x, S.Approach), (x, S.Grasp)])


def test_equal_gain_tie_splits_on_lowest_feature():
    # phi and psi separate the labels equally well
    data = [(SegmentFeatureVector(0, 0, 0, None, 1), S.Approach), (SegmentFeatureVector(1, 1, 0, None, 1), S.Grasp)]
    tree = train_tree(data)
    assert tree.root.feature == 0 and tree.root.value == 0
    assert tree.depth() == 1


def test_label_table_comments_and_prev_parsing():
    rows = load_label_table("# note\nclass,phi,psi,uX,prev\nApproach,0,0,0,-\nGrasp,0,1,0,Approach\n")
    assert rows == [(S.Approach, 0, 0, 0, None), (S.Grasp, 0, 1, 0, S.Approach)]


def test_positional_to_contact_trajectory_gets_bridge():
    pol = insert_transitions([step_of(S.Approach, goal="unpeeled"), step_of(S.MoveWithContact, "unpeeled", "peeled")])
    assert pol.classes == [S.Approach, S.MoveToContact, S.MoveWithContact]
    bridge = pol.steps[1]
    assert bridge.bridge and bridge.goal_state == "unpeeled"


@pytest.mark.parametrize("a,b", [(S.Approach, S.MoveToContact), (S.MoveToContact, S.MoveWithContact),
                                 (S.MoveWithContact, S.Retract), (S.Approach, S.Transport)])
def test_no_bridge_needed(a, b):
    assert default_transitions().between(a, b) == ()


@given(st.lists(st.sampled_from(list(SkillClass)), min_size=1, max_size=8))
def test_patched_policy_never_enters_force_skill_from_free_motion(seq):
    pol = insert_transitions([step_of(c) for c in seq])
    for a, b in zip(pol.classes, pol.classes[1:]):
        assert a.force_based or not b.force_based or b in CONTACT_MAKERS
    assert [s.cls for s in pol.steps if not s.bridge] == seq


def test_missing_rule_raises_unknown_transition():
    table = TransitionTable({})
    with pytest.raises(UnknownTransition) as ei:
        insert_transitions([step_of(S.Approach), step_of(S.Grasp)], table)
    assert str(ei.value) == "no transition rule for Approach -> Grasp"


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        insert_transitions([])


def test_policy_json_roundtrip():
    trace = load_trace(shipped_trace_path())
    _, segs = segment_demonstration(trace)
    pol = build_policy(trace, segs)
    again = Policy.from_dict(json.loads(json.dumps(pol.to_dict())))
    assert again.to_dict() == pol.to_dict()
    assert again.to_text() == pol.to_text()
    assert pol.to_text().splitlines()[0].startswith("Approach unpeeled ")
