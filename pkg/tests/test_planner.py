"""Rubric scoring, candidate expansion, beam search, and agent allocation."""

from __future__ import annotations

import json
import random

import pytest

from periop.domain import Department, Plan, TaskKind
from periop.errors import ClassificationError, EmptySearchError
from periop.gateway import ScriptEntry
from periop.planner import (
    DEFAULT_WEIGHTS,
    PlannerConfig,
    PlanNode,
    beam_search_plan,
    combine_rubric,
    evaluate_plan,
    expand_candidates,
    parse_step_suggestions,
    render_plan,
    select_local_agents,
    select_task_agent,
)

from conftest import make_backend, make_patient
from tree_harness import ScriptedTree, backend_for_tree, exhaustive_best_path

TASK = TaskKind.SURGERY


def rubric_response(*values):
    names = ("task_alignment", "safety_compliance", "logical_order", "operability", "conciseness")
    return "\n".join(f"{n}: {v}" for n, v in zip(names, values))


def eval_backend(*value_rows, extra=()):
    responses = [rubric_response(*row) for row in value_rows]
    return make_backend(
        ScriptEntry(stage="planner.evaluate", responses=responses), *extra
    )


def one_step_plan(text="assess the patient"):
    return Plan.from_texts([text], TASK)


class TestEvaluatePlan:
    def test_all_ones_totals_one(self, patient):
        backend = eval_backend([1, 1, 1, 1, 1])
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert score.total == pytest.approx(1.0, abs=1e-9)

    def test_task_alignment_alone_is_its_band_maximum(self, patient):
        backend = eval_backend([1, 0, 0, 0, 0])
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert score.total == pytest.approx(0.30, abs=1e-9)

    def test_hand_dot_product(self, patient):
        backend = eval_backend([0.5, 0.8, 1.0, 0.4, 0.6])
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert score.total == pytest.approx(0.67, abs=1e-9)

    def test_sub_scores_clamped_into_unit_interval(self, patient):
        backend = eval_backend([1.7, -0.4, 0.5, 2.0, -1.0])
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert score.sub_scores() == (1.0, 0.0, 0.5, 1.0, 0.0)
        assert 0.0 <= score.total <= 1.0

    def test_total_is_recomputed_not_parsed(self, patient):
        # A lying total in the response must be ignored.
        response = rubric_response(0.5, 0.5, 0.5, 0.5, 0.5) + "\ntotal: 0.99"
        backend = make_backend(ScriptEntry(stage="planner.evaluate", responses=[response]))
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert score.total == pytest.approx(0.5, abs=1e-9)

    def test_unreadable_response_reprompts_once_then_scores_zero(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.evaluate", responses=["garbage", "still garbage"])
        )
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert backend.call_count == 2
        assert score.parse_failed is True
        assert score.total == 0.0

    def test_reprompt_recovers_when_second_answer_parses(self, patient):
        backend = make_backend(
            ScriptEntry(
                stage="planner.evaluate",
                responses=["garbage", rubric_response(1, 1, 1, 1, 1)],
            )
        )
        score = evaluate_plan(one_step_plan(), patient, TASK, backend)
        assert score.parse_failed is False
        assert score.total == pytest.approx(1.0, abs=1e-9)

    def test_empty_plan_rejected(self, patient):
        with pytest.raises(ValueError):
            evaluate_plan(Plan.empty(TASK), patient, TASK, eval_backend([1, 1, 1, 1, 1]))

    def test_totals_match_independent_dot_product_when_fuzzed(self):
        rng = random.Random(99)
        for _ in range(200):
            subs = [rng.uniform(-0.5, 1.5) for _ in range(5)]
            score = combine_rubric(subs)
            clamped = [min(1.0, max(0.0, s)) for s in subs]
            expected = sum(w * s for w, s in zip(DEFAULT_WEIGHTS, clamped))
            assert abs(score.total - expected) <= 1e-9
            assert 0.0 <= score.total <= 1.0


def root_node():
    return PlanNode(
        plan=Plan.empty(TASK), score=0.0, depth=0, parent_id=None, origin_rank=0, node_id=0
    )


class TestExpandCandidates:
    def test_two_parents_width_five_yield_up_to_ten(self, patient):
        tree = ScriptedTree(
            depth=2,
            children={
                (): ["a", "b"],
                ("a",): [f"a{i}" for i in range(5)],
                ("b",): [f"b{i}" for i in range(5)],
            },
            scores={},
        )
        paths = [("a",), ("b",)] + [("a", f"a{i}") for i in range(5)] + [
            ("b", f"b{i}") for i in range(5)
        ]
        tree.scores = {p: 0.5 for p in paths}
        backend = backend_for_tree(tree, TASK)
        config = PlannerConfig(max_steps=2, search_width=5, beam_width=2)
        level_one = expand_candidates([root_node()], patient, TASK, config, backend)
        level_two = expand_candidates(level_one, patient, TASK, config, backend)
        assert len(level_one) == 2
        assert len(level_two) == 10

    def test_single_suggestion_extends_parent_by_one_step(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["only step"]),
            ScriptEntry(stage="planner.evaluate", responses=[rubric_response(1, 1, 1, 1, 1)]),
        )
        config = PlannerConfig(max_steps=1, search_width=5, beam_width=2)
        candidates = expand_candidates([root_node()], patient, TASK, config, backend)
        assert len(candidates) == 1
        assert candidates[0].plan.step_texts() == ["only step"]
        assert candidates[0].depth == 1
        assert candidates[0].parent_id == 0

    def test_scripted_suggestions_replay_in_order(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["1. alpha\n2. beta\n3. gamma"]),
            ScriptEntry(stage="planner.evaluate", responses=[rubric_response(0.5, 0.5, 0.5, 0.5, 0.5)]),
        )
        config = PlannerConfig(max_steps=1, search_width=5, beam_width=3)
        candidates = expand_candidates([root_node()], patient, TASK, config, backend)
        assert [c.plan.steps[-1].text for c in candidates] == ["alpha", "beta", "gamma"]
        assert [c.origin_rank for c in candidates] == [0, 1, 2]

    def test_suggestions_truncated_to_search_width(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["a\nb\nc\nd\ne\nf\ng"]),
            ScriptEntry(stage="planner.evaluate", responses=[rubric_response(1, 1, 1, 1, 1)]),
        )
        config = PlannerConfig(max_steps=1, search_width=3, beam_width=2)
        candidates = expand_candidates([root_node()], patient, TASK, config, backend)
        assert len(candidates) == 3

    def test_parent_with_no_suggestions_is_skipped(self, patient, caplog):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["\n\n"]),
        )
        config = PlannerConfig(max_steps=1, search_width=3, beam_width=2)
        with caplog.at_level("WARNING"):
            candidates = expand_candidates([root_node()], patient, TASK, config, backend)
        assert candidates == []
        assert any("no step suggestions" in r.message for r in caplog.records)

    def test_mixed_depth_beam_rejected(self, patient):
        deep = PlanNode(
            plan=one_step_plan(), score=0.5, depth=1, parent_id=0, origin_rank=0, node_id=1
        )
        with pytest.raises(ValueError, match="share one depth"):
            expand_candidates([root_node(), deep], patient, TASK, PlannerConfig(), make_backend())

    def test_parse_step_suggestions_strips_markers(self):
        text = "1. first\n- second\n* third\n\n4) fourth"
        assert parse_step_suggestions(text) == ["first", "second", "third", "fourth"]


class TestBeamSearch:
    def manual_tree(self):
        # Depth 2, engineered so pruning matters: the best leaf hangs off the
        # second-best root child.
        children = {
            (): ["a", "b", "c"],
            ("a",): ["a1", "a2"],
            ("b",): ["b1"],
            ("c",): ["c1"],
        }
        scores = {
            ("a",): 0.9,
            ("b",): 0.8,
            ("c",): 0.1,
            ("a", "a1"): 0.3,
            ("a", "a2"): 0.2,
            ("b", "b1"): 0.95,
            ("c", "c1"): 0.99,
        }
        return ScriptedTree(depth=2, children=children, scores=scores)

    def run(self, tree, beam_width, search_width=3):
        config = PlannerConfig(max_steps=tree.depth, search_width=search_width, beam_width=beam_width)
        return beam_search_plan(make_patient(), TASK, config, backend_for_tree(tree, TASK))

    def test_non_pruning_width_equals_exhaustive_best(self):
        rng = random.Random(42)
        for _ in range(10):
            tree = random_tree_local(rng)
            plan, _ = self.run(tree, beam_width=50)
            assert tuple(plan.step_texts()) == exhaustive_best_path(tree)

    def test_beam_two_finds_the_cross_parent_winner(self):
        plan, trace = self.run(self.manual_tree(), beam_width=2)
        assert plan.step_texts() == ["b", "b1"]
        assert trace.final_score == pytest.approx(0.95, abs=1e-6)

    def test_single_candidate_single_step(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["the only step"]),
            ScriptEntry(stage="planner.evaluate", responses=[rubric_response(0.7, 0.7, 0.7, 0.7, 0.7)]),
        )
        config = PlannerConfig(max_steps=1, search_width=1, beam_width=1)
        plan, trace = beam_search_plan(patient, TASK, config, backend)
        assert plan.step_texts() == ["the only step"]
        assert len(trace.rounds) == 1

    def test_returned_score_is_final_beam_maximum(self):
        plan, trace = self.run(self.manual_tree(), beam_width=2)
        final_round = trace.rounds[-1]
        beam_scores = [
            c.score for c in final_round.candidates if c.node_id in final_round.beam_ids
        ]
        assert trace.final_score == max(beam_scores)

    def test_score_tie_breaks_by_origin_rank(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["first\nsecond"]),
            ScriptEntry(
                stage="planner.evaluate",
                responses=[rubric_response(0.5, 0.5, 0.5, 0.5, 0.5)],
            ),
        )
        config = PlannerConfig(max_steps=1, search_width=2, beam_width=1)
        plan, trace = beam_search_plan(patient, TASK, config, backend)
        assert plan.step_texts() == ["first"]

    def test_score_and_rank_tie_breaks_by_parent_id(self):
        children = {(): ["a", "b"], ("a",): ["a1"], ("b",): ["b1"]}
        scores = {("a",): 0.9, ("b",): 0.8, ("a", "a1"): 0.5, ("b", "b1"): 0.5}
        tree = ScriptedTree(depth=2, children=children, scores=scores)
        plan, _ = self.run(tree, beam_width=2)
        # Equal score, equal origin_rank: the lower parent id (a's child) wins.
        assert plan.step_texts() == ["a", "a1"]

    def test_prefix_property_throughout_trace(self):
        _, trace = self.run(self.manual_tree(), beam_width=2)
        by_id = {c.node_id: c for r in trace.rounds for c in r.candidates}
        for r in trace.rounds:
            for node in r.candidates:
                if node.parent_id == 0:
                    assert node.plan.step_texts()[:-1] == []
                else:
                    parent = by_id[node.parent_id]
                    assert node.plan.step_texts()[:-1] == parent.plan.step_texts()

    def test_beam_and_candidate_bounds(self):
        rng = random.Random(1)
        for _ in range(5):
            tree = random_tree_local(rng)
            config = PlannerConfig(max_steps=tree.depth, search_width=3, beam_width=2)
            _, trace = beam_search_plan(
                make_patient(), TASK, config, backend_for_tree(tree, TASK)
            )
            previous_beam = 1
            for r in trace.rounds:
                assert len(r.beam_ids) <= config.beam_width
                assert len(r.candidates) <= previous_beam * config.search_width
                previous_beam = len(r.beam_ids)

    def test_truncation_when_deeper_expansion_dies(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.expand", responses=["step one", ""], policy="cycle"),
            ScriptEntry(stage="planner.evaluate", responses=[rubric_response(0.6, 0.6, 0.6, 0.6, 0.6)]),
        )
        config = PlannerConfig(max_steps=3, search_width=1, beam_width=1)
        plan, trace = beam_search_plan(patient, TASK, config, backend)
        assert trace.truncated is True
        assert plan.step_texts() == ["step one"]

    def test_empty_search_error_when_nothing_expands(self, patient):
        backend = make_backend(ScriptEntry(stage="planner.expand", responses=[""]))
        with pytest.raises(EmptySearchError):
            beam_search_plan(patient, TASK, PlannerConfig(), backend)

    def test_trace_is_byte_identical_across_runs(self):
        tree = self.manual_tree()
        docs = []
        for _ in range(2):
            _, trace = self.run(tree, beam_width=2)
            docs.append(json.dumps(trace.to_doc(), sort_keys=True))
        assert docs[0] == docs[1]


def random_tree_local(rng):
    from tree_harness import random_tree

    return random_tree(rng, max_depth=3, max_branching=3)


class TestSelectTaskAgent:
    def test_case_analysis_description_maps_to_analysis(self):
        backend = make_backend()  # no entries: literal word short-circuits
        kind = select_task_agent(
            "perform intelligent case analysis and identify diagnostic risks", backend
        )
        assert kind is TaskKind.ANALYSIS
        assert backend.call_count == 0

    def test_literal_kind_name_short_circuits(self):
        backend = make_backend()
        assert select_task_agent("rehab", backend) is TaskKind.REHAB
        assert backend.call_count == 0

    def test_intraoperative_monitoring_classified_safety(self):
        backend = make_backend(ScriptEntry(stage="planner.classify", responses=["safety"]))
        kind = select_task_agent("monitor intraoperative risks in real time", backend)
        assert kind is TaskKind.SAFETY
        assert backend.call_count == 1

    def test_off_vocabulary_answer_reprompts_once(self):
        backend = make_backend(
            ScriptEntry(stage="planner.classify", responses=["cardiology", "risk"])
        )
        kind = select_task_agent("assess postoperative deterioration chances", backend)
        assert kind is TaskKind.RISK
        assert backend.call_count == 2

    def test_keyword_fallback_prefers_safety_over_risk(self):
        backend = make_backend(
            ScriptEntry(stage="planner.classify", responses=["nonsense", "more nonsense"])
        )
        kind = select_task_agent("monitor alarms and complication risks together", backend)
        assert kind is TaskKind.SAFETY

    def test_unclassifiable_raises(self):
        backend = make_backend(
            ScriptEntry(stage="planner.classify", responses=["nonsense", "junk"])
        )
        with pytest.raises(ClassificationError):
            select_task_agent("water the office plants", backend)

    def test_empty_description_rejected(self):
        with pytest.raises(ValueError):
            select_task_agent("   ", make_backend())


class TestSelectLocalAgents:
    def test_scripted_two_departments(self, patient):
        backend = make_backend(
            ScriptEntry(
                stage="planner.select_departments",
                responses=["cardiovascular, anesthesiology"],
            )
        )
        chosen = select_local_agents(patient, backend)
        assert chosen == {Department.CARDIOVASCULAR_MEDICINE, Department.ANESTHESIOLOGY}

    def test_unknown_names_fall_back_to_default_pair(self, patient):
        backend = make_backend(
            ScriptEntry(stage="planner.select_departments", responses=["astrology"])
        )
        chosen = select_local_agents(patient, backend)
        assert chosen == {Department.GENERAL_SURGERY, Department.ANESTHESIOLOGY}

    def test_all_eighteen_names_give_full_registry(self, patient):
        names = ", ".join(d.value.replace("_", " ") for d in Department)
        backend = make_backend(
            ScriptEntry(stage="planner.select_departments", responses=[names])
        )
        assert select_local_agents(patient, backend) == set(Department)

    def test_backend_failure_falls_back_to_default(self, patient):
        backend = make_backend()  # no entry: ScriptExhaustedError inside
        chosen = select_local_agents(patient, backend)
        assert chosen == {Department.GENERAL_SURGERY, Department.ANESTHESIOLOGY}


class TestPlannerConfig:
    def test_defaults_follow_shipped_constants(self):
        config = PlannerConfig()
        assert (config.max_steps, config.search_width, config.beam_width) == (3, 5, 2)
        assert sum(config.weights) == pytest.approx(1.0, abs=1e-9)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            PlannerConfig(weights=(0.5, 0.2, 0.2, 0.05, 0.04))

    def test_widths_must_be_positive(self):
        with pytest.raises(ValueError):
            PlannerConfig(beam_width=0)
        with pytest.raises(ValueError):
            PlannerConfig(max_steps=0)

    def test_node_depth_must_match_plan_length(self):
        with pytest.raises(ValueError):
            PlanNode(
                plan=one_step_plan(), score=0.1, depth=2, parent_id=0, origin_rank=0, node_id=1
            )
