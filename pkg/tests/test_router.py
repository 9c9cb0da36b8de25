import json

import pytest
from hypothesis import given, strategies as st

from grafico.router import (
    TERMINATE,
    RoutingContext,
    RoutingFault,
    ScriptedPolicy,
    decide,
)
from grafico.schema import FieldSpec, Schema, validate_document


CALC = Schema(
    "calc_input",
    (
        FieldSpec("basis", "string"),
        FieldSpec("charge", "integer"),
    ),
)


def ctx(terminate=False):
    return RoutingContext(
        intent="run a calculation",
        executed=(),
        admissible=(("calc", CALC),),
        terminate_allowed=terminate,
    )


class TestValidateDocument:
    def test_valid(self):
        assert validate_document({"basis": "def2-SVP", "charge": 0}, CALC) == []

    def test_missing_required(self):
        violations = validate_document({"basis": "def2-SVP"}, CALC)
        assert len(violations) == 1
        assert violations[0].field == "charge"
        assert "required" in violations[0].expected

    def test_wrong_type(self):
        violations = validate_document({"basis": "x", "charge": "zero"}, CALC)
        assert violations[0].field == "charge"
        assert violations[0].expected == "integer"

    def test_bool_is_not_integer(self):
        assert validate_document({"basis": "x", "charge": True}, CALC)

    def test_constraint_range(self):
        schema = Schema("s", (FieldSpec("n", "integer", constraint={"min": 1, "max": 5}),))
        assert validate_document({"n": 3}, schema) == []
        assert validate_document({"n": 9}, schema)

    def test_enum_and_array(self):
        schema = Schema(
            "s",
            (
                FieldSpec("mode", ("enum", ["fast", "slow"])),
                FieldSpec("vec", ("array", "number", (3,)), required=False),
            ),
        )
        assert validate_document({"mode": "fast", "vec": [1, 2, 3]}, schema) == []
        assert validate_document({"mode": "other"}, schema)
        assert validate_document({"mode": "fast", "vec": [1, 2]}, schema)


class TestDecide:
    def test_valid_first_try(self):
        policy = ScriptedPolicy([{"choice": "calc", "arguments": {"basis": "sto-3g", "charge": 0}}])
        decision = decide(ctx(), policy)
        assert decision.choice == "calc"
        assert decision.arguments["basis"] == "sto-3g"

    def test_retry_after_unknown_node(self):
        policy = ScriptedPolicy(
            [
                {"choice": "nope", "arguments": {}},
                {"choice": "calc", "arguments": {"basis": "sto-3g", "charge": 0}},
            ]
        )
        assert decide(ctx(), policy).choice == "calc"

    def test_budget_exhaustion(self):
        policy = ScriptedPolicy([{"choice": "nope"}] * 10)
        with pytest.raises(RoutingFault) as err:
            decide(ctx(), policy, retry_budget=2)
        assert len(err.value.attempts) == 3

    def test_terminate_only_when_allowed(self):
        policy = ScriptedPolicy([{"choice": TERMINATE}])
        assert decide(ctx(terminate=True), policy).choice == TERMINATE
        policy = ScriptedPolicy([{"choice": TERMINATE}] * 5)
        with pytest.raises(RoutingFault):
            decide(ctx(terminate=False), policy)

    def test_feedback_carries_violations(self):
        seen = []

        def policy(c, feedback):
            seen.append(feedback)
            if feedback is None:
                return json.dumps({"choice": "calc", "arguments": {}})
            return json.dumps({"choice": "calc", "arguments": {"basis": "x", "charge": 1}})

        decide(ctx(), policy)
        assert seen[0] is None
        assert seen[1] and any(v.field == "basis" for v in seen[1])

    def test_unparseable_text_is_a_violation(self):
        policy = ScriptedPolicy(
            ["this is not json", json.dumps({"choice": "calc", "arguments": {"basis": "x", "charge": 0}})]
        )
        assert decide(ctx(), policy).choice == "calc"

    @given(
        st.lists(
            st.one_of(
                st.text(max_size=20),
                st.dictionaries(st.text(max_size=5), st.integers(), max_size=3).map(json.dumps),
            ),
            max_size=4,
        )
    )
    def test_never_surfaces_invalid_decision(self, garbage):
        good = json.dumps({"choice": "calc", "arguments": {"basis": "x", "charge": 0}})
        policy = ScriptedPolicy(list(garbage) + [good])
        try:
            decision = decide(ctx(), policy, retry_budget=len(garbage))
        except RoutingFault:
            return
        assert decision.choice == "calc"
        assert validate_document(decision.arguments, CALC) == []

    def test_deterministic_replay(self):
        script = [
            {"choice": "nope"},
            {"choice": "calc", "arguments": {"basis": "x", "charge": 0}},
        ]
        a = decide(ctx(), ScriptedPolicy(script))
        b = decide(ctx(), ScriptedPolicy(script))
        assert a == b
