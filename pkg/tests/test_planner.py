import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from visedit.dsl import parse_program, print_program
from visedit.errors import (
    AmbiguousSelector,
    InvalidProgramReturned,
    NoTemplateMatch,
    TransportError,
)
from visedit.planner import (
    DEFAULT_EXEMPLARS,
    Dataflow,
    PlanCandidate,
    SceneSummary,
    enumerate_orderings,
    llm_plan_request,
    plan_from_instruction,
    topological_orders,
    validate_dataflow,
)

from oracles import all_topological_orders


def scene(*segments, size=(64, 48)) -> SceneSummary:
    return SceneSummary(segments=tuple(segments), image_size=size)


TWO_DOGS = scene(("dog", (16.0, 24.0), 120), ("dog", (48.0, 24.0), 120))
TWO_PIGEONS = scene(("pigeon", (16.0, 24.0), 80), ("pigeon", (48.0, 24.0), 80))


class TestValidateDataflow:
    def test_ordered_program_gives_def_use_edges(self):
        program = parse_program(
            'A = Segment(IMAGE, "dog")\nB = Inpaint(IMAGE, A)\nC = Paste(B, A)\n')
        result = validate_dataflow(program)
        assert result.ok
        assert result.dag == Dataflow(n=3, edges=frozenset({(0, 1), (0, 2), (1, 2)}))

    def test_use_before_def_reports_each_variable(self):
        program = parse_program("A = Paste(B, C)")
        result = validate_dataflow(program)
        assert not result.ok
        errors = [d for d in result.diagnostics if d.severity == "error"]
        assert len(errors) == 2
        assert all(d.code == "UseBeforeDef" for d in errors)
        assert {"'B'" in d.message or "'C'" in d.message for d in errors} == {True}

    def test_five_line_plan_dataflow_built_by_hand(self):
        # prompt feeds the translation; segment feeds inpaint and translation;
        # both edits feed the final paste
        program = parse_program(
            'SRC0 = PG(IMAGE)\n'
            'OBJ0 = Segment(IMAGE, "left dog")\n'
            'BG0 = Inpaint(IMAGE, OBJ0)\n'
            'OBJ1 = Translate(OBJ0, SRC0, "sheep")\n'
            'OUT0 = Paste(BG0, OBJ1)\n')
        result = validate_dataflow(program)
        expected_edges = {(0, 3), (1, 2), (1, 3), (2, 4), (3, 4)}
        assert result.dag == Dataflow(n=5, edges=frozenset(expected_edges))

    def test_unused_output_is_warning_only(self):
        program = parse_program('A = PG(IMAGE)\nB = PG(IMAGE)\n')
        result = validate_dataflow(program)
        assert result.ok
        warnings = [d for d in result.diagnostics if d.severity == "warning"]
        assert len(warnings) == 1 and warnings[0].code == "UnusedOutput"


class TestTopologicalOrders:
    def test_chain_has_single_order(self):
        program = parse_program(
            'A = Segment(IMAGE, "dog")\nB = Move(A, "Left", 5)\n'
            'C = Move(B, "Up", 3)\nD = Scale(C, 2)\nE = Paste(IMAGE, D)\n')
        candidate = PlanCandidate(program=program,
                                 dataflow=validate_dataflow(program).dag,
                                 provenance="template:test")
        orders = enumerate_orderings(candidate, limit=10)
        assert len(orders) == 1
        assert orders[0] == program

    def test_two_independent_segments_give_two_orders(self):
        program = parse_program(
            'A = Segment(IMAGE, "left dog")\nB = Segment(IMAGE, "right dog")\n'
            'C = Swap(IMAGE, A, B)\n')
        candidate = PlanCandidate(program=program,
                                 dataflow=validate_dataflow(program).dag,
                                 provenance="template:test")
        orders = enumerate_orderings(candidate, limit=10)
        assert len(orders) == 2
        assert orders[0] == program
        assert orders[1].statements == (program.statements[1], program.statements[0],
                                        program.statements[2])

    def test_original_order_is_element_zero(self):
        orders = topological_orders(4, {(0, 2), (1, 3)}, limit=100)
        assert orders[0] == (0, 1, 2, 3)

    def test_limit_respected_without_duplicates(self):
        orders = topological_orders(6, set(), limit=10)
        assert len(orders) == 10
        assert len(set(orders)) == 10

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_exhaustive_against_brute_force_small(self, n):
        pairs = list(itertools.combinations(range(n), 2))
        for bits in range(2 ** len(pairs)):
            edges = {pairs[i] for i in range(len(pairs)) if bits >> i & 1}
            got = topological_orders(n, edges, limit=10_000)
            want = all_topological_orders(n, edges)
            assert got == want, (n, edges)

    @pytest.mark.parametrize("seed", range(4))
    def test_random_dags_up_to_six_nodes(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            pairs = list(itertools.combinations(range(n), 2))
            edges = {p for p in pairs if rng.random() < 0.4}
            got = topological_orders(n, edges, limit=10_000)
            assert got == all_topological_orders(n, edges)


class TestPlanFromInstruction:
    def test_change_template_pipeline(self):
        candidates = plan_from_instruction("change the left dog to a sheep", TWO_DOGS)
        assert candidates[0].provenance == "template:change"
        ops = [s.op_name for s in candidates[0].program.statements]
        assert ops == ["PG", "Segment", "Inpaint", "Translate", "Paste"]
        printed = print_program(candidates[0].program)
        assert '"left dog"' in printed and '"sheep"' in printed

    def test_swap_template(self):
        candidates = plan_from_instruction("swap the left pigeon and the right pigeon",
                                           TWO_PIGEONS)
        assert candidates[0].program.statements[-1].op_name == "Swap"

    def test_empty_instruction(self):
        with pytest.raises(NoTemplateMatch):
            plan_from_instruction("", TWO_DOGS)

    def test_gibberish_instruction(self):
        with pytest.raises(NoTemplateMatch):
            plan_from_instruction("frobnicate the quux", TWO_DOGS)

    def test_unpositioned_selector_with_two_matches_is_ambiguous(self):
        with pytest.raises(AmbiguousSelector):
            plan_from_instruction("change the dog to a sheep", TWO_DOGS)

    def test_unpositioned_selector_with_zero_matches_is_ambiguous(self):
        with pytest.raises(AmbiguousSelector):
            plan_from_instruction("change the horse to a sheep", TWO_DOGS)

    def test_alternate_orderings_follow_base_plan(self):
        candidates = plan_from_instruction("change the left woman to an astronaut",
                                           scene(("woman", (10.0, 10.0), 50),
                                                 ("woman", (40.0, 10.0), 50)))
        assert len(candidates) >= 2
        assert candidates[0].provenance == "template:change"
        assert candidates[1].provenance.startswith("reordering:change:")
        # the plans differ in the relative order of Inpaint and Translate
        orderings = {tuple(s.op_name for s in c.program.statements) for c in candidates}
        assert any(o.index("Inpaint") < o.index("Translate") for o in orderings)
        assert any(o.index("Translate") < o.index("Inpaint") for o in orderings)

    def test_every_candidate_round_trips_and_validates(self):
        instructions = [
            ("change the left dog to a sheep", TWO_DOGS),
            ("move the left dog right by 20%", TWO_DOGS),
            ("enlarge the left pigeon", TWO_PIGEONS),
            ("shrink the right pigeon by 0.5", TWO_PIGEONS),
            ("swap the left dog and the right dog", TWO_DOGS),
            ("remove the left dog", TWO_DOGS),
        ]
        for instruction, sc in instructions:
            for candidate in plan_from_instruction(instruction, sc):
                printed = print_program(candidate.program)
                assert parse_program(printed) == candidate.program
                assert validate_dataflow(candidate.program).ok

    def test_move_amount_defaults_to_ten_percent(self):
        candidates = plan_from_instruction("move the left dog right", TWO_DOGS)
        move = next(s for s in candidates[0].program.statements if s.op_name == "Move")
        assert move.args[2].value == 6  # 10% of width 64, round half up

    def test_deterministic(self):
        a = plan_from_instruction("change the left dog to a sheep", TWO_DOGS)
        b = plan_from_instruction("change the left dog to a sheep", TWO_DOGS)
        assert a == b


class _PlannerEndpoint:
    """Local HTTP stub that records request bodies."""

    def __init__(self, reply: dict, status: int = 200):
        self.requests: list[dict] = []
        endpoint_self = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                endpoint_self.requests.append(json.loads(self.rfile.read(length)))
                data = json.dumps(reply).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/plan"

    def __enter__(self):
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


CANNED = 'OBJ0 = Segment(IMAGE, "left dog")\nOUT0 = Inpaint(IMAGE, OBJ0)\n'


class TestLlmPlanRequest:
    def test_valid_program_accepted(self):
        with _PlannerEndpoint({"program": CANNED}) as ep:
            program = llm_plan_request("remove the left dog", DEFAULT_EXEMPLARS, ep.url)
        assert print_program(program) == CANNED

    def test_wire_body_carries_generation_parameters(self):
        with _PlannerEndpoint({"program": CANNED}) as ep:
            llm_plan_request("remove the left dog", DEFAULT_EXEMPLARS, ep.url)
            (body,) = ep.requests
        assert body["temperature"] == 0
        assert body["max_length"] == 256
        assert body["role"] == "planner"
        assert body["instruction"] == "remove the left dog"
        assert body["exemplars"] == [[i, p] for i, p in DEFAULT_EXEMPLARS]

    def test_garbage_reply_preserved_in_error(self):
        with _PlannerEndpoint({"program": "this is not a program !!"}) as ep:
            with pytest.raises(InvalidProgramReturned) as excinfo:
                llm_plan_request("x", DEFAULT_EXEMPLARS, ep.url)
        assert excinfo.value.raw_text == "this is not a program !!"

    def test_invalid_dataflow_rejected(self):
        with _PlannerEndpoint({"program": "A = Inpaint(IMAGE, NOPE)\n"}) as ep:
            with pytest.raises(InvalidProgramReturned):
                llm_plan_request("x", DEFAULT_EXEMPLARS, ep.url)

    def test_unreachable_endpoint(self):
        with pytest.raises(TransportError):
            llm_plan_request("x", DEFAULT_EXEMPLARS, "http://127.0.0.1:9/plan",
                             timeout=0.5)

    def test_exemplars_required(self):
        with pytest.raises(InvalidProgramReturned):
            llm_plan_request("x", [], "http://127.0.0.1:9/plan")
