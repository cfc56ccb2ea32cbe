"""Re-planning after the user diverges from the instruction in force.

The reference decisions here are deterministic so everything runs offline.
``ExternalReplanner`` sends the same two prompts to a language-model
service instead and parses its answers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

from .data_model import RecipeGraph
from .plan_builder import Plan, PlanStep
from .textmetrics import canonical_text, normalize_text, rouge_l


class ReplanError(Exception):
    pass


class NoCandidates(ReplanError):
    pass


class UnknownStep(ReplanError):
    pass


class MissingField(ReplanError):
    pass


class ProtocolError(ReplanError):
    pass


@dataclass(frozen=True)
class ReplanRequest:
    initial_plan: Plan
    completed_step_ids: tuple[str, ...]
    last_instruction: str
    divergence_feedback: str
    recipe_graph: RecipeGraph
    recipe_name: str = ""
    # remaining plan, current step first; defaults to the initial plan
    plan: Plan | None = None

    def __post_init__(self) -> None:
        unknown = set(self.completed_step_ids) - set(self.recipe_graph.step_ids)
        if unknown:
            raise UnknownStep(f"completed steps not in recipe graph: {sorted(unknown)}")

    @property
    def current_plan(self) -> Plan:
        return self.plan if self.plan is not None else self.initial_plan


@dataclass(frozen=True)
class ReplanDecision:
    performed_step_id: str
    repeat_current: bool
    updated_plan: Plan


def identify_performed_step(feedback: str, candidates: Sequence[tuple[str, str]]) -> str:
    """Candidate whose text best matches the feedback by ROUGE-L; earliest wins ties."""
    if not candidates:
        raise NoCandidates("no candidate steps to choose from")
    tokens = normalize_text(feedback)
    best_id, best = candidates[0][0], -1.0
    for step_id, text in candidates:
        ref = normalize_text(text)
        score = rouge_l(tokens, ref) if ref else 0.0
        if score > best:
            best_id, best = step_id, score
    return best_id


def instructed_step_ids(plan: Plan, instruction: str) -> tuple[str, ...]:
    key = canonical_text(instruction)
    for step in plan.steps:
        if canonical_text(step.instruction) == key or any(
                canonical_text(d) == key for d in step.descriptions):
            return tuple(r for r in step.step_refs if r is not None)
    raise UnknownStep(f"instruction {instruction!r} is not a step of the plan")


def decide_repeat_reference(request: ReplanRequest, performed: str) -> bool:
    """Repeat unless the instructed step is an ancestor of the performed step."""
    graph = request.recipe_graph
    if performed not in graph.step_ids:
        raise UnknownStep(f"performed step {performed!r} is not in the recipe graph")
    instructed = instructed_step_ids(request.initial_plan, request.last_instruction)
    if not instructed:
        raise UnknownStep(f"instruction {request.last_instruction!r} has no recipe step")
    ancestors = graph.ancestors(performed)
    return not all(sid in ancestors for sid in instructed)


def remove_steps(plan: Plan, step_ids: set[str]) -> Plan:
    steps = []
    for step in plan.steps:
        keep = [i for i, ref in enumerate(step.step_refs) if ref not in step_ids]
        if len(keep) == len(step.step_refs):
            steps.append(step)
        elif keep:
            steps.append(PlanStep(tuple(step.descriptions[i] for i in keep),
                                  tuple(step.action_ids[i] for i in keep),
                                  tuple(step.step_refs[i] for i in keep)))
    return Plan(tuple(steps), plan.origin)


def apply_replan(plan: Plan, performed: str, repeat_current: bool, graph: RecipeGraph) -> Plan:
    """Drop the performed step; without a repeat also drop all of its ancestors."""
    drop = {performed}
    if not repeat_current:
        drop |= graph.ancestors(performed)
    return remove_steps(plan, drop)


RETRIEVE_TEMPLATE = (
    "You are an expert cooking instructor. You are observing a user cooking a given recipe "
    "step by step.\n"
    "\n"
    "##INSTRUCTIONS:\n"
    "Here are the recipe steps: [recipe_steps].\n"
    "\n"
    "The last instruction that you provided to the person is: [last_instruction]. The person "
    "did not follow your instruction and performed a different recipe step by mistake which did "
    "not correspond to the provided instruction. So you provided this feedback to the person: "
    "[last_feedback]. Which recipe step did the person likely perform instead of the step in the "
    "last instruction. RETURN THE RECIPE STEP AS A PYTHON STRING. ENSURE THAT YOU OUTPUT A RECIPE "
    "STEP AND DO NOT OUTPUT ANYTHING OTHER THAN A RECIPE STEP."
)

REPEAT_TEMPLATE = (
    "You are an expert cooking assistant. You are helping a user to make [recipe_name], "
    "according to the following recipe steps: [recipe_steps].\n"
    "\n"
    "##INSTRUCTIONS:\n"
    "The user has already completed [past_completed_step_counts] steps: [past_completed_steps].\n"
    "Decide whether it is appropriate now to ask the user to [last_instructed_action], "
    "considering the effect of all the steps that the user performed.\n"
    "Your answer must begin with 'Yes' or 'No', followed by an explanation."
)

_PLACEHOLDER = re.compile(r"\[([a-z_]+)\]")


def _fill(template: str, values: dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        return values[m.group(1)]

    return _PLACEHOLDER.sub(sub, template)


def _clause(text: str) -> str:
    # the templates supply their own sentence punctuation
    return text.strip().rstrip(".!?").rstrip()


def render_replanner_prompts(request: ReplanRequest) -> tuple[str, str]:
    for name in ("recipe_name", "last_instruction", "divergence_feedback"):
        if not getattr(request, name).strip():
            raise MissingField(f"replan request has an empty {name}")
    graph = request.recipe_graph
    recipe_steps = repr([text for _, text in graph.steps])
    completed = [graph.text(sid) for sid in request.completed_step_ids]
    values = {
        "recipe_steps": recipe_steps,
        "recipe_name": request.recipe_name.strip(),
        "last_instruction": _clause(request.last_instruction),
        "last_feedback": _clause(request.divergence_feedback),
        "past_completed_step_counts": str(len(completed)),
        "past_completed_steps": repr(completed),
        "last_instructed_action": _clause(request.last_instruction),
    }
    return _fill(RETRIEVE_TEMPLATE, values), _fill(REPEAT_TEMPLATE, values)


def remaining_candidates(request: ReplanRequest) -> list[tuple[str, str]]:
    """Steps still in the plan, in plan order, excluding the instructed one."""
    try:
        instructed = set(instructed_step_ids(request.current_plan, request.last_instruction))
    except UnknownStep:
        instructed = set()
    out = []
    for step in request.current_plan.steps:
        for ref, text in zip(step.step_refs, step.descriptions):
            if ref is not None and ref not in instructed:
                out.append((ref, text))
    return out


def replan(request: ReplanRequest) -> ReplanDecision:
    """Reference re-planner: text matching plus graph reachability."""
    performed = identify_performed_step(request.divergence_feedback, remaining_candidates(request))
    repeat = decide_repeat_reference(request, performed)
    return _decision(request, performed, repeat)


def _decision(request: ReplanRequest, performed: str, repeat: bool) -> ReplanDecision:
    plan = apply_replan(request.current_plan, performed, repeat, request.recipe_graph)
    if not repeat:
        try:
            current = set(instructed_step_ids(request.current_plan, request.last_instruction))
        except UnknownStep:
            current = set()
        plan = remove_steps(plan, current)
    return ReplanDecision(performed, repeat, plan)


def parse_repeat_answer(text: str) -> bool:
    m = re.match(r"\s*[\"'*]*(yes|no)\b", text, re.IGNORECASE)
    if m is None:
        raise ProtocolError(f"answer must begin with Yes or No: {text[:60]!r}")
    return m.group(1).lower() == "yes"


def parse_step_answer(text: str, candidates: Sequence[tuple[str, str]]) -> str:
    """Map a free-text step answer (possibly a quoted Python string) to a step id."""
    answer = text.strip().strip("`").strip()
    if len(answer) >= 2 and answer[0] == answer[-1] and answer[0] in "'\"":
        answer = answer[1:-1]
    for step_id, step_text in candidates:
        if canonical_text(step_text) == canonical_text(answer) or step_id == answer:
            return step_id
    if not normalize_text(answer):
        raise ProtocolError(f"empty step answer: {text!r}")
    return identify_performed_step(answer, candidates)


class ExternalReplanner:
    """Re-planner backed by a completion function (prompt in, text out).

    The callable is typically a thin client for a hosted language model; it
    may be shared across sessions as long as it is safe to call concurrently.
    """

    def __init__(self, complete: Callable[[str], str]):
        self.complete = complete

    def __call__(self, request: ReplanRequest) -> ReplanDecision:
        prompt_1, prompt_2 = render_replanner_prompts(request)
        candidates = remaining_candidates(request)
        if not candidates:
            raise NoCandidates("no candidate steps to choose from")
        performed = parse_step_answer(self.complete(prompt_1), candidates)
        repeat = parse_repeat_answer(self.complete(prompt_2))
        return _decision(request, performed, repeat)
