"""Interactive menu tree rendered within the USSD character budget.

Screens are numbered item lists: digits 1-8 select, 0 pops back, 9 pages
forward. Every screen fits in 182 characters; pagination packs item lines
greedily under that budget (minus a small reserve so the "Invalid choice."
re-prompt never overflows) and under the 8-items-per-page keypad limit.
Trees are data: the default tree ships in code and deployments may load a
JSON document with the same shape instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..errors import EhrError

MAX_TEXT = 182
MAX_ITEMS_PER_PAGE = 8
BACK_LINE = "0 Back"
NEXT_LINE = "9 Next"
INVALID_PREFIX = "Invalid choice."
# Headroom so prefixing INVALID_PREFIX to any page still fits MAX_TEXT.
REPROMPT_RESERVE = len(INVALID_PREFIX) + 1
PAGE_BUDGET = MAX_TEXT - REPROMPT_RESERVE


@dataclass(frozen=True)
class Navigate:
    node_id: str


@dataclass(frozen=True)
class Command:
    op: str


@dataclass(frozen=True)
class End:
    message: str


@dataclass(frozen=True)
class Prompt:
    field: str
    hint: str
    then: Union[Navigate, Command, End]


Action = Union[Navigate, Prompt, Command, End]


@dataclass(frozen=True)
class MenuItem:
    label: str
    action: Optional[Action] = None
    arg: Optional[str] = None


@dataclass(frozen=True)
class MenuNode:
    node_id: str
    title: str
    items: tuple[MenuItem, ...] = ()
    source: Optional[str] = None
    auto_select_single: bool = False


class MenuTree:
    def __init__(self, nodes: dict[str, MenuNode], root: str):
        self.nodes = nodes
        self.root = root
        self._validate()

    def node(self, node_id: str) -> MenuNode:
        return self.nodes[node_id]

    def _validate(self) -> None:
        if self.root not in self.nodes:
            raise EhrError("VALIDATION", f"root node {self.root!r} missing")
        reachable: set[str] = set()
        frontier = [self.root]
        while frontier:
            node_id = frontier.pop()
            if node_id in reachable:
                continue
            if node_id not in self.nodes:
                raise EhrError("VALIDATION", f"navigation target {node_id!r} missing")
            reachable.add(node_id)
            for item in self.nodes[node_id].items:
                frontier.extend(_targets(item.action))
        unreachable = set(self.nodes) - reachable
        if unreachable:
            raise EhrError("VALIDATION", f"unreachable nodes: {sorted(unreachable)}")
        for node in self.nodes.values():
            if len(node.title) > 120:
                raise EhrError("VALIDATION", f"title of {node.node_id!r} too long")


def _targets(action: Optional[Action]) -> list[str]:
    if isinstance(action, Navigate):
        return [action.node_id]
    if isinstance(action, Prompt):
        return _targets(action.then)
    return []


# -- rendering ----------------------------------------------------------------


def _numbered(labels: list[str]) -> list[str]:
    return [f"{index} {label}" for index, label in enumerate(labels, start=1)]


def _joined_len(parts: list[str]) -> int:
    return sum(len(part) for part in parts) + len(parts) - 1


def _fit_label(title: str, label: str) -> str:
    """Shrink a single label so title + one item + chrome fits the budget."""
    room = PAGE_BUDGET - _joined_len([title, "1 ", BACK_LINE, NEXT_LINE]) - 1
    if len(label) <= room:
        return label
    return label[: max(room - 2, 1)] + ".."


def paginate(title: str, labels: list[str]) -> list[list[str]]:
    """Greedy line packing: budget counted as if every page had a Next line."""
    if not labels:
        return [[]]
    pages: list[list[str]] = []
    index = 0
    while index < len(labels):
        page: list[str] = []
        while index < len(labels) and len(page) < MAX_ITEMS_PER_PAGE:
            label = _fit_label(title, labels[index])
            candidate = [title] + _numbered(page + [label]) + [BACK_LINE, NEXT_LINE]
            if _joined_len(candidate) <= PAGE_BUDGET or not page:
                page.append(label)
                index += 1
            else:
                break
        pages.append(page)
    return pages


def render_screen(
    title: str, labels: list[str], page: int, prefix: Optional[str] = None
) -> tuple[str, int, tuple[int, int]]:
    """Render one page; returns (text, page_count, (start, end) item span).

    Text is at most 182 characters: numbered item lines, a trailing "0 Back",
    and "9 Next" only when further pages exist.
    """
    pages = paginate(title, labels)
    if page < 0 or page >= len(pages):
        raise EhrError("PAGE_OUT_OF_RANGE", f"page {page} of {len(pages)}")
    start = sum(len(p) for p in pages[:page])
    parts: list[str] = []
    if prefix:
        parts.append(prefix)
    parts.append(title)
    parts.extend(_numbered(pages[page]))
    parts.append(BACK_LINE)
    if page < len(pages) - 1:
        parts.append(NEXT_LINE)
    text = "\n".join(parts)
    if len(text) > MAX_TEXT:  # pragma: no cover - guarded by the budget math
        raise EhrError("VALIDATION", "rendered screen exceeds the payload budget")
    return text, len(pages), (start, start + len(pages[page]))


def fill_title(title: str, context: dict) -> str:
    out = title
    for key, value in context.items():
        out = out.replace("{" + key + "}", str(value))
    return out


# -- stepping -----------------------------------------------------------------


@dataclass
class StepResult:
    text: str
    end: bool = False


@dataclass
class CommandOutcome:
    message: str
    end: bool = True


@dataclass
class StackFrame:
    node_id: str
    page: int = 0


class MenuEngine:
    """Drives one session through the tree.

    Bindings supply what the tree cannot know: dynamic item lists
    (``items_for``), prompt validation (``prompt_error``), and command
    execution (``run_command``). All store access lives behind them.
    """

    def __init__(self, tree: MenuTree, bindings):
        self.tree = tree
        self.bindings = bindings

    def enter_root(self, session) -> StepResult:
        session.menu_stack = [StackFrame(self.tree.root)]
        session.state = "MENU"
        return self._render(session)

    def render_current(self, session, prefix: Optional[str] = None) -> StepResult:
        return self._render(session, prefix=prefix)

    def step(self, session, text: str) -> StepResult:
        text = text.strip()
        if session.state == "PROMPT":
            return self._consume_prompt(session, text)
        if session.state != "MENU":
            raise EhrError("VALIDATION", f"cannot step in state {session.state}")
        if len(text) != 1 or not text.isdigit():
            return self._render(session, prefix=INVALID_PREFIX)
        if text == "0":
            session.menu_stack.pop()
            if not session.menu_stack:
                return StepResult("Goodbye.", end=True)
            return self._render(session)
        if text == "9":
            frame = session.menu_stack[-1]
            self._render(session)  # refresh page_count against current data
            if frame.page + 1 >= session.page_count:
                return self._render(session, prefix=INVALID_PREFIX)
            frame.page += 1
            return self._render(session)
        index = int(text) - 1
        items = session.current_items
        if index >= len(items) or items[index].action is None:
            return self._render(session, prefix=INVALID_PREFIX)
        item = items[index]
        return self._execute(session, item.action, item.arg)

    def _consume_prompt(self, session, value: str) -> StepResult:
        prompt_field, hint, then = session.pending_prompt
        error = self.bindings.prompt_error(prompt_field, value, session)
        if error:
            return StepResult(_clip(f"{error}\n{hint}"))
        session.context[prompt_field] = value
        session.pending_prompt = None
        session.state = "MENU"
        return self._execute(session, then, None)

    def _execute(self, session, action: Action, arg: Optional[str]) -> StepResult:
        if isinstance(action, Navigate):
            node = self.tree.node(action.node_id)
            if node.auto_select_single:
                items = [i for i in self._items(session, node) if i.action is not None]
                if len(items) == 1:
                    return self._execute(session, items[0].action, items[0].arg)
            session.menu_stack.append(StackFrame(action.node_id))
            return self._render(session)
        if isinstance(action, Prompt):
            session.pending_prompt = (action.field, action.hint, action.then)
            session.state = "PROMPT"
            return StepResult(_clip(action.hint))
        if isinstance(action, Command):
            outcome = self.bindings.run_command(action.op, session, arg)
            if outcome.end:
                return StepResult(_clip(outcome.message), end=True)
            return self._render(session, prefix=outcome.message)
        if isinstance(action, End):
            return StepResult(_clip(action.message), end=True)
        raise EhrError("VALIDATION", f"unknown action {action!r}")

    def _items(self, session, node: MenuNode) -> list[MenuItem]:
        items = list(node.items)
        if node.source is not None:
            items.extend(self.bindings.items_for(node.source, session))
        if not items:
            items.append(MenuItem("(none)"))
        return items

    def _render(self, session, prefix: Optional[str] = None) -> StepResult:
        frame = session.menu_stack[-1]
        node = self.tree.node(frame.node_id)
        items = self._items(session, node)
        title = fill_title(node.title, session.context)
        labels = [item.label for item in items]
        pages = paginate(title, labels)
        if frame.page >= len(pages):  # dynamic data may have shrunk
            frame.page = len(pages) - 1
        text, page_count, (start, end) = render_screen(title, labels, frame.page, prefix)
        session.current_items = items[start:end]
        session.page_count = page_count
        return StepResult(text)


def _clip(text: str) -> str:
    return text if len(text) <= MAX_TEXT else text[: MAX_TEXT - 2] + ".."


# -- tree construction ----------------------------------------------------------


def default_tree() -> MenuTree:
    """The shipped clinical tree: lookup, facility inbox, and help."""
    nodes = {
        "root": MenuNode(
            "root",
            "Main menu",
            (
                MenuItem(
                    "Patient lookup",
                    Prompt("patient_id", "Enter patient ID:", Navigate("patient")),
                ),
                MenuItem("My facility inbox", Navigate("inbox")),
                MenuItem("Help", Navigate("help")),
            ),
        ),
        "patient": MenuNode(
            "patient",
            "Patient {patient_id}",
            (
                MenuItem("Medical history", Navigate("history")),
                MenuItem("Prescriptions", Navigate("rx_list")),
                MenuItem("Request refill", Navigate("refill")),
                MenuItem(
                    "Record observation",
                    Prompt("observation", "Enter observation (KEY=VALUE):", Command("record_observation")),
                ),
                MenuItem("Record note", Prompt("note", "Enter note:", Command("record_note"))),
            ),
        ),
        "history": MenuNode("history", "History {patient_id}", source="history"),
        "rx_list": MenuNode("rx_list", "Prescriptions", source="prescriptions"),
        "refill": MenuNode("refill", "Pick prescription", source="refillable", auto_select_single=True),
        "inbox": MenuNode("inbox", "Facility inbox", source="inbox"),
        "help": MenuNode("help", "Help: 1-8 select, 0 back, 9 next page."),
    }
    return MenuTree(nodes, "root")


def _action_from_config(doc: dict) -> Action:
    kind = doc.get("kind")
    if kind == "navigate":
        return Navigate(doc["node"])
    if kind == "prompt":
        return Prompt(doc["field"], doc["hint"], _action_from_config(doc["then"]))
    if kind == "command":
        return Command(doc["op"])
    if kind == "end":
        return End(doc["message"])
    raise EhrError("VALIDATION", f"unknown action kind {kind!r}")


def tree_from_config(doc: dict) -> MenuTree:
    """Load a tree from its JSON document: {"root": id, "nodes": [...]}."""
    try:
        nodes = {}
        for node_doc in doc["nodes"]:
            items = tuple(
                MenuItem(
                    item["label"],
                    _action_from_config(item["action"]) if item.get("action") else None,
                )
                for item in node_doc.get("items", [])
            )
            nodes[node_doc["id"]] = MenuNode(
                node_id=node_doc["id"],
                title=node_doc["title"],
                items=items,
                source=node_doc.get("source"),
                auto_select_single=bool(node_doc.get("auto_select_single", False)),
            )
        return MenuTree(nodes, doc["root"])
    except (KeyError, TypeError) as exc:
        raise EhrError("VALIDATION", f"bad menu config: {exc}") from exc


def tree_from_file(path: str | Path) -> MenuTree:
    return tree_from_config(json.loads(Path(path).read_text(encoding="utf-8")))
