"""Stochastic graph grammar generating manipulator topologies.

Rules (applied to nonterminals until none remain):

    S -> (FingerBase . G)^m          m uniform in {1, 2, 3}
    G -> Knuckle . F
    F -> Joint . PhalanxSegment . F  |  Joint . FingerTip  |  <empty>

Each finger is a serial chain of components joined through identical
connection surfaces; multi-finger designs are a forest of such chains with
per-finger mount offsets.  Expansion is deterministic for a fixed seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DepthExceeded
from .components import ComponentKind


@dataclass
class DesignNode:
    kind: ComponentKind
    finger: int
    parent: int            # node index of the parent component, -1 for chain roots


@dataclass
class DesignGraph:
    nodes: list = field(default_factory=list)
    mount_offsets: list = field(default_factory=list)   # per finger, y offset
    nonterminals: list = field(default_factory=list)

    @property
    def finalized(self):
        return not self.nonterminals

    @property
    def n_fingers(self):
        return len(self.mount_offsets)

    def finger_chain(self, finger):
        """Node indices of one finger, root to tip."""
        return [i for i, n in enumerate(self.nodes) if n.finger == finger]

    def add(self, kind, finger, parent):
        self.nodes.append(DesignNode(kind, finger, parent))
        return len(self.nodes) - 1

    def to_json(self):
        return json.dumps({
            "nodes": [{"kind": n.kind.value, "finger": n.finger, "parent": n.parent}
                      for n in self.nodes],
            "mount_offsets": list(self.mount_offsets),
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        g = cls()
        for n in data["nodes"]:
            g.add(ComponentKind(n["kind"]), n["finger"], n["parent"])
        g.mount_offsets = [float(x) for x in data["mount_offsets"]]
        return g

    def validate_tree(self):
        for i, n in enumerate(self.nodes):
            if n.parent >= i:
                raise ValueError("parents must precede children")
            if n.parent >= 0 and self.nodes[n.parent].finger != n.finger:
                raise ValueError("chains may not cross fingers")


def default_rules():
    """The fixed rule set as (name, expansion) choices for the F nonterminal."""
    return {
        "F": [
            ("segment", [ComponentKind.JOINT, ComponentKind.PHALANX_SEGMENT, "F"]),
            ("tip", [ComponentKind.JOINT, ComponentKind.FINGER_TIP]),
            ("empty", []),
        ],
        "finger_spacing": 0.032,
    }


def expand_grammar(rules, seed, max_depth=8, n_fingers=None):
    """Expand the start symbol into a finalized DesignGraph.

    Stochastic choices (finger count, F-rule selection) are drawn from a
    seeded generator; DepthExceeded is raised if an F nonterminal survives
    max_depth rule applications.
    """
    rng = np.random.default_rng(seed)
    g = DesignGraph()
    m = int(n_fingers if n_fingers is not None else rng.integers(1, 4))
    spacing = rules.get("finger_spacing", 0.032)
    offsets = (np.arange(m) - (m - 1) / 2.0) * spacing
    g.mount_offsets = [float(o) for o in offsets]

    choices = rules["F"]
    for f in range(m):
        base = g.add(ComponentKind.FINGER_BASE, f, -1)
        cur = g.add(ComponentKind.KNUCKLE, f, base)
        depth = 0
        while True:
            if depth >= max_depth:
                raise DepthExceeded(
                    f"finger {f} still has an F nonterminal at depth {max_depth}")
            name, expansion = choices[int(rng.integers(0, len(choices)))]
            depth += 1
            again = False
            for sym in expansion:
                if sym == "F":
                    again = True
                else:
                    cur = g.add(sym, f, cur)
            if not again:
                break
    g.validate_tree()
    return g


def fixed_finger_graph(n_segments, n_fingers=1, spacing=0.032):
    """Deterministic topology: per finger, Base-Knuckle-(Joint-Phalanx)^(n-1)-Joint-Tip."""
    g = DesignGraph()
    offsets = (np.arange(n_fingers) - (n_fingers - 1) / 2.0) * spacing
    g.mount_offsets = [float(o) for o in offsets]
    for f in range(n_fingers):
        cur = g.add(ComponentKind.FINGER_BASE, f, -1)
        cur = g.add(ComponentKind.KNUCKLE, f, cur)
        for _ in range(n_segments - 1):
            cur = g.add(ComponentKind.JOINT, f, cur)
            cur = g.add(ComponentKind.PHALANX_SEGMENT, f, cur)
        cur = g.add(ComponentKind.JOINT, f, cur)
        cur = g.add(ComponentKind.FINGER_TIP, f, cur)
    return g
