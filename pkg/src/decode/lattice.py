"""
Word-piece lattices built from a beam-search trace.

Nodes are label-context signatures (the full label sequence, or its length
plus the last n labels); each node remembers the first frame it appeared at.
Arc weights telescope: a node's potential is the last score seen for it, an
arc carries potential(to) - potential(from), and the start weight carries
potential(start), so a path's weight sum is its hypothesis score.

Text format:

    nodes=N<TAB>start=ID<TAB>start_weight=W<TAB>frames=f0,f1,...
    finals=ID,ID,...
    from<TAB>to<TAB>wordpiece<TAB>logweight      (one line per arc)
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

from src.utils.errors import LatticeParseError, UsageError

logger = logging.getLogger('Cascade.Decode')

Labels = Tuple[int, ...]


@dataclass(frozen=True)
class LatticeArc:
    src: int
    dst: int
    wordpiece: int
    weight: float


@dataclass
class Lattice:
    node_frames: List[int]
    arcs: List[LatticeArc] = field(default_factory=list)
    start: int = 0
    finals: List[int] = field(default_factory=list)
    start_weight: float = 0.0

    @property
    def num_nodes(self) -> int:
        return len(self.node_frames)

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def outgoing(self, node: int) -> List[LatticeArc]:
        return [arc for arc in self.arcs if arc.src == node]

    def path_score(self, labels: Sequence[int]) -> Optional[float]:
        """Weight of the path spelling `labels` from the start, or None if there is none."""
        node, total = self.start, self.start_weight
        for label in labels:
            arc = next((a for a in self.arcs if a.src == node and a.wordpiece == label), None)
            if arc is None:
                return None
            node, total = arc.dst, total + arc.weight
        return total

    def contains(self, labels: Sequence[int]) -> bool:
        return self.path_score(labels) is not None


def node_signature(labels: Labels, mode: str = 'full', ngram: int = 2) -> Hashable:
    if mode == 'full':
        return labels
    if mode == 'ngram':
        return (len(labels), labels[-ngram:] if ngram else ())
    raise UsageError(f"unknown lattice signature {mode!r} (expected 'full' or 'ngram')")


def build_lattice(trace: Sequence[Sequence[Tuple[Labels, float]]], signature: str = 'full',
                  ngram: int = 2) -> Lattice:
    """
    Merge the frame-end survivors of a beam search into a lattice.

    Each survivor contributes the arcs spelling its label sequence; arcs
    shared with earlier survivors are added once.

    Args:
        trace: Per frame, the surviving (labels, score) pairs
        signature: 'full' or 'ngram' node merging
        ngram: Context length for 'ngram'

    Returns:
        Lattice whose finals are the nodes of the last frame's survivors
    """
    ids: Dict[Hashable, int] = {}
    frames: List[int] = []
    potential: Dict[int, float] = {}
    arc_keys: Dict[Tuple[int, int, int], None] = {}

    node_labels: Dict[int, Labels] = {}

    def node(labels: Labels, t: int) -> int:
        key = node_signature(labels, signature, ngram)
        if key not in ids:
            ids[key] = len(frames)
            frames.append(t)
            node_labels[ids[key]] = labels
        return ids[key]

    start = node((), 0)
    for t, survivors in enumerate(trace):
        for labels, score in survivors:
            prev = start
            for i in range(1, len(labels) + 1):
                cur = node(tuple(labels[:i]), t)
                arc_keys.setdefault((prev, cur, int(labels[i - 1])), None)
                prev = cur
            potential[prev] = float(score)

    def phi(labels: Labels) -> float:
        # unseen intermediate nodes inherit the nearest seen ancestor
        for i in range(len(labels), -1, -1):
            value = potential.get(ids[node_signature(labels[:i], signature, ngram)])
            if value is not None:
                return value
        return 0.0

    arcs = [LatticeArc(src, dst, label, phi(node_labels[dst]) - phi(node_labels[src]))
            for (src, dst, label) in arc_keys]
    finals: List[int] = []
    if trace:
        for labels, _ in trace[-1]:
            final = ids[node_signature(tuple(labels), signature, ngram)]
            if final not in finals:
                finals.append(final)
    else:
        finals = [start]
    return Lattice(frames, arcs, start, finals, phi(()))


def format_lattice(lattice: Lattice, units: Optional[Sequence[str]] = None) -> str:
    """Readable dump: summary, then one line per arc grouped by source node."""
    lines = [f"Lattice: {lattice.num_nodes} nodes, {lattice.num_arcs} arcs, start {lattice.start}, "
             f"finals {lattice.finals}"]
    for node in range(lattice.num_nodes):
        out = lattice.outgoing(node)
        if not out:
            continue
        lines.append(f"  node {node} (frame {lattice.node_frames[node]})")
        for arc in out:
            label = units[arc.wordpiece] if units is not None and arc.wordpiece < len(units) else str(arc.wordpiece)
            lines.append(f"    -> {arc.dst:<5} {label:<12} {arc.weight:+.6f}")
    return '\n'.join(lines)


def write_lattice(lattice: Lattice, path: str) -> None:
    frames = ','.join(str(f) for f in lattice.node_frames)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"nodes={lattice.num_nodes}\tstart={lattice.start}\t"
                f"start_weight={lattice.start_weight!r}\tframes={frames}\n")
        f.write(f"finals={','.join(str(n) for n in lattice.finals)}\n")
        for arc in lattice.arcs:
            f.write(f"{arc.src}\t{arc.dst}\t{arc.wordpiece}\t{arc.weight!r}\n")


def _header_fields(line: str, lineno: int) -> Dict[str, str]:
    out = {}
    for part in line.split('\t'):
        key, sep, value = part.partition('=')
        if not sep:
            raise LatticeParseError(f"expected key=value, got {part!r}", line=lineno)
        out[key] = value
    return out


def _int_list(text: str, lineno: int, what: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',')] if text else []
    except ValueError:
        raise LatticeParseError(f"bad {what} list {text!r}", line=lineno)


def read_lattice(path: str) -> Lattice:
    """
    Parse a lattice file.

    Raises:
        LatticeParseError: malformed line (with its line number) or an arc or
            final naming a node that does not exist
    """
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    if len(lines) < 2:
        raise LatticeParseError("lattice file needs a header and a finals line", line=len(lines) + 1)

    header = _header_fields(lines[0], 1)
    missing = [k for k in ('nodes', 'start', 'start_weight', 'frames') if k not in header]
    if missing:
        raise LatticeParseError(f"header is missing {', '.join(missing)}", line=1)
    try:
        num_nodes = int(header['nodes'])
        start = int(header['start'])
        start_weight = float(header['start_weight'])
    except ValueError as e:
        raise LatticeParseError(f"bad header value: {e}", line=1)
    frames = _int_list(header['frames'], 1, 'frame')
    if len(frames) != num_nodes:
        raise LatticeParseError(f"{len(frames)} node frames for {num_nodes} nodes", line=1)
    if not 0 <= start < num_nodes:
        raise LatticeParseError(f"start node {start} does not exist", line=1)

    key, sep, value = lines[1].partition('=')
    if key != 'finals' or not sep:
        raise LatticeParseError(f"expected finals=..., got {lines[1]!r}", line=2)
    finals = _int_list(value, 2, 'final node')
    for node in finals:
        if not 0 <= node < num_nodes:
            raise LatticeParseError(f"final node {node} does not exist", line=2)

    arcs: List[LatticeArc] = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split('\t')
        if len(parts) != 4:
            raise LatticeParseError(f"expected 4 tab-separated fields, got {len(parts)}", line=lineno)
        try:
            src, dst, wordpiece = int(parts[0]), int(parts[1]), int(parts[2])
            weight = float(parts[3])
        except ValueError as e:
            raise LatticeParseError(f"bad arc field: {e}", line=lineno)
        for name, n in (('source', src), ('target', dst)):
            if not 0 <= n < num_nodes:
                raise LatticeParseError(f"arc {name} node {n} does not exist", line=lineno)
        arcs.append(LatticeArc(src, dst, wordpiece, weight))
    return Lattice(frames, arcs, start, finals, start_weight)
