"""Hypothesis strategies shared by the sigma, lattice and isometry tests.

Maps are built on the grid of eighths: a base step function takes one value
per cell and every node carries the base restricted to a set of cells. A
child owns a subset of its parent's cells and siblings own disjoint subsets,
so the generated maps are separating antitone.
"""

from fractions import Fraction

from hypothesis import strategies as st

from app.enclosure import IMAG
from app.enclosure import ONE
from app.enclosure import ComplexRational
from app.sigma import ROOT
from app.sigma import Node
from app.sigma import NodeMap
from app.stepfn import DyadicSet
from app.stepfn import StepFn

CELLS = 8
VALUES = [ONE, ComplexRational(Fraction(2)), -ONE, IMAG, ComplexRational(Fraction(1, 2))]


def cell_set(cells) -> DyadicSet:
    return DyadicSet.of(*((Fraction(c, CELLS), Fraction(c + 1, CELLS)) for c in cells))


def base_functions(values=st.sampled_from(VALUES)):
    return st.lists(values, min_size=CELLS, max_size=CELLS).map(
        lambda row: StepFn.from_pieces(
            (Fraction(c, CELLS), Fraction(c + 1, CELLS), v) for c, v in enumerate(row)
        )
    )


@st.composite
def cell_layouts(draw, tree: bool = False, max_depth: int = 4, max_nodes: int = 12):
    """Node -> owned cells. Orchards get up to three top-level nodes."""
    cells: dict[Node, tuple[int, ...]] = {}
    queue: list[Node] = []

    def split(parent: Node, owned: tuple[int, ...]) -> None:
        width = draw(st.integers(0, 3))
        if not width or not owned:
            return
        owners = draw(st.lists(st.integers(-1, width - 1), min_size=len(owned), max_size=len(owned)))
        index = 0
        for i in range(width):
            mine = tuple(c for c, o in zip(owned, owners) if o == i)
            if mine and len(cells) < max_nodes:
                kid = parent + (index,)
                index += 1
                cells[kid] = mine
                queue.append(kid)

    everything = tuple(range(CELLS))
    if tree:
        cells[ROOT] = everything
        queue.append(ROOT)
    else:
        split(ROOT, everything)
        if not cells:
            cells[(0,)] = everything
            queue.append((0,))
    while queue:
        node = queue.pop(0)
        if len(node) < max_depth and len(cells) < max_nodes:
            split(node, cells[node])
    return cells


@st.composite
def separating_maps(draw, tree: bool = False, values=st.sampled_from(VALUES)):
    """A separating antitone map, with its layout of cells."""
    base = draw(base_functions(values))
    layout = draw(cell_layouts(tree=tree))
    phi = NodeMap(
        {node: base.restrict(cell_set(owned)) for node, owned in layout.items()},
        "tree" if tree else "orchard",
    )
    return phi, layout


def unit_trees():
    """Trees of indicators whose root is chi_[0,1)."""
    return separating_maps(tree=True, values=st.just(ONE)).map(lambda drawn: drawn[0])


def node_coefficients(phi: NodeMap, values=st.sampled_from([ONE, -ONE, IMAG, ComplexRational(Fraction(2))])):
    return st.dictionaries(st.sampled_from(list(phi.nodes)), values, max_size=len(phi))
