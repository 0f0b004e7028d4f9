"""
Parser for scenario grid expressions such as "gamma=0:10:2; p=30,60; contamination=cellwise". Every assignment
gives a setting either a comma-separated list of values or an inclusive range start:stop:step.
"""

#  ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++   #
#  This file is part of cellrcov (cellwise Robust Regularized Covariance)                         #
#  Copyright © 2025 The cellrcov developers.                                                     #
#                                                                                                 #
#  This program is free software: you can redistribute it and/or modify it under the terms of     #
#  the GNU General Public License as published by the Free Software Foundation, either version    #
#  3 of the License, or (at your option) any later version.                                       #
#                                                                                                 #
#  This program is distributed in the hope that it will be useful, but WITHOUT ANY WARRANTY;      #
#  without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.      #
#  See the GNU General Public License for more details.                                           #
#                                                                                                 #
#  You should have received a copy of the GNU General Public License along with this program.     #
#  If not, see <http://www.gnu.org/licenses/>.                                                    #
#  ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++   #

from arpeggio.cleanpeg import ParserPEG
from arpeggio import visit_parse_tree, PTNodeVisitor, NoMatch
from .errors import ScenarioSyntaxError

#: keys that a scenario grid may vary
grid_keys = ("model", "p", "n", "contamination", "gamma", "cell_rate", "case_rate", "mixed_rate", "na_rate",
             "replications")

grammar = r"""
number = r'[+-]?([0-9]*[.])?[0-9]+([eE][+-]?[0-9]+)?'
word = r'[A-Za-z][A-Za-z0-9_]*'
key = r'[A-Za-z_][A-Za-z0-9_]*'
value = number / word
value_range = number ":" number ":" number
value_list = value ("," value)*
values = value_range / value_list
assignment = key "=" values
grid = assignment (";" assignment)* ";"? EOF
"""


class GridVisitor(PTNodeVisitor):

    def visit_number(self, node, children):
        return float(node.value)

    def visit_word(self, node, children):
        return node.value

    def visit_key(self, node, children):
        if node.value not in grid_keys:
            raise ScenarioSyntaxError("Unknown scenario key \"{}\" at position {}; expected one of {}.".format(
                node.value, node.position, ", ".join(grid_keys)))
        return node.value

    def visit_value(self, node, children):
        return children[0]

    def visit_value_range(self, node, children):
        start, stop, step = children
        if step <= 0:
            raise ScenarioSyntaxError("Range step must be positive at position {}.".format(node.position))
        values = []
        while start + len(values) * step <= stop + 1e-9 * step:
            values.append(round(start + len(values) * step, 12))
        return values

    def visit_value_list(self, node, children):
        return list(children)

    def visit_values(self, node, children):
        return children[0]

    def visit_assignment(self, node, children):
        return children[0], children[1]

    def visit_grid(self, node, children):
        out = {}
        for key, values in children:
            if key in out:
                raise ScenarioSyntaxError("Scenario key \"{}\" is assigned twice.".format(key))
            out[key] = values
        return out


_grid_parser = ParserPEG(grammar, "grid")
_grid_visitor = GridVisitor()


def parse_grid(grid_string: str) -> dict:
    """
    Parses a scenario grid expression.

    :param grid_string: e.g. "gamma=0:10:2; p=30,60; contamination=cellwise"
    :return: dictionary from setting name to the list of its values, in the order written
    :raises ScenarioSyntaxError: if the expression is malformed
    """
    try:
        parse_tree = _grid_parser.parse(grid_string)
    except NoMatch as error:
        raise ScenarioSyntaxError("Malformed scenario grid at position {}: {}".format(error.position, error)) \
            from None
    return visit_parse_tree(parse_tree, _grid_visitor)
