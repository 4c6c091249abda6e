# nodes.py

class Node:
    """Base class for all config syntax tree nodes."""
    pass

class Number(Node):
    """Represents a literal integer or float value."""
    def __init__(self, token):
        self.token = token
        self.value = token[1]

class StringLiteral(Node):
    """Represents a quoted string or a bare word such as a policy name."""
    def __init__(self, token):
        self.token = token
        self.value = token[1]

class BooleanLiteral(Node):
    """Represents a boolean literal."""
    def __init__(self, token):
        self.token = token
        self.value = token[1]

class TupleLiteral(Node):
    """Represents a tuple literal, e.g. (50, 50)."""
    def __init__(self, start_token, elements):
        self.token = start_token
        self.elements = elements

class Section(Node):
    """Represents a section header such as [reward]."""
    def __init__(self, name_token):
        self.token = name_token
        self.name = name_token[1].lower()

class Assign(Node):
    """Represents one KEY = value line."""
    def __init__(self, key_token, expr):
        self.token = key_token
        self.key = key_token[1]
        self.expr = expr

    @property
    def line(self):
        return self.token[2]
