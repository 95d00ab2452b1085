"""Statistical search and certification of symmetric Nash equilibria in
networks of weighted timed automata."""

__version__ = "0.1.0"
