import os

from hypothesis import HealthCheck, settings

from nashsmc.model import Automaton, Edge, Location, Network, VariableDecl

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=25)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def one_clock(name="A", invariant="x <= 5", rate=1, edges=(), urgent=False, exp_rate=None):
    """A single automaton with clock ``x`` and locations L0 (start) and L1."""
    return Automaton(
        name=name,
        locations=(
            Location("L0", invariant=invariant, rates={"x": rate}, urgent=urgent, exp_rate=exp_rate),
            Location("L1"),
        ),
        initial="L0",
        clocks=("x",),
        edges=tuple(edges),
    )


def net_of(*automata, shared=(), channels=()):
    return Network(tuple(automata), tuple(shared), tuple(channels))


def broadcast_trio():
    """Component 0 emits ``go``; components 1 and 2 listen."""
    sender = Automaton(
        "S", (Location("A", invariant="x <= 1"), Location("B")), "A", clocks=("x",),
        edges=(Edge("A", "B", guard="x >= 1", sync="go!", updates="v = v + 1", label="send"),),
    )

    def listener(name, mult):
        return Automaton(
            name, (Location("W"), Location("H")), "W",
            edges=(Edge("W", "H", sync="go?", updates=f"v = v * {mult}", label="hear"),),
        )

    return net_of(sender, listener("R1", 2), listener("R2", 3),
                  shared=(VariableDecl("v", 1, 0, 100),), channels=("go",))


# one line per acceptance criterion, shown after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
