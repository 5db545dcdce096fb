"""Process ids, checkpoint ids and message tags, plus their fresh-id supply."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class Pid:
    n: int

    def __str__(self) -> str:
        return f"p{self.n}"


@dataclass(frozen=True, order=True)
class Tau:
    n: int

    def __str__(self) -> str:
        return f"t{self.n}"


@dataclass(frozen=True, order=True)
class Tag:
    n: int

    def __str__(self) -> str:
        return f"l{self.n}"


def parse_id(text: str) -> Pid | Tau | Tag:
    kinds = {"p": Pid, "t": Tau, "l": Tag}
    try:
        return kinds[text[0]](int(text[1:]))
    except (KeyError, ValueError, IndexError):
        raise ValueError(f"not an identifier: {text!r}") from None


@dataclass(frozen=True)
class Counters:
    """Per-derivation mint counters.

    Each system snapshot carries its own counters, so branches explored from
    a common snapshot never share id state.
    """

    next_pid: int = 2
    next_tag: int = 1
    next_tau: int = 1

    def fresh_pid(self) -> tuple[Pid, Counters]:
        return Pid(self.next_pid), Counters(self.next_pid + 1, self.next_tag, self.next_tau)

    def fresh_tag(self) -> tuple[Tag, Counters]:
        return Tag(self.next_tag), Counters(self.next_pid, self.next_tag + 1, self.next_tau)

    def fresh_tau(self) -> tuple[Tau, Counters]:
        return Tau(self.next_tau), Counters(self.next_pid, self.next_tag, self.next_tau + 1)

    def minted_since(self, older: Counters) -> list[Pid | Tau | Tag]:
        out: list[Pid | Tau | Tag] = []
        out += [Pid(n) for n in range(older.next_pid, self.next_pid)]
        out += [Tau(n) for n in range(older.next_tau, self.next_tau)]
        out += [Tag(n) for n in range(older.next_tag, self.next_tag)]
        return out


INITIAL_PID = Pid(1)
