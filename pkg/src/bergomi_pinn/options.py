"""Option kinds: vanilla and the eight single-barrier European options."""

from __future__ import annotations

import enum


class OptionKind(str, enum.Enum):
    CALL = "call"
    PUT = "put"
    UP_IN_CALL = "up-in-call"
    UP_OUT_CALL = "up-out-call"
    DOWN_IN_CALL = "down-in-call"
    DOWN_OUT_CALL = "down-out-call"
    UP_IN_PUT = "up-in-put"
    UP_OUT_PUT = "up-out-put"
    DOWN_IN_PUT = "down-in-put"
    DOWN_OUT_PUT = "down-out-put"

    @classmethod
    def parse(cls, value: "str | OptionKind") -> "OptionKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-").replace("and-", "")
        aliases = {"vanilla-call": "call", "vanilla-put": "put"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown option kind {value!r}") from None

    @property
    def eta(self) -> int:
        """+1 for calls, -1 for puts."""
        return 1 if self.value.endswith("call") else -1

    @property
    def is_barrier(self) -> bool:
        return self not in (OptionKind.CALL, OptionKind.PUT)

    @property
    def zeta(self) -> int:
        """+1 for up barriers, -1 for down barriers, 0 for vanillas."""
        if not self.is_barrier:
            return 0
        return 1 if self.value.startswith("up") else -1

    @property
    def is_up(self) -> bool:
        return self.zeta == 1

    @property
    def is_knock_in(self) -> bool:
        return self.is_barrier and "-in-" in self.value

    @property
    def is_knock_out(self) -> bool:
        return self.is_barrier and "-out-" in self.value

    @property
    def vanilla(self) -> "OptionKind":
        return OptionKind.CALL if self.eta == 1 else OptionKind.PUT

    @property
    def knock_in(self) -> "OptionKind":
        """The knock-in option sharing barrier direction and payoff."""
        if not self.is_barrier:
            raise ValueError(f"{self.value} has no barrier")
        return OptionKind(self.value.replace("-out-", "-in-"))

    @property
    def knock_out(self) -> "OptionKind":
        if not self.is_barrier:
            raise ValueError(f"{self.value} has no barrier")
        return OptionKind(self.value.replace("-in-", "-out-"))

    @property
    def uses_f2(self) -> bool:
        """Up-in puts and down-in calls carry the two-component barrier singular term."""
        return self.is_barrier and (self.eta == -1) == self.is_up

    def __str__(self) -> str:
        return self.value


KNOCK_IN_KINDS = (
    OptionKind.UP_IN_CALL,
    OptionKind.UP_IN_PUT,
    OptionKind.DOWN_IN_CALL,
    OptionKind.DOWN_IN_PUT,
)
