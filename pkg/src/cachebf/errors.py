"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario or configuration parameters."""


class InputError(ValueError):
    """Invalid call-time input (demand vectors, plans, channel shapes)."""


class DecodeIncompleteError(RuntimeError):
    """Some users could not rebuild their demanded file.

    ``missing`` maps user index -> sorted list of t-subsets whose subfile of
    the demanded file was never recovered.
    """

    def __init__(self, missing):
        self.missing = {k: sorted(v) for k, v in missing.items()}
        users = ", ".join(str(k) for k in sorted(self.missing))
        super().__init__(f"decoding incomplete for users [{users}]")


class InstanceTooLargeError(ValueError):
    pass


class InvalidBaselineError(ValueError):
    pass


class ConeError(ValueError):
    """Malformed cone block or nonconvex input to a reformulation."""


class InitializationError(RuntimeError):
    """No feasible starting point could be built."""


class SlotInfeasibleError(RuntimeError):
    def __init__(self, slot, reason=""):
        self.slot = slot
        super().__init__(f"slot {slot} infeasible" + (f": {reason}" if reason else ""))


class BudgetViolationError(RuntimeError):
    def __init__(self, user, slot, count, budget):
        self.user, self.slot, self.count, self.budget = user, slot, count, budget
        super().__init__(
            f"user {user} decodes {count} messages in slot {slot} (budget {budget})")
