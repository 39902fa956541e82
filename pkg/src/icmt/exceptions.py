"""Exception hierarchy shared across the toolkit."""


class ICMTError(Exception):
    """Base class for all toolkit errors."""


class InputError(ICMTError):
    """Bad user input: malformed files, missing paths, invalid arguments."""


class ParseError(InputError):
    pass


class MissingImage(InputError):
    pass


class MaskEmpty(ICMTError):
    pass


class EmptyPool(InputError):
    pass


class EmptyBackgrounds(InputError):
    pass


class NoObjectsInBackground(ICMTError):
    pass


class ObjectLargerThanBackground(ICMTError):
    pass


class OutOfBounds(ICMTError):
    pass


class PlacementError(ICMTError):
    """Location tuning could not produce a complete plan for the pair."""


class Step1Exhausted(PlacementError):
    def __init__(self, attempts):
        super().__init__(f"no placement for the highest interval after {attempts} attempts")
        self.attempts = attempts


class IntervalUnsatisfiable(PlacementError):
    def __init__(self, indices, plan=None):
        super().__init__(f"no placement found for interval(s) {sorted(indices)}")
        self.indices = sorted(indices)
        self.plan = plan


class BadMagnitude(InputError):
    pass


class ProviderError(ICMTError):
    def __init__(self, status, body=""):
        super().__init__(f"provider returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


class AuthError(ProviderError):
    def __init__(self, message, status=401):
        ICMTError.__init__(self, message)
        self.status = status
        self.body = message


class RateLimited(ProviderError):
    pass


class UnlabeledIssues(ICMTError):
    def __init__(self, ids):
        super().__init__(f"{len(ids)} issue(s) without a human label: {', '.join(ids[:10])}")
        self.ids = list(ids)


class UnknownIssueId(InputError):
    def __init__(self, ids):
        super().__init__(f"labels reference unknown issue id(s): {', '.join(ids[:10])}")
        self.ids = list(ids)
