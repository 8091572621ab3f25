"""Exception taxonomy shared by all fit modules."""


class FitError(Exception):
    """Base class for every error raised by this package."""


# --- transport ---------------------------------------------------------


class TransportError(FitError):
    """Base for infrastructure-level failures (as opposed to command failures)."""


class Unreachable(TransportError):
    """The endpoint could not be reached over the network."""


class AuthFailed(TransportError):
    """The endpoint rejected the supplied credentials."""


class Timeout(TransportError):
    """Connecting to the endpoint did not finish in time."""


class SessionClosed(TransportError):
    """exec/upload was attempted on a session that is no longer open."""


class TransportBroken(TransportError):
    """The connection dropped mid-command; the command's outcome is unknown."""


class PermissionDenied(TransportError):
    """The remote side refused to write the uploaded file."""


class UnscriptedCommand(TransportError):
    """A scripted transport in strict mode saw a command it has no reply for."""


# --- provisioning ------------------------------------------------------


class UnsupportedOS(FitError):
    """The target's OS family is unknown; no package manager binding exists."""


class NotInstallable(FitError):
    """The tool has no package for this OS family and must be staged by hand."""


class InstallFailed(FitError):
    """The install commands ran but the tool is still absent."""

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


# --- fault validation --------------------------------------------------


class InvalidParameter(FitError):
    """A fault parameter violates its invariant (names the field and why)."""


class ScopeMismatch(FitError):
    """The fault does not apply to the target's class (vm vs node)."""


class UnknownFault(FitError):
    """No fault variant is registered under the given name."""


class SelectionRequired(FitError):
    """The fault picks its own target; a command plan only exists after selection."""


# --- scenarios and campaigns -------------------------------------------


class ScenarioError(FitError):
    """Base for scenario/inventory file problems."""


class ScenarioSyntaxError(ScenarioError):
    """The file is structurally malformed (names the line)."""


class InvalidField(ScenarioError):
    """A field is unknown, duplicated, or carries an invalid value."""


class UnknownLabel(FitError):
    """A selector or whitelist entry names no known endpoint."""


class EmptyPool(FitError):
    """Random selection over an empty pool."""


class WhitelistUnreadable(FitError):
    """The whitelist file could not be read."""


class PreflightFailed(FitError):
    """Campaign validation failed before any command was issued."""


class UsageError(FitError):
    """Command line could not be parsed; carries the offending token."""
