"""Exception types shared across modules."""


class InputError(Exception):
    """Bad user input: config files, dataset files, CLI arguments, parameter files."""


class NonFiniteLossError(RuntimeError):
    """A training step produced a non-finite value; the message names the first offending tensor."""
