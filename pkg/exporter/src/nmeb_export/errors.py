"""Exception taxonomy for the exporter."""


class ExportError(Exception):
    """Base class for everything the exporter can raise on bad input."""


class ManifestError(ExportError):
    """The post manifest itself is malformed or violates an invariant."""


class MediaError(ExportError):
    """A referenced media file cannot be decoded."""
