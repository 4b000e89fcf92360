import logging
from packaging import version as pkg_version

# Format written into every advisory state file
STATE_FORMAT_VERSION = "1.0"


def check_state_format(found_version, supported_version=STATE_FORMAT_VERSION):
    """
    Check whether a state file written with ``found_version`` can be read.

    Args:
        found_version (str): format_version stored in the state file
        supported_version (str): format this build writes

    Returns:
        tuple: (is_compatible: bool, message: str)
    """
    logger = logging.getLogger(__name__)

    try:
        found = pkg_version.parse(str(found_version))
        supported = pkg_version.parse(supported_version)
    except pkg_version.InvalidVersion as e:
        logger.error(f"Failed to parse state format version: {e}")
        return (False, f"unreadable format_version {found_version!r}")

    if found.major != supported.major:
        return (False, f"state format {found} is not compatible with {supported}")
    if found > supported:
        # Same major: newer minor fields are ignored
        logger.warning(f"State format {found} is newer than {supported}")
    return (True, f"state format {found}")
