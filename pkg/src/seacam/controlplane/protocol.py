"""Line protocol shared by every simulated device (TCP, newline-terminated ASCII).

::

    HELLO <device-type> <id>            -> OK <firmware>
    SET <port> ON|OFF                   -> OK <16-bit hex state>      (relay)
    GET                                 -> OK <16-bit hex state>      (relay)
    SHOW <pattern-index>                -> OK                         (projector)
    BLANK                               -> OK                         (projector)
    CAPTURE <session-id> <pattern-idx>  -> OK <nbytes>\\n<raw PGM>    (camera)
    BEAT <role> <seq>                   -> OK                         (controller peer)
    anything malformed                  -> ERR <reason>
"""

ENCODING = "ascii"
RELAY_PORTS = 16
DEVICE_TYPES = ("relay", "projector", "camera", "controller")
ROLES = ("primary", "backup")


class ProtocolError(Exception):
    """Peer answered ERR, or sent something we cannot parse."""


def encode(line):
    return (line + "\n").encode(ENCODING)


def split(line):
    if isinstance(line, bytes):
        try:
            line = line.decode(ENCODING)
        except UnicodeDecodeError as exc:
            raise ProtocolError("non-ascii line") from exc
    parts = line.strip().split()
    if not parts:
        raise ProtocolError("empty line")
    return parts[0].upper(), parts[1:]


def format_state(bits):
    return f"{bits & 0xFFFF:04X}"


def parse_state(text):
    if len(text) != 4:
        raise ProtocolError(f"bad relay state {text!r}")
    try:
        return int(text, 16)
    except ValueError as exc:
        raise ProtocolError(f"bad relay state {text!r}") from exc


def parse_ok(reply):
    """Return the OK payload tokens or raise ProtocolError for ERR/garbage."""
    verb, args = split(reply)
    if verb == "OK":
        return args
    if verb == "ERR":
        raise ProtocolError(" ".join(args) or "unspecified device error")
    raise ProtocolError(f"unexpected reply {reply!r}")


def nonneg_int(token):
    if not token.isdigit():
        raise ValueError(f"expected a nonnegative integer, got {token!r}")
    return int(token)
